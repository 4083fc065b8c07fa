"""Data model: observed judge-level distributions, policies and restrictions.

The observable object is the joint pmf ``P(Y=y, D=d | Z=z)`` for every judge
``z`` together with the judge shares ``P(Z=z)``.  Everything downstream (the
identification LP, the oracles, inference) consumes a :class:`DataDistribution`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

PROB_TOL = 1e-9

QUOTA_GROUP = "Q"
BENCHMARK_GROUP = "Qc"


class ModelError(ValueError):
    """Invalid input data or an inconsistent model definition."""


# ---------------------------------------------------------------------------
# Outcomes and observed data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OutcomeGrid:
    """Finite, strictly increasing support for the outcome."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ModelError("outcome grid must be non-empty")
        if any(not math.isfinite(v) for v in vals):
            raise ModelError("outcome grid values must be finite")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ModelError(f"outcome grid must be strictly increasing, got {vals}")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def span(self) -> float:
        return self.values[-1] - self.values[0]

    def index(self, y: float) -> int:
        for i, v in enumerate(self.values):
            if v == y or abs(v - y) <= 1e-12 * max(1.0, abs(v)):
                return i
        raise ModelError(f"outcome value {y!r} is not on the grid {self.values}")


@dataclass(frozen=True, eq=False)
class JudgeCell:
    """Observed data for one judge.

    ``pmf[i, d]`` is ``P(Y = grid[i], D = d | Z = z)``.
    """

    id: str
    share: float
    n_cases: float
    group: str
    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.array(self.pmf, dtype=float)
        if pmf.ndim != 2 or pmf.shape[1] != 2:
            raise ModelError(f"judge {self.id}: pmf must have shape (|Y|, 2), got {pmf.shape}")
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "share", float(self.share))
        object.__setattr__(self, "n_cases", float(self.n_cases))

    @property
    def release_rate(self) -> float:
        return float(self.pmf[:, 1].sum())

    def prob(self, y_index: int, d: int) -> float:
        return float(self.pmf[y_index, d])


@dataclass(frozen=True, eq=False)
class DataDistribution:
    """Observed distribution ``P`` of ``(Y, D, Z)``."""

    judges: tuple[JudgeCell, ...]
    grid: OutcomeGrid

    def __post_init__(self):
        judges = tuple(self.judges)
        if not judges:
            raise ModelError("at least one judge is required")
        ids = [j.id for j in judges]
        if len(set(ids)) != len(ids):
            raise ModelError(f"duplicate judge ids: {ids}")
        for j in judges:
            if j.pmf.shape[0] != len(self.grid):
                raise ModelError(
                    f"judge {j.id}: pmf has {j.pmf.shape[0]} outcome rows, grid has {len(self.grid)}"
                )
        object.__setattr__(self, "judges", judges)

    @classmethod
    def from_tables(
        cls,
        grid: Sequence[float],
        tables: Mapping[str, Mapping[tuple[float, int], float]],
        shares: Mapping[str, float] | None = None,
        n_cases: Mapping[str, float] | None = None,
        groups: Mapping[str, str] | None = None,
    ) -> "DataDistribution":
        """Build from ``{judge_id: {(y, d): prob}}``; missing cells are zero.

        Shares default to equal weights and caseloads to 1000 per judge.
        """
        g = OutcomeGrid(tuple(grid))
        k = len(tables)
        judges = []
        for jid, table in tables.items():
            pmf = np.zeros((len(g), 2))
            for (y, d), p in table.items():
                pmf[g.index(y), int(d)] += p
            judges.append(
                JudgeCell(
                    id=jid,
                    share=(shares or {}).get(jid, 1.0 / k),
                    n_cases=(n_cases or {}).get(jid, 1000.0),
                    group=(groups or {}).get(jid, QUOTA_GROUP),
                    pmf=pmf,
                )
            )
        return cls(tuple(judges), g)

    # -- convenience views -------------------------------------------------
    @property
    def K(self) -> int:
        return len(self.judges)

    @property
    def ids(self) -> list[str]:
        return [j.id for j in self.judges]

    @property
    def shares(self) -> np.ndarray:
        return np.array([j.share for j in self.judges])

    @property
    def n_cases(self) -> np.ndarray:
        return np.array([j.n_cases for j in self.judges])

    @property
    def groups(self) -> list[str]:
        return [j.group for j in self.judges]

    @property
    def pmf(self) -> np.ndarray:
        """Stacked pmf, shape ``(K, |Y|, 2)``."""
        return np.stack([j.pmf for j in self.judges])

    @property
    def release_rates(self) -> np.ndarray:
        return self.pmf[:, :, 1].sum(axis=1)

    @property
    def judge_mean_y(self) -> np.ndarray:
        return self.pmf.sum(axis=2) @ self.grid.array

    @property
    def mean_y(self) -> float:
        return float(self.shares @ self.judge_mean_y)

    @property
    def mean_d(self) -> float:
        return float(self.shares @ self.release_rates)

    def judge_index(self, judge_id) -> int:
        jid = str(judge_id)
        for i, j in enumerate(self.judges):
            if j.id == jid:
                return i
        raise ModelError(f"unknown judge id {judge_id!r}")

    def members(self, group: str) -> list[int]:
        return [i for i, j in enumerate(self.judges) if j.group == group]

    def aggregate_pmf(self) -> np.ndarray:
        """``P(Y=y, D=d)`` marginalised over judges."""
        return np.tensordot(self.shares, self.pmf, axes=1)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    judge: str | None
    message: str
    fatal: bool


@dataclass(frozen=True, eq=False)
class ValidationReport:
    issues: tuple[Issue, ...]
    data: DataDistribution | None

    @property
    def ok(self) -> bool:
        return not any(i.fatal for i in self.issues)

    @property
    def repaired(self) -> bool:
        return any(not i.fatal for i in self.issues)

    def raise_if_fatal(self):
        fatal = [i for i in self.issues if i.fatal]
        if fatal:
            msg = "; ".join(f"{i.judge or '<all>'}: {i.message}" for i in fatal)
            raise ModelError(f"invalid data distribution: {msg}")


def validate_instance(data: DataDistribution, tol: float = PROB_TOL) -> ValidationReport:
    """Check every invariant of ``data`` and repair what is repairable.

    Entries in ``[-tol, 0)`` are clipped to zero and pmfs/shares within ``tol``
    of unit mass are renormalised.  Anything further off is fatal.  The
    returned report carries the repaired distribution (``None`` when fatal).
    """
    issues: list[Issue] = []
    judges = []
    for j in data.judges:
        pmf = np.array(j.pmf, dtype=float)
        if not np.all(np.isfinite(pmf)):
            issues.append(Issue(j.id, "non-finite probability", True))
            judges.append(j)
            continue
        if j.n_cases < 1:
            issues.append(Issue(j.id, f"n_cases={j.n_cases} < 1", True))
        low = pmf.min()
        if low < -tol:
            issues.append(Issue(j.id, f"probability {low:.3g} below -tol", True))
        elif low < 0:
            issues.append(Issue(j.id, f"clipped negative probability {low:.3g} to 0", False))
            pmf = np.clip(pmf, 0.0, None)
        total = pmf.sum()
        if abs(total - 1.0) > tol and not (low < 0 and abs(total - 1.0) <= 2 * tol + abs(low) * pmf.size):
            issues.append(Issue(j.id, f"pmf sums to {total:.12g}", True))
        elif total != 1.0:
            if abs(total - 1.0) > 1e-15:
                issues.append(Issue(j.id, f"renormalised pmf total {total:.12g}", False))
            pmf = pmf / total
        if not (j.share >= -tol):
            issues.append(Issue(j.id, f"negative share {j.share}", True))
        judges.append(replace(j, pmf=pmf, share=max(j.share, 0.0)))
    share_total = sum(j.share for j in judges)
    if abs(share_total - 1.0) > tol:
        issues.append(Issue(None, f"judge shares sum to {share_total:.12g}", True))
    elif abs(share_total - 1.0) > 1e-15:
        issues.append(Issue(None, f"renormalised shares total {share_total:.12g}", False))
        judges = [replace(j, share=j.share / share_total) for j in judges]

    if any(i.fatal for i in issues):
        return ValidationReport(tuple(issues), None)
    return ValidationReport(tuple(issues), DataDistribution(tuple(judges), data.grid))


def require_valid(data: DataDistribution, tol: float = PROB_TOL) -> DataDistribution:
    report = validate_instance(data, tol)
    report.raise_if_fatal()
    return report.data


# ---------------------------------------------------------------------------
# Pooling and discretisation
# ---------------------------------------------------------------------------


def pool_judges(data: DataDistribution, min_cases: float, within_group: bool = True) -> DataDistribution:
    """Merge judges with fewer than ``min_cases`` cases into synthetic judges.

    Pooled pmfs are caseload-weighted averages; shares and caseloads add up.
    With ``within_group`` one pooled judge is formed per group, otherwise a
    single pooled judge (tagged with the group of the largest contributor).
    """
    if min_cases < 0:
        raise ModelError("min_cases must be non-negative")
    small = [j for j in data.judges if j.n_cases < min_cases]
    if not small:
        return data
    keep = [j for j in data.judges if j.n_cases >= min_cases]

    buckets: dict[str, list[JudgeCell]] = {}
    for j in small:
        buckets.setdefault(j.group if within_group else "*", []).append(j)

    pooled = []
    for key, members in buckets.items():
        n = np.array([m.n_cases for m in members])
        pmf = np.tensordot(n / n.sum(), np.stack([m.pmf for m in members]), axes=1)
        group = key if within_group else max(members, key=lambda m: m.n_cases).group
        jid = "pooled" if key == "*" else f"pooled_{key}"
        pooled.append(
            JudgeCell(id=jid, share=sum(m.share for m in members), n_cases=float(n.sum()), group=group, pmf=pmf)
        )
    return DataDistribution(tuple(keep + pooled), data.grid)


def discretize_outcome(data: DataDistribution, target_grid: OutcomeGrid, direction: str = "up") -> DataDistribution:
    """Move each outcome level's mass to the nearest grid point above/below.

    Rounding up yields an instance whose upper bound is conservative for the
    original outcome, rounding down one whose lower bound is.
    """
    if direction not in ("up", "down"):
        raise ModelError(f"direction must be 'up' or 'down', got {direction!r}")
    tgt = target_grid.array
    src = data.grid.array
    eps = 1e-12
    mapping = []
    for y in src:
        if direction == "up":
            idx = np.nonzero(tgt >= y - eps * max(1.0, abs(y)))[0]
            if idx.size == 0:
                raise ModelError(f"outcome {y} lies above the target grid")
            mapping.append(idx[0])
        else:
            idx = np.nonzero(tgt <= y + eps * max(1.0, abs(y)))[0]
            if idx.size == 0:
                raise ModelError(f"outcome {y} lies below the target grid")
            mapping.append(idx[-1])
    judges = []
    for j in data.judges:
        pmf = np.zeros((len(tgt), 2))
        for i, m in enumerate(mapping):
            pmf[m] += j.pmf[i]
        judges.append(replace(j, pmf=pmf))
    return DataDistribution(tuple(judges), target_grid)


def quantile_grid(data: DataDistribution, n_points: int = 20) -> OutcomeGrid:
    """Equal-quantile grid of the aggregate outcome distribution (endpoints kept)."""
    probs = data.aggregate_pmf().sum(axis=1)
    y = data.grid.array
    cdf = np.cumsum(probs)
    qs = np.linspace(0.0, 1.0, n_points)
    pts = {y[0], y[-1]}
    for q in qs[1:-1]:
        pts.add(float(y[min(np.searchsorted(cdf, q - 1e-12), len(y) - 1)]))
    return OutcomeGrid(tuple(sorted(pts)))


def assign_leniency_groups(data: DataDistribution, top_share: float = 0.1) -> DataDistribution:
    """Tag the most lenient judges (``top_share`` of cases) as the benchmark group.

    Judges are ranked by release rate (ties by id); the benchmark group is the
    smallest prefix of that ranking holding at least ``top_share`` of the
    caseload.  Everyone else is put in the quota group.
    """
    order = sorted(range(data.K), key=lambda i: (-data.release_rates[i], data.judges[i].id))
    n = data.n_cases
    total = n.sum()
    top, acc = set(), 0.0
    for i in order:
        if acc >= top_share * total - 1e-12:
            break
        top.add(i)
        acc += n[i]
    judges = [replace(j, group=BENCHMARK_GROUP if i in top else QUOTA_GROUP) for i, j in enumerate(data.judges)]
    return DataDistribution(tuple(judges), data.grid)


def group_release_rate(data: DataDistribution, group: str) -> float:
    idx = data.members(group)
    if not idx:
        raise ModelError(f"group {group!r} has no judges")
    w = data.n_cases[idx]
    return float(w @ data.release_rates[idx] / w.sum())


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

POLICY_KINDS = ("universal", "quota", "per_judge", "status_quo", "reallocation", "average")


@dataclass(frozen=True)
class PolicySpec:
    """Counterfactual treatment-assignment policy.

    ``quota`` raises every judge in ``groups`` (all judges when ``None``) to
    ``max(E[D|Z=z], q)``; ``q=None`` takes the caseload-weighted release rate
    of ``benchmark``.  ``average`` fixes only the aggregate rate
    ``P(D(Z,1)=1)``.  ``reallocation`` sends every case to judges in ``target``
    (a group name or a tuple of judge ids), who keep their status-quo rule.
    """

    kind: str
    q: float | None = None
    rates: tuple[float, ...] | None = None
    groups: tuple[str, ...] | None = None
    benchmark: str = BENCHMARK_GROUP
    target: str | tuple[str, ...] | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ModelError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")

    @classmethod
    def universal(cls):
        return cls("universal")

    @classmethod
    def status_quo(cls):
        return cls("status_quo")

    @classmethod
    def quota(cls, q=None, groups=None, benchmark=BENCHMARK_GROUP):
        return cls("quota", q=q, groups=tuple(groups) if groups else None, benchmark=benchmark)

    @classmethod
    def per_judge(cls, rates):
        return cls("per_judge", rates=tuple(float(r) for r in rates))

    @classmethod
    def average(cls, alpha):
        return cls("average", alpha=float(alpha))

    @classmethod
    def reallocation(cls, target):
        return cls("reallocation", target=target if isinstance(target, str) else tuple(target))

    def resolve(self, data: DataDistribution) -> "ResolvedPolicy":
        K = data.K
        rates0 = data.release_rates
        unchanged = np.zeros(K, dtype=bool)
        obj_shares = data.shares.copy()
        rates1 = np.full(K, np.nan)
        average = None
        if self.kind == "universal":
            rates1[:] = 1.0
        elif self.kind == "status_quo":
            unchanged[:] = True
        elif self.kind == "quota":
            q = self.q if self.q is not None else group_release_rate(data, self.benchmark)
            if not 0.0 <= q <= 1.0:
                raise ModelError(f"quota q={q} outside [0, 1]")
            subject = np.ones(K, dtype=bool) if self.groups is None else np.array(
                [g in self.groups for g in data.groups]
            )
            for i in range(K):
                if subject[i] and rates0[i] < q:
                    rates1[i] = q
                else:
                    unchanged[i] = True
        elif self.kind == "per_judge":
            if self.rates is None or len(self.rates) != K:
                raise ModelError(f"per_judge policy needs {K} rates")
            rates1[:] = self.rates
        elif self.kind == "average":
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise ModelError("average policy needs alpha in [0, 1]")
            average = float(self.alpha)
        elif self.kind == "reallocation":
            if self.target is None:
                raise ModelError("reallocation needs a target group or judge list")
            if isinstance(self.target, str):
                idx = data.members(self.target)
            else:
                idx = [data.judge_index(t) for t in self.target]
            if not idx:
                raise ModelError(f"reallocation target {self.target!r} is empty")
            unchanged[:] = True
            obj_shares = np.zeros(K)
            w = data.n_cases[idx]
            obj_shares[idx] = w / w.sum()
        fixed = ~np.isnan(rates1)
        if np.any((rates1[fixed] < 0) | (rates1[fixed] > 1)):
            raise ModelError("policy rates must lie in [0, 1]")
        rates1 = np.where(unchanged, rates0, rates1)
        return ResolvedPolicy(self, rates1, unchanged, obj_shares, average)


@dataclass(frozen=True, eq=False)
class ResolvedPolicy:
    """A policy bound to data.

    ``rates`` holds ``alpha_{1,z}`` (the status-quo rate for judges marked
    ``unchanged``, NaN under an average quota).  Unchanged judges keep
    ``D(z,1) = D(z,0)``.
    """

    spec: PolicySpec
    rates: np.ndarray
    unchanged: np.ndarray
    objective_shares: np.ndarray
    average: float | None = None

    def counterfactual_rate(self, data: DataDistribution) -> float:
        """``E[D(Z,1)]``."""
        if self.average is not None:
            return self.average
        return float(self.objective_shares @ self.rates)


# ---------------------------------------------------------------------------
# Restriction vocabulary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyMonotonicity:
    """``D(z,1) >= D(z,0)`` for every judge."""


@dataclass(frozen=True)
class KnownY0:
    value: float = 0.0


@dataclass(frozen=True)
class KnownY1:
    value: float = 0.0


@dataclass(frozen=True)
class MTR:
    """Monotone treatment response, ``Y(1) >= Y(0)``."""


@dataclass(frozen=True)
class PairwiseDisagreement:
    """``P(D(z,a)=0 | D(z',a')=1) <= delta``."""

    z: str
    z_prime: str
    a: int = 1
    a_prime: int = 1
    delta: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ModelError(f"delta must be in [0, 1], got {self.delta}")
        if self.a not in (0, 1) or self.a_prime not in (0, 1):
            raise ModelError("policy indices a, a' must be 0 or 1")
        object.__setattr__(self, "z", str(self.z))
        object.__setattr__(self, "z_prime", str(self.z_prime))


@dataclass(frozen=True)
class AverageDisagreement:
    """``P(D(Z_Q,1)=0 | D(Z_Qc,1)=1) <= dp_bar`` for randomly drawn judges."""

    dp_bar: float
    group: str = QUOTA_GROUP
    benchmark: str = BENCHMARK_GROUP
    weighted: bool = True

    def __post_init__(self):
        if not 0.0 <= self.dp_bar <= 1.0:
            raise ModelError(f"dp_bar must be in [0, 1], got {self.dp_bar}")


@dataclass(frozen=True)
class PCBound:
    """Policy compliers are riskier than the released, safer than the never released.

    ``judges=None`` applies the bound to every judge in ``group`` (every judge
    when nobody carries that tag).
    """

    judges: tuple[str, ...] | None = None
    group: str = QUOTA_GROUP


@dataclass(frozen=True)
class TECap:
    """``E[Y(1) - Y(0) | D(z,0) < D(z,1)] <= c``."""

    c: float
    judges: tuple[str, ...] | None = None

    def __post_init__(self):
        if not math.isfinite(self.c):
            raise ModelError("treatment-effect cap must be finite")


@dataclass(frozen=True)
class OutcomeDisparity:
    """``|E[Y(D(Z_Q,1)) - Y(D(Z_Qc,1))]| <= od_bar``."""

    od_bar: float
    group: str = QUOTA_GROUP
    benchmark: str = BENCHMARK_GROUP

    def __post_init__(self):
        if self.od_bar < 0:
            raise ModelError("od_bar must be non-negative")


RestrictionSpec = (
    PolicyMonotonicity
    | KnownY0
    | KnownY1
    | MTR
    | PairwiseDisagreement
    | AverageDisagreement
    | PCBound
    | TECap
    | OutcomeDisparity
)


@dataclass(frozen=True)
class RestrictionSet:
    items: tuple = field(default_factory=tuple)

    def __init__(self, items: Iterable = ()):
        object.__setattr__(self, "items", tuple(items))

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def has(self, kind: type) -> bool:
        return any(isinstance(r, kind) for r in self.items)

    def of(self, kind: type) -> list:
        return [r for r in self.items if isinstance(r, kind)]

    def with_(self, *extra) -> "RestrictionSet":
        return RestrictionSet(self.items + tuple(extra))

    def without(self, kind: type) -> "RestrictionSet":
        return RestrictionSet(r for r in self.items if not isinstance(r, kind))


def as_restrictions(restrictions) -> RestrictionSet:
    if restrictions is None:
        return RestrictionSet()
    if isinstance(restrictions, RestrictionSet):
        return restrictions
    return RestrictionSet(restrictions)
