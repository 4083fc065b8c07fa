"""Reference computations: response-type enumeration and closed-form cdf bounds.

The type LP works with the full joint model.  A response type fixes
``D(z, a)`` for every judge ``z`` and policy state ``a``; the decision
variables are masses ``m(type, y0, y1)``.  Because it is exponential in the
number of judges it is only meant for small instances, where it certifies the
marginal LP and checks claims about which assumptions carry identifying power.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import lp
from .identify import BoundsResult, bounds_from_solutions
from .model import (
    MTR,
    AverageDisagreement,
    DataDistribution,
    KnownY0,
    KnownY1,
    ModelError,
    OutcomeDisparity,
    PairwiseDisagreement,
    PCBound,
    PolicyMonotonicity,
    PolicySpec,
    TECap,
    as_restrictions,
    require_valid,
)

POLICY_MONOTONICITY = "policy_monotonicity"
IV_MONOTONICITY = "iv_monotonicity"
POLICY_INVARIANCE = "policy_invariance"
FILTERS = (POLICY_MONOTONICITY, IV_MONOTONICITY, POLICY_INVARIANCE)

MAX_JUDGES = 8


@dataclass(eq=False)
class TypeSpace:
    """``types[t, z, a]`` is ``D(z, a)`` for response type ``t``."""

    types: np.ndarray
    filters: tuple[str, ...] = ()

    def __len__(self):
        return self.types.shape[0]

    @property
    def K(self) -> int:
        return self.types.shape[1]


def _ascending(rates, ids=None):
    rates = np.asarray(rates, dtype=float)
    keys = ids if ids is not None else list(range(rates.size))
    return sorted(range(rates.size), key=lambda i: (rates[i], str(keys[i])))


def enumerate_types(
    K: int,
    filters=(),
    leniency=None,
    policy_rates=None,
    ids=None,
    cap: int = MAX_JUDGES,
) -> TypeSpace:
    """All response types for ``K`` judges, optionally filtered.

    Parameters
    ----------
    K : int
    filters : iterable of str
        Any of ``"policy_monotonicity"`` (``D(z,1) >= D(z,0)``),
        ``"iv_monotonicity"`` (status-quo decisions are thresholds in one
        leniency order) and ``"policy_invariance"`` (all ``2K`` decisions are
        thresholds in one order).
    leniency : array, optional
        Status-quo release rates defining the leniency order (ties broken by
        ``ids``).  Defaults to judge index order.
    policy_rates : array, optional
        Counterfactual rates; with ``leniency`` they order the ``2K`` cutoffs
        under policy invariance.
    cap : int
        Refuse to enumerate beyond this many judges.
    """
    filters = tuple(filters)
    unknown = set(filters) - set(FILTERS)
    if unknown:
        raise ModelError(f"unknown type filters {unknown}")
    if K < 1:
        raise ModelError("need at least one judge")
    if K > cap:
        raise ModelError(f"type enumeration capped at K={cap}, got K={K}")
    lenient = np.arange(K, dtype=float) if leniency is None else np.asarray(leniency, dtype=float)

    if POLICY_INVARIANCE in filters:
        pr = lenient if policy_rates is None else np.asarray(policy_rates, dtype=float)
        # one common index orders all 2K cutoffs; a type releases everyone
        # whose cutoff lies above its position
        comp_rates = np.concatenate([lenient, pr])
        comp_ids = [f"{ids[z] if ids else z}|0" for z in range(K)] + [f"{ids[z] if ids else z}|1" for z in range(K)]
        order = _ascending(comp_rates, comp_ids)
        types = []
        for k in range(2 * K + 1):
            v = np.zeros(2 * K, dtype=np.int8)
            v[order[k:]] = 1
            types.append(np.stack([v[:K], v[K:]], axis=1))
        arr = np.unique(np.stack(types), axis=0)
    else:
        arr = np.array(list(itertools.product((0, 1), repeat=2 * K)), dtype=np.int8).reshape(-1, K, 2)
    keep = np.ones(arr.shape[0], dtype=bool)
    if POLICY_MONOTONICITY in filters:
        keep &= np.all(arr[:, :, 1] >= arr[:, :, 0], axis=1)
    if IV_MONOTONICITY in filters:
        order = _ascending(lenient, ids)
        d0 = arr[:, order, 0]
        keep &= np.all(np.diff(d0, axis=1) >= 0, axis=1)
    return TypeSpace(arr[keep], filters)


class _TypeLP:
    def __init__(self, data: DataDistribution, policy: PolicySpec, restrictions, ts: TypeSpace, strong_encouragement: bool):
        self.data = data
        self.res = policy.resolve(data)
        self.restrictions = as_restrictions(restrictions)
        types = ts.types
        if types.shape[1] != data.K:
            raise ModelError(f"type space has {types.shape[1]} judges, data has {data.K}")
        keep = np.ones(len(types), dtype=bool)
        if self.restrictions.has(PolicyMonotonicity):
            keep &= np.all(types[:, :, 1] >= types[:, :, 0], axis=1)
        unchanged = self.res.unchanged
        if unchanged.any():
            keep &= np.all(types[:, unchanged, 0] == types[:, unchanged, 1], axis=1)
        if strong_encouragement:
            zmax = int(np.argmax(data.release_rates))
            keep &= ~((types[:, zmax, 0] == 1)[:, None] & (types[:, :, 1] == 0)).any(axis=1)
        self.types = types[keep]
        self.n = len(data.grid)
        y = data.grid.array
        ymask = np.ones((self.n, self.n), dtype=bool)
        for r in self.restrictions:
            if isinstance(r, KnownY0):
                ymask &= (y == r.value)[:, None]
            elif isinstance(r, KnownY1):
                ymask &= (y == r.value)[None, :]
            elif isinstance(r, MTR):
                ymask &= y[None, :] >= y[:, None]
        self.ymask = ymask
        self.T = len(self.types)
        self.nv = self.T * self.n * self.n

    def idx(self):
        return np.arange(self.nv).reshape(self.T, self.n, self.n)

    def mass(self, z, a, value=1):
        """Columns where D(z, a) == value."""
        return self.idx()[self.types[:, z, a] == value].ravel()

    def build(self) -> lp.LPProblem:
        data, n = self.data, self.n
        y = data.grid.array
        idx = self.idx()
        b = lp.LPBuilder()
        b.add_variables([f"m{t}_{i0}_{i1}" for t in range(self.T) for i0 in range(n) for i1 in range(n)], 0.0, 1.0)
        zero = np.broadcast_to(~self.ymask, idx.shape)
        b.fix_zero(idx[zero])

        obj = np.zeros((self.T, n, n))
        for z, s in enumerate(self.res.objective_shares):
            d1 = self.types[:, z, 1][:, None, None]
            obj += s * (d1 * y[None, None, :] + (1 - d1) * y[None, :, None])
        b.set_objective(idx.ravel(), obj.ravel())

        for z, judge in enumerate(data.judges):
            rel1 = self.types[:, z, 0] == 1
            for i in range(n):
                b.add_row(idx[rel1][:, :, i].ravel(), 1.0, "==", judge.pmf[i, 1], "data")
                b.add_row(idx[~rel1][:, i, :].ravel(), 1.0, "==", judge.pmf[i, 0], "data")
        b.add_row(idx.ravel(), 1.0, "==", 1.0, "simplex")
        if self.res.average is None:
            for z in range(data.K):
                if not self.res.unchanged[z]:
                    b.add_row(self.mass(z, 1), 1.0, "==", self.res.rates[z], "rate")
        else:
            coef = np.zeros((self.T, n, n))
            for z, s in enumerate(data.shares):
                coef += s * self.types[:, z, 1][:, None, None]
            b.add_row(idx.ravel(), coef.ravel(), "==", self.res.average, "avg_rate")
        for r in self.restrictions:
            self._restriction(b, r)
        return b.build("max")

    def _judges(self, judges, group=None):
        if judges is not None:
            return [self.data.judge_index(j) for j in judges]
        if group is not None and self.data.members(group):
            return self.data.members(group)
        return list(range(self.data.K))

    def _group(self, group, weighted=True):
        idx = self.data.members(group)
        if not idx:
            raise ModelError(f"group {group!r} has no judges")
        w = self.data.n_cases[idx] if weighted else np.ones(len(idx))
        return idx, w / w.sum()

    def _restriction(self, b, r):
        n = self.n
        y = self.data.grid.array
        idx = self.idx()
        y1 = np.broadcast_to(y[None, None, :], idx.shape)
        t = self.types
        if isinstance(r, (PolicyMonotonicity, KnownY0, KnownY1, MTR)):
            return
        if isinstance(r, (PCBound, TECap, PairwiseDisagreement, AverageDisagreement)):
            if not self.restrictions.has(PolicyMonotonicity):
                raise ModelError(f"{type(r).__name__} requires PolicyMonotonicity")
        if isinstance(r, (PCBound, TECap)) and self.res.average is not None:
            raise ModelError(f"{type(r).__name__} needs judge-level rates")
        if isinstance(r, PCBound):
            for z in self._judges(r.judges, r.group):
                a0 = self.data.release_rates[z]
                a1 = self.res.rates[z]
                m = a1 - a0
                if m <= 1e-12:
                    continue
                rel = t[:, z, 0] == 1
                comp = (t[:, z, 0] == 0) & (t[:, z, 1] == 1)
                never = t[:, z, 1] == 0
                if a0 > 1e-12:
                    cols = np.concatenate([idx[rel].ravel(), idx[comp].ravel()])
                    vals = np.concatenate([m * y1[rel].ravel(), -a0 * y1[comp].ravel()])
                    b.add_row(cols, vals, "<=", 0.0, "pc_lower")
                if a1 < 1 - 1e-12:
                    cols = np.concatenate([idx[comp].ravel(), idx[never].ravel()])
                    vals = np.concatenate([(1 - a1) * y1[comp].ravel(), -m * y1[never].ravel()])
                    b.add_row(cols, vals, "<=", 0.0, "pc_upper")
        elif isinstance(r, TECap):
            te = np.broadcast_to(y[None, None, :] - y[None, :, None], idx.shape)
            for z in self._judges(r.judges):
                m = self.res.rates[z] - self.data.release_rates[z]
                if m <= 1e-12:
                    continue
                comp = (t[:, z, 0] == 0) & (t[:, z, 1] == 1)
                b.add_row(idx[comp].ravel(), te[comp].ravel(), "<=", r.c * m, "te_cap")
        elif isinstance(r, OutcomeDisparity):
            coef = np.zeros(idx.shape)
            for group, sign in ((r.group, 1.0), (r.benchmark, -1.0)):
                zs, w = self._group(group)
                for z, wz in zip(zs, w):
                    d1 = t[:, z, 1][:, None, None]
                    coef += sign * wz * (d1 * y[None, None, :] + (1 - d1) * y[None, :, None])
            b.add_row(idx.ravel(), coef.ravel(), "<=", r.od_bar, "od")
            b.add_row(idx.ravel(), coef.ravel(), ">=", -r.od_bar, "od")
        elif isinstance(r, PairwiseDisagreement):
            z, zp = self.data.judge_index(r.z), self.data.judge_index(r.z_prime)
            # P(D(z,a)=0, D(z',a')=1) <= delta P(D(z',a')=1)
            coef = ((t[:, z, r.a] == 0) & (t[:, zp, r.a_prime] == 1)).astype(float) - r.delta * (t[:, zp, r.a_prime] == 1)
            b.add_row(idx.ravel(), np.repeat(coef, n * n), "<=", 0.0, "disagree")
        elif isinstance(r, AverageDisagreement):
            qs, qw = self._group(r.group, r.weighted)
            bs, bw = self._group(r.benchmark, r.weighted)
            coef = np.zeros(self.T)
            for z, wz in zip(qs, qw):
                for zp, wzp in zip(bs, bw):
                    if z == zp:
                        continue
                    coef += wz * wzp * ((t[:, z, 1] == 0) & (t[:, zp, 1] == 1))
            for zp, wzp in zip(bs, bw):
                coef -= r.dp_bar * wzp * (t[:, zp, 1] == 1)
            b.add_row(idx.ravel(), np.repeat(coef, n * n), "<=", 0.0, "disagree")
        else:
            raise ModelError(f"unsupported restriction {r!r}")


def solve_type_lp(
    data: DataDistribution,
    policy: PolicySpec,
    restrictions=None,
    typespace: TypeSpace | None = None,
    strong_encouragement: bool = False,
    backend: str = "highs",
) -> BoundsResult:
    """Sharp bounds on ``theta`` from the joint response-type model.

    Parameters
    ----------
    typespace : TypeSpace, optional
        Defaults to all ``4^K`` types.  Filters such as IV monotonicity are
        applied by passing a filtered space.
    strong_encouragement : bool
        Drop types released by the most lenient judge under the status quo
        but not released by some judge under the policy.
    """
    data = require_valid(data)
    if typespace is None:
        typespace = enumerate_types(data.K)
    model = _TypeLP(data, policy, restrictions, typespace, strong_encouragement)
    p = model.build()
    lo, hi = lp.solve_pair(p, backend)
    diag = {"n_types": model.T, "n_variables": p.n_vars, "filters": list(typespace.filters)}
    return bounds_from_solutions(lo, hi, "type_lp", diag)


def type_space_for(data: DataDistribution, policy: PolicySpec, filters=()) -> TypeSpace:
    """Enumerate types with leniency orders taken from ``data`` and ``policy``."""
    res = policy.resolve(data)
    pr = res.rates if res.average is None else None
    return enumerate_types(data.K, filters, data.release_rates, pr, data.ids)


# ---------------------------------------------------------------------------
# Closed-form complier cdf bounds
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CdfBounds:
    """Bounds on the cdf of ``Y(1)`` among policy compliers on the outcome grid.

    ``F_lb <= F <= F_ub`` pointwise.  ``theta_lower`` comes from ``F_ub`` (mass
    pushed down), ``theta_upper`` from ``F_lb``.
    """

    grid: np.ndarray
    F_lb: np.ndarray
    F_ub: np.ndarray
    alpha: float
    alpha0: float
    complier_mean: tuple[float, float]
    theta: tuple[float, float]
    extras: dict = field(default_factory=dict)


def _cdf_mean(grid, F):
    pmf = np.diff(np.concatenate([[0.0], F]))
    return float(pmf @ grid)


def closed_form_cdf_bounds(data: DataDistribution, alpha: float) -> CdfBounds:
    """Complier cdf bounds for an average quota ``alpha`` when ``Y(0) = 0``.

    Uses only the most lenient judge and the aggregate released outcome
    distribution; under IV monotonicity both bounds are attained.
    """
    data = require_valid(data)
    y = data.grid.array
    a0 = data.mean_d
    if not alpha > a0:
        raise ModelError(f"alpha={alpha} must exceed the status-quo rate {a0}; the outcome is point identified")
    if alpha > 1:
        raise ModelError("alpha must be at most 1")
    zmax = int(np.argmax(data.release_rates))
    amax = float(data.release_rates[zmax])
    pmf_max = data.judges[zmax].pmf[:, 1]
    agg = data.aggregate_pmf()[:, 1]
    cdf_rel_max = np.cumsum(pmf_max) / amax if amax > 0 else np.zeros_like(y)
    cdf_rel = np.cumsum(agg) / a0 if a0 > 0 else np.zeros_like(y)

    f1_lb = cdf_rel_max * amax
    f1_ub = f1_lb + 1.0 - amax
    if a0 < 1:
        g_lb = np.clip((f1_lb - a0 * cdf_rel) / (1 - a0), 0.0, 1.0)
        g_ub = np.clip((f1_ub - a0 * cdf_rel) / (1 - a0), 0.0, 1.0)
    else:
        g_lb = g_ub = np.ones_like(y)
    scale = (1 - a0) / (alpha - a0)
    F_lb = np.maximum(scale * g_lb - (1 - alpha) / (alpha - a0), 0.0)
    F_ub = np.minimum(scale * g_ub, 1.0)
    F_lb = np.minimum(np.maximum.accumulate(F_lb), 1.0)
    F_ub = np.maximum.accumulate(F_ub)
    F_lb[-1] = F_ub[-1] = 1.0
    mean_hi = _cdf_mean(y, F_lb)
    mean_lo = _cdf_mean(y, F_ub)
    released_mean = float(agg @ y / a0) if a0 > 0 else 0.0
    base = released_mean * a0
    theta = (base + (alpha - a0) * mean_lo, base + (alpha - a0) * mean_hi)
    return CdfBounds(y, F_lb, F_ub, alpha, a0, (mean_lo, mean_hi), theta, {"z_max": data.ids[zmax], "alpha_max": amax})


# ---------------------------------------------------------------------------
# Worked example where IV monotonicity tightens complier bounds
# ---------------------------------------------------------------------------


def monotonicity_helps_example() -> DataDistribution:
    """Two judges, binary outcome; IV monotonicity sharpens complier effects."""
    third = 1.0 / 3.0
    return DataDistribution.from_tables(
        [0.0, 1.0],
        {
            "0": {(1.0, 1): third, (0.0, 1): 0.0, (1.0, 0): third, (0.0, 0): third},
            "1": {(1.0, 1): third, (0.0, 1): third, (1.0, 0): third, (0.0, 0): 0.0},
        },
        shares={"0": 0.5, "1": 0.5},
    )


def complier_effect_bounds(bounds: BoundsResult, data: DataDistribution, alpha: float) -> tuple[float, float]:
    """Map theta bounds under an average quota to complier-effect bounds."""
    mass = alpha - data.mean_d
    if mass <= 0:
        raise ModelError("no policy compliers")
    ey = data.mean_y
    return (bounds.lower - ey) / mass, (bounds.upper - ey) / mass
