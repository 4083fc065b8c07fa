"""Identified set for the average counterfactual outcome via the marginal LP.

Decision variables are the per-judge marginals
``pi_z(y0, y1, d0, d1) = P(Y(0)=y0, Y(1)=y1, D(z,0)=d0, D(z,1)=d1)``.  The
feasible set collects all marginals that reproduce the observed data, share a
common ``(Y(0), Y(1))`` distribution across judges, are valid pmfs and meet
the policy's release rates.  Minimising and maximising
``theta = E[Y(D(Z,1))]`` over it gives the endpoints of the identified set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import lp
from .model import (
    DataDistribution,
    KnownY0,
    ModelError,
    PolicySpec,
    ResolvedPolicy,
    RestrictionSet,
    as_restrictions,
    require_valid,
)
from .restrictions import ConstraintBlock, compile_restriction

EMPTY = "empty"
OK = "ok"


@dataclass(eq=False)
class BoundsResult:
    """Endpoints of an identified set.

    ``status`` is ``"ok"`` when both endpoints solved, ``"empty"`` when the
    constraints are infeasible (the model is rejected by the data), and
    otherwise the failing solver status.
    """

    lower: float
    upper: float
    status: str
    status_lower: str = lp.OPTIMAL
    status_upper: str = lp.OPTIMAL
    argmin: np.ndarray | None = None
    argmax: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    method: str = "marginal_lp"

    @property
    def empty(self) -> bool:
        return self.status == EMPTY

    @property
    def ok(self) -> bool:
        return self.status == OK

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def __repr__(self):
        if self.empty:
            return f"BoundsResult(empty, method={self.method})"
        return f"BoundsResult([{self.lower:.6g}, {self.upper:.6g}], status={self.status}, method={self.method})"


def bounds_from_solutions(lo: lp.LPSolution, hi: lp.LPSolution, method: str, diagnostics=None) -> BoundsResult:
    diagnostics = dict(diagnostics or {})
    if lo.status == lp.INFEASIBLE or hi.status == lp.INFEASIBLE:
        return BoundsResult(np.nan, np.nan, EMPTY, lo.status, hi.status, diagnostics=diagnostics, method=method)
    if lo.optimal and hi.optimal:
        status = OK
    else:
        status = lo.status if not lo.optimal else hi.status
    return BoundsResult(
        lo.value if lo.optimal else (lo.value if lo.status == lp.UNBOUNDED else np.nan),
        hi.value if hi.optimal else (hi.value if hi.status == lp.UNBOUNDED else np.nan),
        status,
        lo.status,
        hi.status,
        lo.x,
        hi.x,
        diagnostics,
        method,
    )


class IdentifyProblem:
    """Column layout and context for the marginal LP.

    The marginal of judge ``z`` at ``(y0, y1, d0, d1)`` (outcome indices
    ``i0``, ``i1``) lives in column ``((z * n + i0) * n + i1) * 4 + 2 * d0 + d1``.
    """

    def __init__(self, data: DataDistribution, policy: PolicySpec, restrictions=None):
        self.data = data
        self.policy = policy
        self.restrictions: RestrictionSet = as_restrictions(restrictions)
        self.resolved: ResolvedPolicy = policy.resolve(data)
        self.n = len(data.grid)
        self.K = data.K
        self.n_pi = 4 * self.n * self.n * self.K
        self._cells = np.arange(self.n_pi).reshape(self.K, self.n, self.n, 2, 2)

    def col(self, z, i0, i1, d0, d1) -> int:
        return int(self._cells[z, i0, i1, d0, d1])

    def cells(self, z) -> np.ndarray:
        return self._cells[z]

    def variable_names(self) -> list[str]:
        ids = self.data.ids
        n = self.n
        return [
            f"π[{ids[z]}][{i0}][{i1}][{d0}][{d1}]"
            for z in range(self.K)
            for i0 in range(n)
            for i1 in range(n)
            for d0 in (0, 1)
            for d1 in (0, 1)
        ]

    def theta_coefficients(self) -> np.ndarray:
        """Objective ``sum_z s_z E[Y(D(z,1)) | z]`` over the marginal columns."""
        y = self.data.grid.array
        per = np.zeros((self.n, self.n, 2, 2))
        per[:, :, :, 1] = y[None, :, None]
        per[:, :, :, 0] = y[:, None, None]
        return np.concatenate([s * per.ravel() for s in self.resolved.objective_shares])

    def status_quo_coefficients(self) -> np.ndarray:
        """``E[Y] = sum_z P(z) E[Y(D(z,0)) | z]`` as a function of the marginals."""
        y = self.data.grid.array
        per = np.zeros((self.n, self.n, 2, 2))
        per[:, :, 1, :] = y[None, :, None]
        per[:, :, 0, :] = y[:, None, None]
        return np.concatenate([s * per.ravel() for s in self.data.shares])

    def release_coefficients(self, a: int, shares=None) -> np.ndarray:
        """``sum_z w_z P(D(z,a)=1)`` over the marginal columns (``w`` defaults to shares)."""
        w = self.data.shares if shares is None else shares
        per = np.zeros((self.n, self.n, 2, 2))
        if a == 1:
            per[:, :, :, 1] = 1.0
        else:
            per[:, :, 1, :] = 1.0
        return np.concatenate([s * per.ravel() for s in w])

    def data_matrix(self):
        """Rows mapping marginals to observed cells ``P(Y=y, D=d | z)``.

        Returns ``(rows, targets)`` where ``rows[k]`` is a column index array
        and ``targets[k] = (z, i, d)``.
        """
        rows, targets = [], []
        for z in range(self.K):
            c = self._cells[z]
            for i in range(self.n):
                rows.append(c[:, i, 1, :].ravel())
                targets.append((z, i, 1))
                rows.append(c[i, :, 0, :].ravel())
                targets.append((z, i, 0))
        return rows, targets


def paper_constraint_count(K: int, n: int) -> int:
    """Structural constraint count ``2nK + n^2 (K-1) + 4 n^2 K + 1`` (one normalisation)."""
    return 2 * n * K + n * n * (K - 1) + 4 * n * n * K + 1


def structural_constraint_count(K: int, n: int) -> int:
    """Count used here: one normalisation row per judge instead of one in total."""
    return paper_constraint_count(K, n) - 1 + K


def build_identify_lp(
    data: DataDistribution,
    policy: PolicySpec,
    restrictions=None,
    direction: str = "max",
    data_rows=None,
) -> tuple[lp.LPProblem, IdentifyProblem]:
    """Assemble the marginal LP for ``theta``.

    Parameters
    ----------
    data, policy, restrictions
        Observed distribution, counterfactual policy and restriction set.
    direction : {"max", "min"}
    data_rows : callable, optional
        ``data_rows(builder, ctx)`` replaces the exact data-match equalities
        (used by inference to relax them into bands).

    Returns
    -------
    (LPProblem, IdentifyProblem)
    """
    ctx = IdentifyProblem(data, policy, restrictions)
    b = lp.LPBuilder()
    b.add_variables(ctx.variable_names(), 0.0, 1.0)
    b.set_objective(np.arange(ctx.n_pi), ctx.theta_coefficients())

    if data_rows is None:
        rows, targets = ctx.data_matrix()
        for cols, (z, i, d) in zip(rows, targets):
            b.add_row(cols, 1.0, "==", data.judges[z].pmf[i, d], "data")
    else:
        data_rows(b, ctx)

    c0 = ctx.cells(0)
    for z in range(1, ctx.K):
        cz = ctx.cells(z)
        for i0 in range(ctx.n):
            for i1 in range(ctx.n):
                cols = np.concatenate([cz[i0, i1].ravel(), c0[i0, i1].ravel()])
                b.add_row(cols, np.r_[np.ones(4), -np.ones(4)], "==", 0.0, "cross")

    for z in range(ctx.K):
        b.add_row(ctx.cells(z).ravel(), 1.0, "==", 1.0, "simplex")

    res = ctx.resolved
    for z in range(ctx.K):
        cz = ctx.cells(z)
        if res.unchanged[z]:
            b.fix_zero(np.concatenate([cz[:, :, 0, 1].ravel(), cz[:, :, 1, 0].ravel()]))
        elif res.average is None:
            b.add_row(cz[:, :, :, 1].ravel(), 1.0, "==", res.rates[z], "rate")
    if res.average is not None:
        coef = ctx.release_coefficients(1)
        b.add_row(np.arange(ctx.n_pi), coef, "==", res.average, "avg_rate")

    notes = []
    used_names = set(b.names)
    for spec in ctx.restrictions:
        block: ConstraintBlock = compile_restriction(spec, ctx, aux_offset=b.n_vars)
        if block.n_aux:
            names = []
            for nm in block.aux_names:
                k = 1
                base = nm
                while nm in used_names:
                    k += 1
                    nm = f"{base}#{k}"
                used_names.add(nm)
                names.append(nm)
            b.add_variables(names, 0.0, 1.0)
        if block.zero_columns:
            b.fix_zero(block.zero_columns)
        for cols, vals, rel, rhs, tag in block.rows:
            b.add_row(cols, vals, rel, rhs, tag)
        notes.extend(block.notes)
    p = b.build(direction)
    ctx.notes = notes
    return p, ctx


def identified_set(
    data: DataDistribution,
    policy: PolicySpec,
    restrictions=None,
    backend: str = "highs",
    validate: bool = True,
) -> BoundsResult:
    """Sharp bounds on ``theta = E[Y(D(Z,1))]``.

    An infeasible LP yields a result with ``status == "empty"``.
    """
    if validate:
        data = require_valid(data)
    t0 = time.perf_counter()
    p, ctx = build_identify_lp(data, policy, restrictions)
    t_build = time.perf_counter() - t0
    lo, hi = lp.solve_pair(p, backend)
    diag = {
        "n_variables": p.n_vars,
        "n_marginal_columns": ctx.n_pi,
        "n_rows": p.n_rows,
        "row_counts": p.tag_counts(),
        "nonnegativity": ctx.n_pi,
        "structural_constraints": structural_constraint_count(ctx.K, ctx.n),
        "build_seconds": t_build,
        "solve_seconds": lo.seconds + hi.seconds,
        "notes": list(ctx.notes),
        "backend": backend,
    }
    return bounds_from_solutions(lo, hi, "marginal_lp", diag)


def _require_binary_known_y0(data: DataDistribution, tol=1e-9):
    if data.grid.values != (0.0, 1.0):
        raise ModelError("the universal-release shortcut needs a binary outcome on {0, 1}")
    bad = [j.id for j in data.judges if j.pmf[1, 0] > tol]
    if bad:
        raise ModelError(f"P(Y=1, D=0 | z) > 0 contradicts Y(0)=0 for judges {bad}")


def intersection_bounds_universal(data: DataDistribution) -> BoundsResult:
    """Universal release with ``Y(0) = 0``: intersect the per-judge intervals.

    Judge ``z`` alone implies ``E[Y(1)]`` lies in
    ``[P(Y=1, D=1 | z), 1 - P(Y=0, D=1 | z)]``.
    """
    _require_binary_known_y0(data)
    pmf = data.pmf
    lows = pmf[:, 1, 1]
    highs = 1.0 - pmf[:, 0, 1]
    lo, hi = float(lows.max()), float(highs.min())
    diag = {"judge_lower": lows.tolist(), "judge_upper": highs.tolist()}
    if lo > hi + 1e-12:
        return BoundsResult(np.nan, np.nan, EMPTY, lp.INFEASIBLE, lp.INFEASIBLE, diagnostics=diag, method="intersection")
    return BoundsResult(lo, max(lo, hi), OK, diagnostics=diag, method="intersection")


def universal_known_y0_set(data: DataDistribution, **kw) -> BoundsResult:
    """Convenience: the marginal LP for universal release with ``Y(0) = 0``."""
    return identified_set(data, PolicySpec.universal(), [KnownY0(0.0)], **kw)
