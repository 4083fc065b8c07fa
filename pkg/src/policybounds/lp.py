"""Linear-program representation, solvers and the Charnes-Cooper transform.

Two backends share one contract:

* ``"highs"`` calls :func:`scipy.optimize.linprog` (HiGHS dual simplex) and is
  used for all production solves.
* ``"simplex"`` is a small dense two-phase tableau simplex with Bland's rule.
  It is slow but independent of HiGHS, which makes it useful as a reference.

Every returned ``optimal`` solution is re-checked against the original
constraints; a solution that fails the check is reported as
``numerical_failure`` rather than silently trusted.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

FEAS_TOL = 1e-8
OPT_TOL = 1e-7
DUAL_TOL = 1e-6

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"

RELATIONS = ("<=", "==", ">=")


class LPError(ValueError):
    """Malformed linear program."""


@dataclass(eq=False)
class LPProblem:
    """``sense c'x`` subject to ``A x (rel) b`` and ``lo <= x <= hi``."""

    c: np.ndarray
    A: sp.csr_matrix
    rel: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sense: str = "max"
    names: list[str] | None = None
    row_tags: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.A = sp.csr_matrix(self.A, dtype=float)
        if self.A.shape[0] == 0:
            self.A = sp.csr_matrix((0, n))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.rel = np.asarray(self.rel, dtype=object).reshape(-1)
        self.lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (n,)).copy()
        self.hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (n,)).copy()
        m = self.b.size
        if self.A.shape != (m, n):
            raise LPError(f"constraint matrix has shape {self.A.shape}, expected {(m, n)}")
        if self.rel.size != m:
            raise LPError("one relation per constraint row is required")
        bad = set(self.rel.tolist()) - set(RELATIONS)
        if bad:
            raise LPError(f"unknown relations {bad}")
        if not np.all(np.isfinite(self.b)):
            raise LPError("constraint right-hand sides must be finite")
        if np.any(self.lo > self.hi):
            raise LPError("variable bounds need lo <= hi")
        if self.sense not in ("min", "max"):
            raise LPError(f"sense must be 'min' or 'max', got {self.sense!r}")
        if self.names is not None and len(self.names) != n:
            raise LPError("one name per variable is required")
        if self.row_tags is not None and len(self.row_tags) != m:
            raise LPError("one tag per row is required")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def with_sense(self, sense: str) -> "LPProblem":
        return LPProblem(self.c, self.A, self.rel, self.b, self.lo, self.hi, sense, self.names, self.row_tags)

    def with_objective(self, c, sense=None) -> "LPProblem":
        return LPProblem(c, self.A, self.rel, self.b, self.lo, self.hi, sense or self.sense, self.names, self.row_tags)

    def tag_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for t in self.row_tags or ["untagged"] * self.n_rows:
            out[t] = out.get(t, 0) + 1
        return out

    def residuals(self, x) -> np.ndarray:
        """Violation of each row and bound at ``x`` (zero when satisfied)."""
        x = np.asarray(x, dtype=float)
        ax = self.A @ x - self.b
        viol = np.where(self.rel == "<=", np.maximum(ax, 0), np.where(self.rel == ">=", np.maximum(-ax, 0), np.abs(ax)))
        bnd = np.maximum(self.lo - x, 0) + np.maximum(x - self.hi, 0)
        return np.concatenate([viol, bnd])


class LPBuilder:
    """Incremental assembly of an :class:`LPProblem` with named columns and tagged rows."""

    def __init__(self):
        self.names: list[str] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.c: list[float] = []
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []
        self.rel: list[str] = []
        self.b: list[float] = []
        self.tags: list[str] = []

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return len(self.b)

    def add_variables(self, names, lo=0.0, hi=np.inf, cost=0.0) -> np.ndarray:
        names = list(names)
        start = self.n_vars
        k = len(names)
        self.names.extend(names)
        self.lo.extend(np.broadcast_to(lo, (k,)).tolist())
        self.hi.extend(np.broadcast_to(hi, (k,)).tolist())
        self.c.extend(np.broadcast_to(cost, (k,)).tolist())
        return np.arange(start, start + k)

    def add_row(self, cols, vals, rel: str, rhs: float, tag: str = "row"):
        if rel not in RELATIONS:
            raise LPError(f"unknown relation {rel!r}")
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        vals = np.broadcast_to(np.asarray(vals, dtype=float), cols.shape)
        r = self.n_rows
        self._rows.append(np.full(cols.size, r, dtype=np.int64))
        self._cols.append(cols)
        self._vals.append(np.array(vals))
        self.rel.append(rel)
        self.b.append(float(rhs))
        self.tags.append(tag)
        return r

    def fix_zero(self, cols):
        for j in np.asarray(cols).reshape(-1):
            self.hi[int(j)] = 0.0
            self.lo[int(j)] = min(self.lo[int(j)], 0.0)

    def set_objective(self, cols, vals):
        for j, v in zip(np.asarray(cols).reshape(-1), np.broadcast_to(vals, np.shape(cols))):
            self.c[int(j)] += float(v)

    def build(self, sense: str = "max") -> LPProblem:
        n = self.n_vars
        if self._rows:
            rows = np.concatenate(self._rows)
            cols = np.concatenate(self._cols)
            vals = np.concatenate(self._vals)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_rows, n))
        A.sum_duplicates()
        return LPProblem(
            np.array(self.c),
            A,
            np.array(self.rel, dtype=object),
            np.array(self.b),
            np.array(self.lo),
            np.array(self.hi),
            sense,
            list(self.names),
            list(self.tags),
        )


@dataclass(eq=False)
class LPSolution:
    status: str
    value: float = np.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    message: str = ""
    max_residual: float = np.nan
    cs_violation: float = np.nan
    seconds: float = 0.0
    backend: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _check(p: LPProblem, sol: LPSolution, feas_tol: float, dual_tol: float) -> LPSolution:
    if sol.status != OPTIMAL:
        return sol
    res = p.residuals(sol.x)
    scale = 1.0 + np.concatenate([np.abs(p.b), np.zeros(p.n_vars)])
    sol.max_residual = float(np.max(res / scale)) if res.size else 0.0
    if sol.duals is not None and p.n_rows:
        slack = p.A @ sol.x - p.b
        ineq = p.rel != "=="
        sol.cs_violation = float(np.max(np.abs(sol.duals[ineq] * slack[ineq]), initial=0.0))
    if sol.max_residual > feas_tol:
        sol.status = NUMERICAL_FAILURE
        sol.message = f"primal residual {sol.max_residual:.3g} exceeds {feas_tol:g}"
    elif np.isfinite(sol.cs_violation) and sol.cs_violation > dual_tol:
        sol.status = NUMERICAL_FAILURE
        sol.message = f"complementary slackness violated by {sol.cs_violation:.3g}"
    return sol


def _solve_highs(p: LPProblem) -> LPSolution:
    sign = -1.0 if p.sense == "max" else 1.0
    le = p.rel == "<="
    ge = p.rel == ">="
    eq = p.rel == "=="
    A_ub = sp.vstack([p.A[le], -p.A[ge]]).tocsr() if (le.any() or ge.any()) else None
    b_ub = np.concatenate([p.b[le], -p.b[ge]]) if A_ub is not None else None
    A_eq = p.A[eq] if eq.any() else None
    b_eq = p.b[eq] if eq.any() else None
    bounds = np.column_stack([np.where(np.isfinite(p.lo), p.lo, -np.inf), np.where(np.isfinite(p.hi), p.hi, np.inf)])
    res = linprog(
        sign * p.c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10, "presolve": True},
    )
    if res.status == 0:
        duals = np.zeros(p.n_rows)
        if A_ub is not None:
            m_ub = res.ineqlin.marginals
            nle = int(le.sum())
            duals[le] = m_ub[:nle]
            duals[ge] = -m_ub[nle:]
        if A_eq is not None:
            duals[eq] = res.eqlin.marginals
        return LPSolution(OPTIMAL, float(p.c @ res.x), np.asarray(res.x), sign * duals, res.message)
    if res.status == 2:
        return LPSolution(INFEASIBLE, message=res.message)
    if res.status == 3:
        return LPSolution(UNBOUNDED, np.inf if p.sense == "max" else -np.inf, message=res.message)
    return LPSolution(NUMERICAL_FAILURE, message=res.message)


# ---------------------------------------------------------------------------
# Reference simplex
# ---------------------------------------------------------------------------


def _standard_form(p: LPProblem):
    """Rewrite as ``min c's.t. A x = b, x >= 0`` with ``b >= 0``.

    Returns the standard-form data plus a map back to the original variables:
    ``x = shift + T @ x_std``.
    """
    n = p.n_vars
    A = p.A.toarray()
    cols = []  # (orig index, coefficient)
    shift = np.zeros(n)
    extra_rows = []
    for j in range(n):
        lo, hi = p.lo[j], p.hi[j]
        if np.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nx = len(cols)
    T = np.zeros((n, nx))
    for k, (j, s) in enumerate(cols):
        T[j, k] = s
    A_x = A @ T
    b = p.b - A @ shift
    rel = list(p.rel)
    rows = [A_x[i] for i in range(A_x.shape[0])]
    for k, ub in extra_rows:
        r = np.zeros(nx)
        r[k] = 1.0
        rows.append(r)
        b = np.append(b, ub)
        rel.append("<=")
    m = len(rows)
    n_slack = sum(1 for r in rel if r != "==")
    A_std = np.zeros((m, nx + n_slack))
    s = nx
    for i in range(m):
        A_std[i, :nx] = rows[i]
        if rel[i] == "<=":
            A_std[i, s] = 1.0
            s += 1
        elif rel[i] == ">=":
            A_std[i, s] = -1.0
            s += 1
    b = np.asarray(b, dtype=float)
    sign = np.where(b < 0, -1.0, 1.0)
    A_std *= sign[:, None]
    b = b * sign
    sense = -1.0 if p.sense == "max" else 1.0
    c_std = np.concatenate([sense * (p.c @ T), np.zeros(n_slack)])
    const = float(p.c @ shift)
    return A_std, b, c_std, T, shift, const, sign, len(p.rel)


def _pivot(tab, r, k):
    tab[r] /= tab[r, k]
    col = tab[:, k].copy()
    col[r] = 0.0
    tab -= np.outer(col, tab[r])


def _simplex_phase(tab, basis, cost_row, allowed, tol, max_iter):
    """Run Bland's rule on ``tab`` minimising the objective in ``cost_row``."""
    m = len(basis)
    for _ in range(max_iter):
        rc = tab[cost_row, :-1]
        cand = np.nonzero((rc < -tol) & allowed)[0]
        if cand.size == 0:
            return "done"
        k = cand[0]
        col = tab[:m, k]
        pos = col > tol
        if not pos.any():
            return "unbounded"
        ratios = np.full(m, np.inf)
        ratios[pos] = tab[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + tol * max(1.0, abs(best)))[0]
        r = min(ties, key=lambda i: basis[i])
        _pivot(tab, r, k)
        basis[r] = k
    return "iteration_limit"


def _solve_simplex(p: LPProblem, tol: float = 1e-10, max_iter: int = 50000) -> LPSolution:
    A, b, c, T, shift, const, sign, n_orig_rows = _standard_form(p)
    m, n = A.shape
    # tableau: [A | I | b]; rows m (phase-2 cost) and m+1 (phase-1 cost)
    tab = np.zeros((m + 2, n + m + 1))
    tab[:m, :n] = A
    tab[:m, n : n + m] = np.eye(m)
    tab[:m, -1] = b
    tab[m, :n] = c
    tab[m + 1, :n] = -A.sum(axis=0)
    tab[m + 1, -1] = -b.sum()
    basis = list(range(n, n + m))
    allowed = np.ones(n + m, dtype=bool)
    st = _simplex_phase(tab, basis, m + 1, allowed, tol, max_iter)
    if st == "iteration_limit":
        return LPSolution(NUMERICAL_FAILURE, message="phase 1 iteration limit")
    if -tab[m + 1, -1] > 1e-9 * max(1.0, b.sum()):
        return LPSolution(INFEASIBLE, message="phase 1 optimum positive")
    # drive remaining artificials out of the basis where possible
    for r in range(m):
        if basis[r] >= n:
            nz = np.nonzero(np.abs(tab[r, :n]) > 1e-9)[0]
            if nz.size:
                _pivot(tab, r, nz[0])
                basis[r] = nz[0]
    allowed[n:] = False
    st = _simplex_phase(tab, basis, m, allowed, tol, max_iter)
    if st == "unbounded":
        return LPSolution(UNBOUNDED, np.inf if p.sense == "max" else -np.inf, message="unbounded ray")
    if st == "iteration_limit":
        return LPSolution(NUMERICAL_FAILURE, message="phase 2 iteration limit")
    x_std = np.zeros(n + m)
    x_std[basis] = tab[:m, -1]
    x = shift + T @ x_std[: T.shape[1]]
    # reduced cost of artificial column i is -y_i (its cost is zero)
    y = -tab[m, n : n + m] * sign
    duals = y[:n_orig_rows]
    if p.sense == "max":
        duals = -duals
    return LPSolution(OPTIMAL, float(p.c @ x), x, duals, "ok")


def solve(
    p: LPProblem,
    backend: str = "highs",
    feas_tol: float = FEAS_TOL,
    dual_tol: float = DUAL_TOL,
) -> LPSolution:
    """Solve ``p`` and verify the returned point.

    Parameters
    ----------
    p : LPProblem
    backend : {"highs", "simplex"}
    feas_tol : float
        Maximum scaled primal residual accepted for an ``optimal`` status.
    dual_tol : float
        Maximum complementary-slackness violation accepted.
    """
    t0 = time.perf_counter()
    if backend == "highs":
        sol = _solve_highs(p)
    elif backend == "simplex":
        sol = _solve_simplex(p)
    else:
        raise LPError(f"unknown backend {backend!r}")
    sol.backend = backend
    sol = _check(p, sol, feas_tol, dual_tol)
    sol.seconds = time.perf_counter() - t0
    return sol


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get("POLICYBOUNDS_THREADS", "1")))
    except ValueError:
        return 1


def solve_pair(p: LPProblem, backend: str = "highs", **kw) -> tuple[LPSolution, LPSolution]:
    """Minimise and maximise the same objective over one feasible set."""
    probs = [p.with_sense("min"), p.with_sense("max")]
    if max_threads() > 1:
        with ThreadPoolExecutor(max_workers=2) as ex:
            lo, hi = ex.map(lambda q: solve(q, backend, **kw), probs)
    else:
        lo, hi = (solve(q, backend, **kw) for q in probs)
    return lo, hi


# ---------------------------------------------------------------------------
# Linear-fractional programs
# ---------------------------------------------------------------------------


@dataclass
class FractionalResult:
    lower: float
    upper: float
    status_lower: str
    status_upper: str
    denominator_range: tuple[float, float]
    notes: list[str] = field(default_factory=list)


def _homogenize(p: LPProblem, num, num0, den, den0, t_cap):
    """Charnes-Cooper: variables (y, t) with y = t x, t = 1 / (den x + den0)."""
    n = p.n_vars
    A = p.A.tocsr()
    blocks = [sp.hstack([A, sp.csr_matrix(-p.b.reshape(-1, 1))])]
    rel = list(p.rel)
    rhs = [0.0] * p.n_rows
    tags = list(p.row_tags or ["row"] * p.n_rows)
    for j in range(n):
        for bound, r in ((p.lo[j], ">="), (p.hi[j], "<=")):
            if not np.isfinite(bound) or (bound == 0.0 and r == ">="):
                continue
            row = sp.csr_matrix(([1.0, -bound], ([0, 0], [j, n])), shape=(1, n + 1))
            blocks.append(row)
            rel.append(r)
            rhs.append(0.0)
            tags.append("bound")
    blocks.append(sp.csr_matrix(np.append(den, den0).reshape(1, -1)))
    rel.append("==")
    rhs.append(1.0)
    tags.append("normalize")
    lo = np.append(np.where(p.lo >= 0, 0.0, -np.inf), 0.0)
    hi = np.append(np.where(p.hi <= 0, 0.0, np.inf), t_cap)
    c = np.append(num, num0)
    return LPProblem(c, sp.vstack(blocks).tocsr(), np.array(rel, dtype=object), np.array(rhs), lo, hi, "max", None, tags)


def solve_fractional(p: LPProblem, num, num0: float, den, den0: float, backend: str = "highs", den_tol: float = 1e-9):
    """Bounds on ``(num x + num0) / (den x + den0)`` over the feasible set of ``p``.

    The denominator range is found first.  When it is bounded away from zero
    the homogenising scalar is capped at ``1 / min denominator`` and two LPs
    give exact bounds.  When the denominator can vanish, the side(s) where the
    numerator can be non-zero at a vanishing denominator are reported as
    infinite with status ``unbounded``.
    """
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    dlo, dhi = solve_pair(p.with_objective(den), backend)
    if not (dlo.optimal and dhi.optimal):
        st = dlo.status if not dlo.optimal else dhi.status
        return FractionalResult(np.nan, np.nan, st, st, (np.nan, np.nan), [f"denominator LP: {st}"])
    dmin, dmax = dlo.value + den0, dhi.value + den0
    notes = []
    if dmax < -den_tol:
        # flip signs so the denominator is positive
        num, num0, den, den0 = -num, -num0, -den, -den0
        dmin, dmax = -dmax, -dmin
    if dmin > den_tol:
        q = _homogenize(p, num, num0, den, den0, 1.0 / dmin)
        lo, hi = solve_pair(q, backend)
        return FractionalResult(
            lo.value if lo.optimal else np.nan,
            hi.value if hi.optimal else np.nan,
            lo.status,
            hi.status,
            (dmin, dmax),
            notes,
        )
    # denominator reaches zero somewhere on the feasible set
    notes.append(f"denominator ranges over [{dmin:.3g}, {dmax:.3g}] and can vanish")
    face = LPProblem(
        num,
        sp.vstack([p.A, sp.csr_matrix(den.reshape(1, -1))]).tocsr(),
        np.append(p.rel, "=="),
        np.append(p.b, -den0),
        p.lo,
        p.hi,
        "max",
    )
    flo, fhi = solve_pair(face, backend)
    q = _homogenize(p, num, num0, den, den0, np.inf)
    lo, hi = solve_pair(q, backend)
    lower, status_lower = lo.value, lo.status
    upper, status_upper = hi.value, hi.status
    if flo.optimal and flo.value + num0 < -den_tol:
        lower, status_lower = -np.inf, UNBOUNDED
    if fhi.optimal and fhi.value + num0 > den_tol:
        upper, status_upper = np.inf, UNBOUNDED
    if status_lower == UNBOUNDED:
        lower = -np.inf
    if status_upper == UNBOUNDED:
        upper = np.inf
    return FractionalResult(lower, upper, status_lower, status_upper, (dmin, dmax), notes)


# ---------------------------------------------------------------------------
# Text dump
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v)) if np.isfinite(v) else ("+inf" if v > 0 else "-inf")


def to_lp_format(p: LPProblem) -> str:
    """Render ``p`` in CPLEX LP text format.

    Grammar: an objective section (``Maximize``/``Minimize``), ``Subject To``
    with one ``<tag>_<i>: <terms> <rel> <rhs>`` line per row, a ``Bounds``
    section and ``End``.  Variable names are taken from ``p.names`` (``x<j>``
    when absent) so the output is deterministic.
    """
    names = p.names or [f"x{j}" for j in range(p.n_vars)]

    def terms(idx, vals):
        out = []
        for j, v in zip(idx, vals):
            if v == 0:
                continue
            out.append(f"{'-' if v < 0 else '+'} {_fmt(abs(v))} {names[j]}")
        return " ".join(out) if out else "0 " + names[0]

    lines = ["Maximize" if p.sense == "max" else "Minimize"]
    nz = np.nonzero(p.c)[0]
    lines.append(" obj: " + terms(nz, p.c[nz]))
    lines.append("Subject To")
    rel_txt = {"<=": "<=", ">=": ">=", "==": "="}
    A = p.A.tocsr()
    tags = p.row_tags or ["c"] * p.n_rows
    for i in range(p.n_rows):
        row = A.getrow(i)
        order = np.argsort(row.indices)
        lines.append(f" {tags[i]}_{i}: {terms(row.indices[order], row.data[order])} {rel_txt[p.rel[i]]} {_fmt(p.b[i])}")
    lines.append("Bounds")
    for j in range(p.n_vars):
        lo, hi = p.lo[j], p.hi[j]
        if lo == 0 and not np.isfinite(hi):
            continue
        if not np.isfinite(lo) and not np.isfinite(hi):
            lines.append(f" {names[j]} free")
        else:
            lines.append(f" {_fmt(lo)} <= {names[j]} <= {_fmt(hi)}")
    lines.append("End")
    return "\n".join(lines) + "\n"
