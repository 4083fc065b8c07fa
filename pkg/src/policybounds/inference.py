"""Projection confidence intervals built from simultaneous moment bands.

The observed judge cells are treated as independent multinomial sample means.
A sup-t band covers all of them jointly; relaxing the LP's data equalities to
the band and re-optimising gives a confidence interval for any quantity whose
identified set the LP computes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import lp
from .effects import RaceMoments, delta_value, pc_effect_fractional
from .identify import EMPTY, build_identify_lp, _require_binary_known_y0
from .model import (
    BENCHMARK_GROUP,
    QUOTA_GROUP,
    DataDistribution,
    ModelError,
    PolicySpec,
    require_valid,
)

DEFAULT_DRAWS = 20_000


def supt_critical_value(corr, level: float, draws: int = DEFAULT_DRAWS, seed=None, two_sided: bool = True) -> float:
    """Simulated quantile of ``max_j |Z_j|`` (or ``max_j Z_j``) for ``Z ~ N(0, corr)``.

    Parameters
    ----------
    corr : array_like
        Correlation (or any positive semidefinite) matrix.
    level : float
        Coverage level in ``(0, 1)``.
    draws : int
    seed : int
        Seed for :func:`numpy.random.default_rng`; required.
    two_sided : bool
    """
    if seed is None:
        raise ValueError("a seed is required for reproducible critical values")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    corr = np.atleast_2d(np.asarray(corr, dtype=float))
    if corr.shape[0] != corr.shape[1]:
        raise ValueError("correlation matrix must be square")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise ValueError("correlation matrix must be symmetric")
    vals, vecs = np.linalg.eigh(corr)
    if vals.min() < -1e-10 * max(1.0, vals.max()):
        raise ValueError(f"correlation matrix is not positive semidefinite (min eigenvalue {vals.min():.3g})")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((draws, corr.shape[0])) @ root.T
    stat = np.abs(z).max(axis=1) if two_sided else z.max(axis=1)
    return float(np.quantile(stat, level))


def _corr_from_cov(cov):
    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    ok = sd > 0
    corr = np.zeros_like(cov)
    corr[np.ix_(ok, ok)] = cov[np.ix_(ok, ok)] / np.outer(sd[ok], sd[ok])
    np.fill_diagonal(corr, np.where(ok, 1.0, 0.0))
    return corr, sd


def cell_covariance(data: DataDistribution) -> np.ndarray:
    """Block-diagonal multinomial covariance of the stacked cells ``(z, y, d)``."""
    blocks = []
    for j in data.judges:
        p = j.pmf.ravel()
        blocks.append((np.diag(p) - np.outer(p, p)) / j.n_cases)
    k = sum(b.shape[0] for b in blocks)
    cov = np.zeros((k, k))
    i = 0
    for b in blocks:
        m = b.shape[0]
        cov[i : i + m, i : i + m] = b
        i += m
    return cov


def aggregate_matrix(data: DataDistribution, group=QUOTA_GROUP, benchmark=BENCHMARK_GROUP) -> np.ndarray:
    """Rows mapping stacked cells to (outcome gap between groups, quota-group rate, benchmark rate)."""
    n = len(data.grid)
    y = data.grid.array
    G = np.zeros((3, data.K * n * 2))
    s = data.shares

    def within(gname):
        idx = data.members(gname)
        if not idx:
            raise ModelError(f"group {gname!r} has no judges")
        return idx, s[idx] / s[idx].sum()

    for row_sign, gname in ((1.0, group), (-1.0, benchmark)):
        idx, w = within(gname)
        for z, wz in zip(idx, w):
            for i in range(n):
                for d in (0, 1):
                    G[0, (z * n + i) * 2 + d] += row_sign * wz * y[i]
    for r, gname in ((1, group), (2, benchmark)):
        idx, w = within(gname)
        for z, wz in zip(idx, w):
            for i in range(n):
                G[r, (z * n + i) * 2 + 1] += wz
    return G


@dataclass(eq=False)
class MomentBand:
    """Simultaneous band for the stacked judge cells and optional aggregates."""

    mu: np.ndarray
    se: np.ndarray
    cv: float
    level: float
    G: np.ndarray | None = None
    mu_agg: np.ndarray | None = None
    se_agg: np.ndarray | None = None
    cv_agg: float = 0.0
    level_agg: float | None = None

    @property
    def lower(self):
        return self.mu - self.cv * self.se

    @property
    def upper(self):
        return self.mu + self.cv * self.se

    @property
    def lower_agg(self):
        return self.mu_agg - self.cv_agg * self.se_agg

    @property
    def upper_agg(self):
        return self.mu_agg + self.cv_agg * self.se_agg


def moment_band(
    data: DataDistribution,
    level: float = 0.99,
    level_agg: float | None = 0.96,
    draws: int = DEFAULT_DRAWS,
    seed=None,
    se=None,
    se_scale: float = 1.0,
    groups=(QUOTA_GROUP, BENCHMARK_GROUP),
) -> MomentBand:
    """Two-sided sup-t band on all judge cells, plus a band on three aggregates.

    ``se`` overrides the multinomial standard errors (same stacking as the
    cells); the correlation structure is still taken from the multinomial
    model.  Aggregates are skipped when ``level_agg`` is None or a group is
    empty.
    """
    mu = data.pmf.reshape(-1)
    cov = cell_covariance(data)
    corr, sd = _corr_from_cov(cov)
    if se is not None:
        sd = np.asarray(se, dtype=float).reshape(-1)
        cov = corr * np.outer(sd, sd)
    sd = sd * se_scale
    cov = cov * se_scale**2
    cv = supt_critical_value(corr, level, draws, seed) if sd.any() else 0.0
    band = MomentBand(mu, sd, cv, level)
    if level_agg is not None and all(data.members(g) for g in groups):
        G = aggregate_matrix(data, *groups)
        cov_a = G @ cov @ G.T
        corr_a, sd_a = _corr_from_cov(cov_a)
        band.G = G
        band.mu_agg = G @ mu
        band.se_agg = sd_a
        band.cv_agg = supt_critical_value(corr_a, level_agg, draws, None if seed is None else seed + 1) if sd_a.any() else 0.0
        band.level_agg = level_agg
    return band


def band_data_rows(band: MomentBand):
    """Callback replacing the exact data rows of the identification LP by the band."""

    def add(builder, ctx):
        rows, targets = ctx.data_matrix()
        n = ctx.n
        col_of_cell = {}
        for cols, (z, i, d) in zip(rows, targets):
            k = (z * n + i) * 2 + d
            col_of_cell[k] = cols
            lo, hi = max(band.lower[k], 0.0), min(band.upper[k], 1.0)
            if hi - lo <= 0.0:
                builder.add_row(cols, 1.0, "==", band.mu[k], "data")
            else:
                builder.add_row(cols, 1.0, ">=", lo, "data_band")
                builder.add_row(cols, 1.0, "<=", hi, "data_band")
        if band.G is not None:
            for r in range(band.G.shape[0]):
                cols, vals = [], []
                for k in np.nonzero(band.G[r])[0]:
                    cols.append(col_of_cell[k])
                    vals.append(np.full(col_of_cell[k].size, band.G[r, k]))
                cols, vals = np.concatenate(cols), np.concatenate(vals)
                builder.add_row(cols, vals, ">=", band.lower_agg[r], "agg_band")
                builder.add_row(cols, vals, "<=", band.upper_agg[r], "agg_band")

    return add


@dataclass
class CIResult:
    lower: float
    upper: float
    level: float
    method: str
    draws: int
    seed: int | None
    status: str = "ok"
    details: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.status == EMPTY


def ci_projection(
    data: DataDistribution,
    policy: PolicySpec,
    restrictions=None,
    level: float = 0.99,
    level_agg: float | None = 0.96,
    draws: int = DEFAULT_DRAWS,
    seed=None,
    target: str = "theta",
    se=None,
    se_scale: float = 1.0,
    backend: str = "highs",
    band: MomentBand | None = None,
) -> CIResult:
    """Projection interval for ``theta`` (or the complier effect) over the band-relaxed LP.

    The judge-cell band has level ``level`` and the aggregate band level
    ``level_agg``; by the union bound the interval has coverage at least
    ``1 - (1 - level) - (1 - level_agg)``.  Policy rates and the constants of
    complier restrictions are evaluated at the point estimates.
    """
    data = require_valid(data)
    if band is None:
        band = moment_band(data, level, level_agg, draws, seed, se, se_scale)
    nominal = 1.0 - (1.0 - level) - ((1.0 - level_agg) if band.G is not None else 0.0)
    rows = band_data_rows(band)
    details = {"cv": band.cv, "cv_agg": band.cv_agg, "level_cells": level, "level_agg": band.level_agg}
    if target == "theta":
        p, _ = build_identify_lp(data, policy, restrictions, data_rows=rows)
        lo, hi = lp.solve_pair(p, backend)
        if lo.status == lp.INFEASIBLE or hi.status == lp.INFEASIBLE:
            return CIResult(np.nan, np.nan, nominal, "projection", draws, seed, EMPTY, details)
        status = "ok" if lo.optimal and hi.optimal else f"{lo.status}/{hi.status}"
        return CIResult(lo.value, hi.value, nominal, "projection", draws, seed, status, details)
    if target == "pc_effect":
        r = pc_effect_fractional(data, policy, restrictions, backend, data_rows=rows, validate=False)
        details["denominator_range"] = r.complier_mass
        return CIResult(r.lower, r.upper, nominal, "projection_fractional", draws, seed, r.status, details)
    raise ValueError(f"unknown target {target!r}")


def _released_moments(data: DataDistribution):
    """Per judge ``(P(Y=1,D=1|z), P(Y=0,D=1|z))`` and their multinomial covariance."""
    p1 = data.pmf[:, 1, 1]
    p0 = data.pmf[:, 0, 1]
    n = data.n_cases
    var1 = p1 * (1 - p1) / n
    var0 = p0 * (1 - p0) / n
    cov10 = -p1 * p0 / n
    return p1, p0, var1, var0, cov10


def _universal_band_cov(datasets):
    """Stacked moment vector over datasets and judges with its covariance."""
    mus, blocks = [], []
    for data in datasets:
        p1, p0, v1, v0, c10 = _released_moments(data)
        for z in range(data.K):
            mus.append((p1[z], p0[z]))
            blocks.append(np.array([[v1[z], c10[z]], [c10[z], v0[z]]]))
    mu = np.array(mus).reshape(-1)
    cov = np.zeros((mu.size, mu.size))
    for i, b in enumerate(blocks):
        cov[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = b
    return mu, cov


def universal_intervals(datasets, level: float = 0.95, draws: int = DEFAULT_DRAWS, seed=None, se_scale: float = 1.0):
    """Joint one-sided band over several datasets; returns one interval per dataset.

    Each judge contributes ``P(Y=1, D=1 | z) - cv se`` as a lower bound and
    ``1 - P(Y=0, D=1 | z) + cv se`` as an upper bound on ``E[Y(1)]``.
    """
    for d in datasets:
        _require_binary_known_y0(d)
    mu, cov = _universal_band_cov(datasets)
    cov = cov * se_scale**2
    corr, sd = _corr_from_cov(cov)
    cv = supt_critical_value(corr, level, draws, seed, two_sided=False) if sd.any() else 0.0
    out = []
    i = 0
    for d in datasets:
        m = mu[i : i + 2 * d.K].reshape(d.K, 2)
        s = sd[i : i + 2 * d.K].reshape(d.K, 2)
        i += 2 * d.K
        lo = float(np.max(m[:, 0] - cv * s[:, 0]))
        hi = float(np.min(1.0 - m[:, 1] + cv * s[:, 1]))
        out.append((max(lo, 0.0), min(hi, 1.0)))
    return out, cv


def ci_universal_intersection(
    data: DataDistribution, level: float = 0.95, draws: int = DEFAULT_DRAWS, seed=None, se_scale: float = 1.0
) -> CIResult:
    """Interval for ``E[Y(1)]`` under universal release with ``Y(0) = 0``."""
    data = require_valid(data)
    (iv,), cv = universal_intervals([data], level, draws, seed, se_scale)
    lo, hi = iv
    if lo > hi:
        return CIResult(np.nan, np.nan, level, "universal_intersection", draws, seed, EMPTY, {"cv": cv})
    return CIResult(lo, hi, level, "universal_intersection", draws, seed, "ok", {"cv": cv})


def _race_release_cov(data: DataDistribution):
    """Covariance of share-weighted ``(P(D=1,Y=1), P(D=1,Y=0))`` for one race."""
    p1, p0, v1, v0, c10 = _released_moments(data)
    s = data.shares
    return np.array([[s**2 @ v1, s**2 @ c10], [s**2 @ c10, s**2 @ v0]])


def ci_delta_two_step(
    data_by_race,
    shares=None,
    levels=(0.955, 0.995),
    n_grid: int = 100,
    draws: int = DEFAULT_DRAWS,
    seed=None,
    first_step=None,
    races=("b", "w"),
) -> CIResult:
    """Two-step interval for the disparate-impact measure.

    Step one builds a joint band for ``E[Y(1) | R=r]`` of both races.  Step
    two evaluates a delta-method interval at every point of an ``n_grid``
    square grid over that rectangle; the union of these intervals is the
    reported set.

    Parameters
    ----------
    data_by_race : mapping
        ``{race: DataDistribution}`` with binary outcomes and ``Y(0) = 0``.
    shares : mapping, optional
        Race case shares (default: proportional to total caseloads).
    first_step : mapping, optional
        ``{race: (lo, hi)}`` replacing the simulated first step.
    """
    l1, l2 = levels
    datasets = [require_valid(data_by_race[r]) for r in races]
    if shares is None:
        tot = {r: float(d.n_cases.sum()) for r, d in zip(races, datasets)}
        shares = {r: tot[r] / sum(tot.values()) for r in races}
    moments = {r: RaceMoments.from_data(d, shares[r]) for r, d in zip(races, datasets)}
    if first_step is None:
        ivs, cv = universal_intervals(datasets, l1, draws, seed)
        first = dict(zip(races, ivs))
    else:
        first, cv = {r: tuple(first_step[r]) for r in races}, None
    for r in races:
        if first[r][0] > first[r][1]:
            return CIResult(np.nan, np.nan, l1 + l2 - 1, "delta_two_step", draws, seed, EMPTY, {"first_step": first})
    eps = 1e-9
    eb = np.linspace(max(first[races[0]][0], eps), min(first[races[0]][1], 1 - eps), n_grid)
    ew = np.linspace(max(first[races[1]][0], eps), min(first[races[1]][1], 1 - eps), n_grid)
    EB, EW = np.meshgrid(eb, ew, indexing="ij")
    mb, mw = moments[races[0]], moments[races[1]]
    val = delta_value(EB, EW, mb, mw)
    ey1 = (mb.share * EB + mw.share * EW) / (mb.share + mw.share)
    # gradient w.r.t. (A_b, B_b, A_w, B_w): released-with-misconduct and released-without cells
    grads = [ey1 / EB, (1 - ey1) / (1 - EB), -ey1 / EW, -(1 - ey1) / (1 - EW)]
    cov_b = _race_release_cov(datasets[0])
    cov_w = _race_release_cov(datasets[1])
    var = (
        grads[0] ** 2 * cov_b[0, 0] + 2 * grads[0] * grads[1] * cov_b[0, 1] + grads[1] ** 2 * cov_b[1, 1]
        + grads[2] ** 2 * cov_w[0, 0] + 2 * grads[2] * grads[3] * cov_w[0, 1] + grads[3] ** 2 * cov_w[1, 1]
    )
    z = float(ndtri(0.5 + l2 / 2))
    half = z * np.sqrt(np.clip(var, 0.0, None))
    lo, hi = float(np.min(val - half)), float(np.max(val + half))
    details = {"first_step": {r: list(first[r]) for r in races}, "cv_first_step": cv, "z_second_step": z}
    return CIResult(lo, hi, l1 + l2 - 1, "delta_two_step", draws, seed, "ok", details)
