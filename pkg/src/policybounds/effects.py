"""Policy effects derived from outcome bounds, and disparate-impact quantities."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import lp
from .identify import BoundsResult, build_identify_lp
from .model import DataDistribution, ModelError, PolicySpec, require_valid


@dataclass
class PCEffectResult:
    """Bounds on ``E[Y(1) - Y(0) | D(Z,1) > D(Z,0)]``."""

    lower: float
    upper: float
    complier_mass: float | tuple[float, float]
    status: str = "ok"
    method: str = "ratio"
    notes: list[str] = field(default_factory=list)


def complier_mass(data: DataDistribution, policy: PolicySpec) -> float:
    """``E[D(Z,1)] - E[D]`` with the policy's known rates."""
    return policy.resolve(data).counterfactual_rate(data) - data.mean_d


def pc_effect_from_theta(theta: BoundsResult, data: DataDistribution, policy: PolicySpec) -> PCEffectResult:
    """Divide the policy-effect bounds ``theta - E[Y]`` by the complier mass."""
    mass = complier_mass(data, policy)
    if theta.empty:
        return PCEffectResult(np.nan, np.nan, mass, "empty")
    if not mass > 1e-12:
        return PCEffectResult(np.nan, np.nan, mass, "undefined", notes=["complier mass is zero"])
    ey = data.mean_y
    return PCEffectResult((theta.lower - ey) / mass, (theta.upper - ey) / mass, mass, theta.status)


def pc_effect_fractional(
    data: DataDistribution,
    policy: PolicySpec,
    restrictions=None,
    backend: str = "highs",
    data_rows=None,
    validate: bool = True,
) -> PCEffectResult:
    """Sharp bounds on the complier effect as a ratio of linear functionals.

    Numerator ``theta - E[Y]`` and denominator ``E[D(Z,1)] - E[D]`` are both
    written in terms of the marginals, so the ratio is optimised exactly over
    the feasible set even when neither piece is pinned by the data rows.
    """
    if validate:
        data = require_valid(data)
    p, ctx = build_identify_lp(data, policy, restrictions, data_rows=data_rows)
    pad = np.zeros(p.n_vars - ctx.n_pi)
    num = np.concatenate([ctx.theta_coefficients() - ctx.status_quo_coefficients(), pad])
    den = np.concatenate([ctx.release_coefficients(1, ctx.resolved.objective_shares) - ctx.release_coefficients(0), pad])
    feas = lp.solve(p.with_objective(np.zeros(p.n_vars)), backend)
    if feas.status == lp.INFEASIBLE:
        return PCEffectResult(np.nan, np.nan, (np.nan, np.nan), "empty", "fractional")
    fr = lp.solve_fractional(p, num, 0.0, den, 0.0, backend)
    status = "ok" if fr.status_lower == fr.status_upper == lp.OPTIMAL else f"{fr.status_lower}/{fr.status_upper}"
    return PCEffectResult(fr.lower, fr.upper, fr.denominator_range, status, "fractional", fr.notes)


# ---------------------------------------------------------------------------
# Disparate impact
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RaceMoments:
    """Observable release cells for one group of defendants.

    ``released_y1`` is ``P(D=1, Y=1 | R=r)``, ``released_y0`` is
    ``P(D=1, Y=0 | R=r)`` and ``share`` the group's share of cases.
    """

    released_y1: float
    released_y0: float
    share: float

    @classmethod
    def from_data(cls, data: DataDistribution, share: float) -> "RaceMoments":
        agg = data.aggregate_pmf()
        if data.grid.values != (0.0, 1.0):
            raise ModelError("disparate impact needs a binary outcome on {0, 1}")
        return cls(float(agg[1, 1]), float(agg[0, 1]), share)


def delta_value(e_b, e_w, mb: RaceMoments, mw: RaceMoments):
    """Weighted FPR/TPR difference at misconduct rates ``(e_b, e_w)``; broadcasts."""
    e_b = np.asarray(e_b, dtype=float)
    e_w = np.asarray(e_w, dtype=float)
    tot = mb.share + mw.share
    ey1 = (mb.share * e_b + mw.share * e_w) / tot
    fpr_b, fpr_w = mb.released_y1 / e_b, mw.released_y1 / e_w
    tpr_b, tpr_w = mb.released_y0 / (1 - e_b), mw.released_y0 / (1 - e_w)
    return (1 - ey1) * (tpr_b - tpr_w) + ey1 * (fpr_b - fpr_w)


@dataclass
class DisparateImpact:
    lower: float
    upper: float
    fpr: dict
    tpr: dict
    ey1: dict
    argmin: tuple[float, float]
    argmax: tuple[float, float]


def _clip_interval(iv, name, eps=1e-6):
    lo, hi = float(iv[0]), float(iv[1])
    if lo <= 0 or hi >= 1:
        warnings.warn(f"{name} interval [{lo}, {hi}] touches the boundary; clipped into (0, 1)", RuntimeWarning, stacklevel=3)
        lo, hi = max(lo, eps), min(hi, 1 - eps)
    return lo, hi


def disparate_impact(ey1_b, ey1_w, data_by_race, n_grid: int = 100, races=("b", "w")) -> DisparateImpact:
    """Range of the disparate-impact measure over a rectangle of misconduct rates.

    Parameters
    ----------
    ey1_b, ey1_w : (float, float)
        Intervals for ``E[Y(1) | R=r]`` (for instance identified sets under
        universal release).
    data_by_race : mapping
        ``{race: RaceMoments}`` for the two races in ``races``.
    n_grid : int
        Points per axis; the measure is evaluated on the full product grid.
    """
    mb, mw = data_by_race[races[0]], data_by_race[races[1]]
    eb = np.linspace(*_clip_interval(ey1_b, races[0]), n_grid)
    ew = np.linspace(*_clip_interval(ey1_w, races[1]), n_grid)
    EB, EW = np.meshgrid(eb, ew, indexing="ij")
    vals = delta_value(EB, EW, mb, mw)
    imin = np.unravel_index(np.argmin(vals), vals.shape)
    imax = np.unravel_index(np.argmax(vals), vals.shape)
    fpr = {races[0]: (mb.released_y1 / eb[-1], mb.released_y1 / eb[0]), races[1]: (mw.released_y1 / ew[-1], mw.released_y1 / ew[0])}
    tpr = {
        races[0]: (mb.released_y0 / (1 - eb[0]), mb.released_y0 / (1 - eb[-1])),
        races[1]: (mw.released_y0 / (1 - ew[0]), mw.released_y0 / (1 - ew[-1])),
    }
    return DisparateImpact(
        float(vals[imin]),
        float(vals[imax]),
        fpr,
        tpr,
        {races[0]: (eb[0], eb[-1]), races[1]: (ew[0], ew[-1])},
        (float(eb[imin[0]]), float(ew[imin[1]])),
        (float(eb[imax[0]]), float(ew[imax[1]])),
    )


# ---------------------------------------------------------------------------
# Point-identified benchmarks
# ---------------------------------------------------------------------------


def reallocation_effect(data: DataDistribution, target) -> float:
    """Effect of sending every case to the judges in ``target``.

    ``target`` is a group name or a sequence of judge ids; target judges are
    weighted by caseload.
    """
    idx = data.members(target) if isinstance(target, str) else [data.judge_index(t) for t in target]
    if not idx:
        raise ModelError(f"reallocation target {target!r} is empty")
    w = data.n_cases[idx]
    return float(w @ data.judge_mean_y[idx] / w.sum() - data.mean_y)


def tsls_slope(data: DataDistribution) -> float:
    """Share-weighted slope of judge mean outcomes on judge release rates."""
    s = data.shares
    p = data.release_rates
    ybar = data.judge_mean_y
    pc = p - s @ p
    var = s @ pc**2
    if var <= 1e-14:
        raise ModelError("release rates do not vary across judges; the first stage is zero")
    return float(s @ (pc * (ybar - s @ ybar)) / var)


def tsls_benchmark(data: DataDistribution, policy: PolicySpec) -> float:
    """Linear extrapolation: IV slope times the change in the release rate."""
    return tsls_slope(data) * complier_mass(data, policy)
