"""Gaussian signal model linking signal correlation to disagreement probabilities.

Each judge releases a defendant when a standard normal signal ``V_z`` falls
below the judge's threshold ``Phi^{-1}(rate_z)``.  Signals of two judges are
bivariate normal with correlation ``rho``; higher correlation means the judges
agree more often, so the implied disagreement probability falls in ``rho``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate, optimize
from scipy.special import ndtr, ndtri

_LOWER = -38.0  # Phi(-38) underflows; the integrand is zero below this point


def bvn_orthant(rho: float, a: float, b: float) -> float:
    """``P(X <= a, Y <= b)`` for standard bivariate normal ``(X, Y)`` with correlation ``rho``.

    Computed as ``int_{-inf}^{a} phi(x) Phi((b - rho x) / sqrt(1 - rho^2)) dx``
    by adaptive quadrature; ``|rho| = 1`` is handled in closed form.
    """
    rho = float(rho)
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [-1, 1], got {rho}")
    if a == -np.inf or b == -np.inf:
        return 0.0
    if a == np.inf:
        return float(ndtr(b))
    if b == np.inf:
        return float(ndtr(a))
    if rho == 0.0:
        return float(ndtr(a) * ndtr(b))
    if rho == 1.0:
        return float(ndtr(min(a, b)))
    if rho == -1.0:
        return float(max(0.0, ndtr(a) + ndtr(b) - 1.0))
    # integrate over the variable with the smaller cutoff for a shorter range
    if b < a:
        a, b = b, a
    if a <= _LOWER:
        return 0.0
    s = math.sqrt((1.0 - rho) * (1.0 + rho))
    inv_sqrt_2pi = 1.0 / math.sqrt(2.0 * math.pi)

    def f(x):
        return inv_sqrt_2pi * math.exp(-0.5 * x * x) * ndtr((b - rho * x) / s)

    pts = [b / rho] if _LOWER < b / rho < a else None
    val, _ = integrate.quad(f, _LOWER, a, points=pts, epsabs=1e-14, epsrel=1e-13, limit=200)
    return float(min(max(val, 0.0), 1.0))


def upper_lower_orthant(rho: float, a: float, b: float) -> float:
    """``P(X > a, Y <= b)``."""
    return max(0.0, float(ndtr(b)) - bvn_orthant(rho, a, b))


@dataclass(frozen=True)
class SignalModel:
    """Correlated-signal model for a quota group and a benchmark group.

    Parameters
    ----------
    rho : float
        Signal correlation between any quota judge and any benchmark judge.
    q : float
        Quota; quota judges release below ``Phi^{-1}(q)`` under the policy.
    benchmark_rates : sequence of float
        Release rates of benchmark judges (in ``(0, 1)``).
    quota_cases, benchmark_cases : sequence of float, optional
        Caseloads used as weights (uniform when omitted).
    divide_by_q : bool
        Normalise by ``q`` instead of the benchmark group's average rate.
    """

    rho: float
    q: float
    benchmark_rates: tuple[float, ...]
    quota_cases: tuple[float, ...] = (1.0,)
    benchmark_cases: tuple[float, ...] | None = None
    divide_by_q: bool = False

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        rates = tuple(float(r) for r in self.benchmark_rates)
        if not rates or any(not 0.0 < r < 1.0 for r in rates):
            raise ValueError("benchmark rates must lie strictly inside (0, 1)")
        object.__setattr__(self, "benchmark_rates", rates)
        cases = self.benchmark_cases if self.benchmark_cases is not None else (1.0,) * len(rates)
        if len(cases) != len(rates):
            raise ValueError("one caseload per benchmark judge is required")
        object.__setattr__(self, "benchmark_cases", tuple(float(c) for c in cases))
        object.__setattr__(self, "quota_cases", tuple(float(c) for c in self.quota_cases))

    def with_rho(self, rho: float) -> "SignalModel":
        return replace(self, rho=float(rho))

    @property
    def benchmark_weights(self) -> np.ndarray:
        w = np.asarray(self.benchmark_cases)
        return w / w.sum()


def dp_from_rho(model: SignalModel) -> float:
    """Average disagreement probability implied by the signal model.

    Every quota judge shares the threshold ``Phi^{-1}(q)``, so quota
    caseloads only matter through their normalised weights, which sum to one.
    """
    a = float(ndtri(model.q))
    w = model.benchmark_weights
    rates = np.asarray(model.benchmark_rates)
    joint = np.array([upper_lower_orthant(model.rho, a, float(ndtri(r))) for r in rates])
    denom = model.q if model.divide_by_q else float(w @ rates)
    return float(w @ joint / denom)


def rho_from_dp(model: SignalModel, target: float, xtol: float = 1e-12) -> float:
    """Invert :func:`dp_from_rho` for the correlation (``model.rho`` is ignored)."""
    lo_dp = dp_from_rho(model.with_rho(1.0))
    hi_dp = dp_from_rho(model.with_rho(-1.0))
    if not lo_dp - 1e-12 <= target <= hi_dp + 1e-12:
        raise ValueError(f"target {target} outside attainable range [{lo_dp}, {hi_dp}]")
    if target <= lo_dp:
        return 1.0
    if target >= hi_dp:
        return -1.0
    return float(optimize.brentq(lambda r: dp_from_rho(model.with_rho(r)) - target, -1.0, 1.0, xtol=xtol, rtol=4 * np.finfo(float).eps))


def od_dp_convert(delta_te: float, dp_bar: float, q: float) -> float:
    """Outcome-disparity bound implied by a disagreement bound: ``delta_te * dp_bar * q``."""
    if delta_te < 0 or dp_bar < 0:
        raise ValueError("inputs must be non-negative")
    if not 0.0 < q <= 1.0:
        raise ValueError("q must lie in (0, 1]")
    return delta_te * dp_bar * q


def dp_from_od(od_bar: float, delta_te: float, q: float) -> float:
    if delta_te == 0 or q == 0:
        raise ZeroDivisionError("delta_te and q must be non-zero to invert")
    return od_bar / (delta_te * q)


def delta_te_from_od(od_bar: float, dp_bar: float, q: float) -> float:
    if dp_bar == 0 or q == 0:
        raise ZeroDivisionError("dp_bar and q must be non-zero to invert")
    return od_bar / (dp_bar * q)


# ---------------------------------------------------------------------------
# Correlation from joint votes of judge pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairStat:
    pair_id: str
    rate_a: float
    rate_b: float
    joint_rate: float
    n_cases: float


def rho_for_pair(rate_a: float, rate_b: float, joint: float, tol: float = 1e-12) -> float:
    """Correlation making the joint release rate of two judges equal ``joint``."""
    lo = max(0.0, rate_a + rate_b - 1.0)
    hi = min(rate_a, rate_b)
    if joint < lo - tol or joint > hi + tol:
        raise ValueError(f"joint rate {joint} outside Fréchet bounds [{lo}, {hi}]")
    if joint >= hi - tol:
        return 1.0
    if joint <= lo + tol:
        return -1.0
    a, b = float(ndtri(rate_a)), float(ndtri(rate_b))
    return float(optimize.brentq(lambda r: bvn_orthant(r, a, b) - joint, -1.0, 1.0, xtol=1e-13, rtol=4 * np.finfo(float).eps))


def read_pair_stats(path) -> list[PairStat]:
    """Read a CSV with columns pair_id, rate_a, rate_b, joint_rate, n_cases."""
    need = ["pair_id", "rate_a", "rate_b", "joint_rate", "n_cases"]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in need if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"pair statistics file is missing columns {missing}")
        return [
            PairStat(row["pair_id"], float(row["rate_a"]), float(row["rate_b"]), float(row["joint_rate"]), float(row["n_cases"]))
            for row in reader
        ]


def rho_from_panel_votes(pairs) -> float:
    """Caseload-weighted average of per-pair correlations.

    ``pairs`` is a sequence of :class:`PairStat` (or a CSV path).  Pairs whose
    joint rate violates the Fréchet bounds are skipped with a warning.
    """
    if isinstance(pairs, (str, bytes)) or hasattr(pairs, "__fspath__"):
        pairs = read_pair_stats(pairs)
    rhos, weights = [], []
    for p in pairs:
        try:
            rhos.append(rho_for_pair(p.rate_a, p.rate_b, p.joint_rate))
            weights.append(p.n_cases)
        except ValueError as exc:
            warnings.warn(f"pair {p.pair_id} skipped: {exc}", RuntimeWarning, stacklevel=2)
    if not rhos:
        raise ValueError("no usable judge pairs")
    w = np.asarray(weights, dtype=float)
    return float(w @ np.asarray(rhos) / w.sum())
