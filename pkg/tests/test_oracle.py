import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import random_model
from policybounds.effects import pc_effect_fractional
from policybounds.model import KnownY0, ModelError, PolicyMonotonicity, PolicySpec
from policybounds.oracle import (
    IV_MONOTONICITY,
    POLICY_INVARIANCE,
    POLICY_MONOTONICITY,
    closed_form_cdf_bounds,
    complier_effect_bounds,
    enumerate_types,
    monotonicity_helps_example,
    solve_type_lp,
    type_space_for,
)


@pytest.mark.parametrize(
    "K,filters,count",
    [
        (1, (), 4),
        (2, (), 16),
        (3, (), 64),
        (3, (POLICY_MONOTONICITY,), 27),
        # d0 is a threshold in leniency order (K+1 ways), d1 >= d0 on each judge
        (3, (POLICY_MONOTONICITY, IV_MONOTONICITY), 15),
        (2, (IV_MONOTONICITY,), 12),
        (3, (POLICY_INVARIANCE,), 7),
    ],
)
def test_type_counts(K, filters, count):
    ts = enumerate_types(K, filters)
    assert len(ts) == count
    assert ts.types.shape == (count, K, 2)
    assert len({t.tobytes() for t in ts.types}) == count


def test_iv_monotonicity_follows_leniency():
    # judge 1 is the harsher one, so anyone judge 1 releases judge 0 releases
    ts = enumerate_types(2, (IV_MONOTONICITY,), leniency=[0.8, 0.2])
    assert np.all(ts.types[:, 0, 0] >= ts.types[:, 1, 0])


def test_enumeration_guards():
    with pytest.raises(ModelError):
        enumerate_types(9)
    with pytest.raises(ModelError):
        enumerate_types(2, ("sorcery",))
    with pytest.raises(ModelError):
        enumerate_types(0)


def test_monotonicity_helps_example():
    data = monotonicity_helps_example()
    alpha = data.mean_d + 0.01
    pol = PolicySpec.average(alpha)
    rs = [PolicyMonotonicity()]
    ivm = solve_type_lp(data, pol, rs, type_space_for(data, pol, [POLICY_MONOTONICITY, IV_MONOTONICITY]))
    free = solve_type_lp(data, pol, rs, type_space_for(data, pol, [POLICY_MONOTONICITY]))
    assert ivm.diagnostics["n_types"] == 7
    assert free.diagnostics["n_types"] == 9
    assert complier_effect_bounds(ivm, data, alpha) == pytest.approx((-1.0, 0.0), abs=1e-6)
    assert complier_effect_bounds(free, data, alpha) == pytest.approx((-1.0, 1.0), abs=1e-6)
    # the marginal LP cannot see IV monotonicity
    frac = pc_effect_fractional(data, pol, rs)
    assert (frac.lower, frac.upper) == pytest.approx((-1.0, 1.0), abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_closed_form_matches_ivm_type_lp(seed):
    rng = np.random.default_rng(seed)
    K, n = int(rng.integers(2, 5)), int(rng.integers(2, 4))
    data, _, _ = random_model(rng, K, n, ivm=True, known_y0=True)
    alpha = float(rng.uniform(data.mean_d + 1e-3, 1.0))
    pol = PolicySpec.average(alpha)
    rs = [PolicyMonotonicity(), KnownY0(0.0)]
    m = solve_type_lp(data, pol, rs, type_space_for(data, pol, [POLICY_MONOTONICITY, IV_MONOTONICITY]))
    f = solve_type_lp(data, pol, rs, type_space_for(data, pol, [POLICY_MONOTONICITY]))
    cf = closed_form_cdf_bounds(data, alpha)
    assert m.ok and f.ok
    assert cf.theta == pytest.approx((m.lower, m.upper), abs=1e-7)
    assert (f.lower, f.upper) == pytest.approx((m.lower, m.upper), abs=1e-7)
    assert np.all(cf.F_lb <= cf.F_ub + 1e-12)
    assert np.all(np.diff(cf.F_lb) >= -1e-12) and np.all(np.diff(cf.F_ub) >= -1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ivm_adds_nothing_under_strong_encouragement(seed):
    rng = np.random.default_rng(seed)
    K, n = int(rng.integers(2, 4)), int(rng.integers(2, 4))
    data, _, _ = random_model(rng, K, n, ivm=True)
    amax = float(data.release_rates.max())
    alpha = float(rng.uniform(amax, 1.0))
    pol = PolicySpec.average(alpha)
    rs = [PolicyMonotonicity()]
    m = solve_type_lp(
        data, pol, rs, type_space_for(data, pol, [POLICY_MONOTONICITY, IV_MONOTONICITY]), strong_encouragement=True
    )
    f = solve_type_lp(data, pol, rs, type_space_for(data, pol, [POLICY_MONOTONICITY]), strong_encouragement=True)
    assert m.ok and f.ok
    assert (f.lower, f.upper) == pytest.approx((m.lower, m.upper), abs=1e-7)


def test_closed_form_guards():
    data = monotonicity_helps_example()
    with pytest.raises(ModelError):
        closed_form_cdf_bounds(data, data.mean_d)
    with pytest.raises(ModelError):
        closed_form_cdf_bounds(data, 1.5)


def test_status_quo_type_lp_is_point():
    rng = np.random.default_rng(3)
    data, _, _ = random_model(rng, 2, 3)
    r = solve_type_lp(data, PolicySpec.status_quo(), [PolicyMonotonicity()])
    assert (r.lower, r.upper) == pytest.approx((data.mean_y, data.mean_y), abs=1e-9)
