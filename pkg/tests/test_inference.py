import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

from instances import random_model
from policybounds.effects import RaceMoments, disparate_impact, pc_effect_fractional
from policybounds.identify import identified_set, intersection_bounds_universal
from policybounds.inference import (
    aggregate_matrix,
    cell_covariance,
    ci_delta_two_step,
    ci_projection,
    ci_universal_intersection,
    moment_band,
    supt_critical_value,
    universal_intervals,
)
from policybounds.model import DataDistribution, KnownY0, PolicyMonotonicity, PolicySpec


def known_y0_data(n_cases=2000):
    return DataDistribution.from_tables(
        [0, 1],
        {
            "A": {(1, 1): 0.15, (0, 1): 0.45, (0, 0): 0.40},
            "B": {(1, 1): 0.20, (0, 1): 0.55, (0, 0): 0.25},
        },
        n_cases={"A": n_cases, "B": n_cases},
        groups={"A": "Q", "B": "Qc"},
    )


def test_supt_one_dimension():
    # with one coordinate the sup-t value is the normal quantile up to Monte Carlo error
    cv = supt_critical_value([[1.0]], 0.95, draws=200_000, seed=0)
    assert cv == pytest.approx(ndtri(0.975), abs=0.02)
    cv1 = supt_critical_value([[1.0]], 0.95, draws=200_000, seed=0, two_sided=False)
    assert cv1 == pytest.approx(ndtri(0.95), abs=0.02)


def test_supt_perfectly_correlated_equals_one_dimension():
    a = supt_critical_value(np.ones((4, 4)), 0.9, draws=50_000, seed=3)
    b = supt_critical_value([[1.0]], 0.9, draws=50_000, seed=3)
    assert a == pytest.approx(b, abs=0.02)


def test_supt_independent_matches_sidak():
    k, level = 5, 0.95
    cv = supt_critical_value(np.eye(k), level, draws=200_000, seed=1)
    assert cv == pytest.approx(ndtri(0.5 + level ** (1 / k) / 2), abs=0.02)


def test_supt_reproducible_and_guarded():
    c = np.array([[1.0, 0.3], [0.3, 1.0]])
    assert supt_critical_value(c, 0.9, 1000, seed=5) == supt_critical_value(c, 0.9, 1000, seed=5)
    with pytest.raises(ValueError):
        supt_critical_value(c, 0.9, 1000)
    with pytest.raises(ValueError):
        supt_critical_value(c, 1.2, 1000, seed=1)
    with pytest.raises(ValueError):
        supt_critical_value([[1.0, 2.0], [2.0, 1.0]], 0.9, 1000, seed=1)
    with pytest.raises(ValueError):
        supt_critical_value([[1.0, 0.1], [0.2, 1.0]], 0.9, 1000, seed=1)


def test_cell_covariance_matches_simulation():
    data = known_y0_data(n_cases=500)
    rng = np.random.default_rng(0)
    draws = np.stack(
        [
            np.concatenate([rng.multinomial(int(j.n_cases), j.pmf.ravel()) / j.n_cases for j in data.judges])
            for _ in range(40_000)
        ]
    )
    emp = np.cov(draws, rowvar=False)
    np.testing.assert_allclose(cell_covariance(data), emp, atol=3e-5)


def test_aggregate_matrix():
    data = known_y0_data()
    G = aggregate_matrix(data)
    mu = data.pmf.reshape(-1)
    # outcome gap, quota release rate, benchmark release rate
    np.testing.assert_allclose(G @ mu, [0.15 - 0.20, 0.60, 0.75])


def test_moment_band_shape():
    data = known_y0_data()
    band = moment_band(data, seed=1, draws=2000)
    assert np.all(band.lower <= band.mu) and np.all(band.mu <= band.upper)
    assert band.G.shape == (3, 8)
    assert band.cv > ndtri(0.995)
    wide = moment_band(data, seed=1, draws=2000, se_scale=2.0)
    np.testing.assert_allclose(wide.upper - wide.mu, 2 * (band.upper - band.mu))


def test_moment_band_without_groups():
    rng = np.random.default_rng(0)
    data, _, _ = random_model(rng, 2, 2)
    band = moment_band(data, seed=1, draws=1000)
    assert band.G is None


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_projection_contains_identified_set(seed):
    rng = np.random.default_rng(seed)
    data, r1, _ = random_model(rng, 2, 2)
    pol = PolicySpec.per_judge(np.maximum(r1, data.release_rates + 0.02).clip(max=1.0))
    rs = [PolicyMonotonicity()]
    ident = identified_set(data, pol, rs)
    ci = ci_projection(data, pol, rs, seed=seed % 1000, draws=2000)
    assert ident.ok and ci.status == "ok"
    assert ci.lower <= ident.lower + 1e-9 and ident.upper <= ci.upper + 1e-9
    # the pure-cell band alone has the nominal level of the cell band
    assert ci.level == pytest.approx(0.99)


def test_projection_level_with_aggregates():
    data = known_y0_data()
    pol = PolicySpec.per_judge([0.8, 0.9])
    rs = [PolicyMonotonicity(), KnownY0(0.0)]
    ci = ci_projection(data, pol, rs, seed=2, draws=2000)
    assert ci.level == pytest.approx(1 - 0.01 - 0.04)
    ident = identified_set(data, pol, rs)
    assert ci.lower <= ident.lower and ident.upper <= ci.upper


def test_projection_pc_effect_contains_point_set():
    data = known_y0_data()
    pol = PolicySpec.per_judge([0.8, 0.9])
    rs = [PolicyMonotonicity(), KnownY0(0.0)]
    point = pc_effect_fractional(data, pol, rs)
    ci = ci_projection(data, pol, rs, seed=2, draws=2000, target="pc_effect")
    assert ci.lower <= point.lower + 1e-9 and point.upper <= ci.upper + 1e-9
    with pytest.raises(ValueError):
        ci_projection(data, pol, rs, seed=2, draws=100, target="bogus")


def test_universal_interval_contains_intersection():
    data = known_y0_data()
    ci = ci_universal_intersection(data, seed=4, draws=5000)
    pt = intersection_bounds_universal(data)
    assert ci.lower <= pt.lower and pt.upper <= ci.upper
    # judge-level lower bounds are (0.15, 0.20), upper bounds (0.55, 0.45)
    assert (pt.lower, pt.upper) == pytest.approx((0.20, 0.45))


def test_universal_intervals_shrink_with_sample_size():
    small = ci_universal_intersection(known_y0_data(500), seed=4, draws=5000)
    large = ci_universal_intersection(known_y0_data(50_000), seed=4, draws=5000)
    assert large.upper - large.lower < small.upper - small.lower
    assert large.lower == pytest.approx(0.20, abs=0.01)


def test_universal_joint_band_is_wider_than_single():
    d = known_y0_data()
    (single,), cv1 = universal_intervals([d], seed=1, draws=20_000)
    pair, cv2 = universal_intervals([d, d], seed=1, draws=20_000)
    assert cv2 > cv1
    assert pair[0][0] <= single[0] and single[1] <= pair[0][1]


def race_data():
    b = DataDistribution.from_tables(
        [0, 1], {"A": {(1, 1): 0.12, (0, 1): 0.50, (0, 0): 0.38}, "B": {(1, 1): 0.15, (0, 1): 0.60, (0, 0): 0.25}},
        n_cases={"A": 3000, "B": 3000},
    )
    w = DataDistribution.from_tables(
        [0, 1], {"A": {(1, 1): 0.08, (0, 1): 0.60, (0, 0): 0.32}, "B": {(1, 1): 0.10, (0, 1): 0.70, (0, 0): 0.20}},
        n_cases={"A": 4000, "B": 4000},
    )
    return {"b": b, "w": w}


def test_delta_two_step_contains_point_range():
    by_race = race_data()
    first = {r: (intersection_bounds_universal(d).lower, intersection_bounds_universal(d).upper) for r, d in by_race.items()}
    shares = {"b": 6000 / 14000, "w": 8000 / 14000}
    moments = {r: RaceMoments.from_data(d, shares[r]) for r, d in by_race.items()}
    point = disparate_impact(first["b"], first["w"], moments, n_grid=50)
    ci = ci_delta_two_step(by_race, first_step=first, n_grid=50)
    assert ci.lower <= point.lower and point.upper <= ci.upper
    assert ci.level == pytest.approx(0.95)
    assert ci.details["z_second_step"] == pytest.approx(ndtri(0.9975))


def test_delta_two_step_simulated_first_step():
    by_race = race_data()
    a = ci_delta_two_step(by_race, seed=3, draws=5000, n_grid=30)
    b = ci_delta_two_step(by_race, seed=3, draws=5000, n_grid=30)
    assert a.status == "ok"
    assert (a.lower, a.upper) == (b.lower, b.upper)
    fs = a.details["first_step"]
    assert fs["b"][0] <= 0.15 and fs["b"][1] >= 0.40
