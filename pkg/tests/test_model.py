import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from policybounds.model import (
    BENCHMARK_GROUP,
    QUOTA_GROUP,
    DataDistribution,
    JudgeCell,
    KnownY0,
    ModelError,
    OutcomeGrid,
    PairwiseDisagreement,
    PolicyMonotonicity,
    PolicySpec,
    RestrictionSet,
    assign_leniency_groups,
    discretize_outcome,
    pool_judges,
    quantile_grid,
    validate_instance,
)


def judge(jid, share, n, group, table, grid=(0.0, 1.0)):
    pmf = np.zeros((len(grid), 2))
    for (y, d), p in table.items():
        pmf[list(grid).index(y), d] = p
    return JudgeCell(jid, share, n, group, pmf)


def test_grid_invariants():
    assert len(OutcomeGrid((0, 0.5, 1))) == 3
    with pytest.raises(ModelError):
        OutcomeGrid(())
    with pytest.raises(ModelError):
        OutcomeGrid((1.0, 0.0))
    with pytest.raises(ModelError):
        OutcomeGrid((0.0, 0.0))
    with pytest.raises(ModelError):
        OutcomeGrid((0.0, np.inf))


def test_single_judge_valid():
    d = DataDistribution((judge("a", 1.0, 10, "Q", {(1, 1): 0.5, (0, 0): 0.5}),), OutcomeGrid((0, 1)))
    rep = validate_instance(d)
    assert rep.ok and not rep.issues
    np.testing.assert_array_equal(rep.data.pmf, d.pmf)


def test_shares_off_is_fatal():
    d = DataDistribution(
        (
            judge("a", 0.45, 10, "Q", {(1, 1): 0.5, (0, 0): 0.5}),
            judge("b", 0.45, 10, "Q", {(1, 1): 0.5, (0, 0): 0.5}),
        ),
        OutcomeGrid((0, 1)),
    )
    rep = validate_instance(d)
    assert not rep.ok
    assert rep.data is None
    with pytest.raises(ModelError):
        rep.raise_if_fatal()


def test_tiny_negative_is_repaired():
    d = DataDistribution(
        (judge("a", 1.0, 10, "Q", {(1, 1): 0.5, (0, 1): -1e-12, (0, 0): 0.5 + 1e-12}),), OutcomeGrid((0, 1))
    )
    rep = validate_instance(d, tol=1e-9)
    assert rep.ok and rep.repaired
    assert rep.data.pmf.min() == 0.0
    assert rep.data.pmf.sum() == pytest.approx(1.0, abs=1e-15)
    # repairing a repaired instance changes nothing
    again = validate_instance(rep.data)
    assert again.ok and not again.repaired
    np.testing.assert_allclose(again.data.pmf, rep.data.pmf, atol=1e-15)


def test_large_negative_is_fatal():
    d = DataDistribution((judge("a", 1.0, 10, "Q", {(1, 1): 0.6, (0, 1): -0.1, (0, 0): 0.5}),), OutcomeGrid((0, 1)))
    assert not validate_instance(d).ok


def test_n_cases_below_one_is_fatal():
    d = DataDistribution((judge("a", 1.0, 0.5, "Q", {(1, 1): 0.5, (0, 0): 0.5}),), OutcomeGrid((0, 1)))
    assert not validate_instance(d).ok


def test_duplicate_ids_rejected():
    j = judge("a", 0.5, 10, "Q", {(1, 1): 1.0})
    with pytest.raises(ModelError):
        DataDistribution((j, j), OutcomeGrid((0, 1)))


def test_pool_min_cases_zero_is_identity():
    d = DataDistribution.from_tables([0, 1], {"a": {(1, 1): 1.0}, "b": {(0, 0): 1.0}})
    assert pool_judges(d, 0) is d


def test_pool_two_small_judges():
    d = DataDistribution(
        (
            judge("a", 0.2, 100, "Q", {(1, 1): 0.2, (0, 1): 0.3, (0, 0): 0.5}),
            judge("b", 0.3, 100, "Q", {(1, 1): 0.4, (0, 1): 0.4, (0, 0): 0.2}),
            judge("c", 0.5, 500, "Q", {(1, 1): 0.1, (0, 0): 0.9}),
        ),
        OutcomeGrid((0, 1)),
    )
    pooled = pool_judges(d, 300)
    assert pooled.ids == ["c", "pooled_Q"]
    p = pooled.judges[1]
    # equal caseloads: plain average of the two pmfs
    assert p.pmf[1, 1] == pytest.approx(0.3)
    assert p.pmf[0, 1] == pytest.approx(0.35)
    assert p.pmf[0, 0] == pytest.approx(0.35)
    assert p.share == pytest.approx(0.5)
    assert p.n_cases == 200


def test_pool_respects_groups():
    d = DataDistribution(
        (
            judge("a", 0.25, 100, QUOTA_GROUP, {(1, 1): 1.0}),
            judge("b", 0.25, 100, BENCHMARK_GROUP, {(0, 1): 1.0}),
            judge("c", 0.5, 500, QUOTA_GROUP, {(0, 0): 1.0}),
        ),
        OutcomeGrid((0, 1)),
    )
    pooled = pool_judges(d, 300, within_group=True)
    assert sorted(pooled.ids) == ["c", "pooled_Q", "pooled_Qc"]
    merged = pool_judges(d, 300, within_group=False)
    assert sorted(merged.ids) == ["c", "pooled"]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pool_preserves_aggregate_when_shares_follow_caseloads(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 7))
    n = rng.integers(50, 600, K).astype(float)
    shares = n / n.sum()
    groups = rng.choice([QUOTA_GROUP, BENCHMARK_GROUP], K)
    judges = tuple(
        JudgeCell(str(z), shares[z], n[z], groups[z], rng.dirichlet(np.ones(6)).reshape(3, 2)) for z in range(K)
    )
    d = DataDistribution(judges, OutcomeGrid((0, 1, 2)))
    pooled = pool_judges(d, 300, within_group=bool(rng.integers(2)))
    np.testing.assert_allclose(pooled.aggregate_pmf(), d.aggregate_pmf(), atol=1e-14)
    assert pooled.shares.sum() == pytest.approx(1.0)
    assert pooled.n_cases.sum() == pytest.approx(n.sum())


def test_discretize_identity():
    d = DataDistribution.from_tables([0, 1], {"a": {(1, 1): 0.3, (0, 0): 0.7}})
    out = discretize_outcome(d, OutcomeGrid((0, 1)), "up")
    np.testing.assert_array_equal(out.pmf, d.pmf)


def test_discretize_single_level_up():
    d = DataDistribution.from_tables([0.4], {"a": {(0.4, 1): 1.0}})
    out = discretize_outcome(d, OutcomeGrid((0, 1)), "up")
    np.testing.assert_array_equal(out.pmf[0], [[0.0, 0.0], [0.0, 1.0]])


def test_discretize_mixed_support():
    tab = {(0.0, 1): 0.1, (0.3, 1): 0.2, (0.7, 0): 0.3, (1.0, 0): 0.4}
    d = DataDistribution.from_tables([0, 0.3, 0.7, 1], {"a": tab})
    up = discretize_outcome(d, OutcomeGrid((0, 0.5, 1)), "up")
    # 0 -> 0, 0.3 -> 0.5, 0.7 -> 1, 1 -> 1
    np.testing.assert_allclose(up.pmf[0], [[0.0, 0.1], [0.0, 0.2], [0.7, 0.0]])
    down = discretize_outcome(d, OutcomeGrid((0, 0.5, 1)), "down")
    np.testing.assert_allclose(down.pmf[0], [[0.0, 0.3], [0.3, 0.0], [0.4, 0.0]])
    assert up.pmf.sum() == pytest.approx(1.0)


def test_discretize_outside_span():
    d = DataDistribution.from_tables([0, 2], {"a": {(2, 1): 1.0}})
    with pytest.raises(ModelError):
        discretize_outcome(d, OutcomeGrid((0, 1)), "up")
    with pytest.raises(ModelError):
        discretize_outcome(d, OutcomeGrid((0, 1)), "sideways")


def test_quantile_grid_keeps_endpoints():
    y = np.linspace(0, 1, 50)
    tab = {(v, 1): 1 / 50 for v in y}
    d = DataDistribution.from_tables(y, {"a": tab})
    g = quantile_grid(d, 5)
    assert g.values[0] == 0.0 and g.values[-1] == 1.0
    assert len(g) <= 5


def test_leniency_groups():
    d = DataDistribution.from_tables(
        [0, 1],
        {"a": {(1, 1): 0.9, (0, 0): 0.1}, "b": {(1, 1): 0.5, (0, 0): 0.5}, "c": {(1, 1): 0.2, (0, 0): 0.8}},
        n_cases={"a": 100, "b": 800, "c": 100},
    )
    g = assign_leniency_groups(d, top_share=0.1)
    assert g.groups == [BENCHMARK_GROUP, QUOTA_GROUP, QUOTA_GROUP]


def test_quota_resolution():
    d = DataDistribution.from_tables(
        [0, 1], {"a": {(1, 1): 0.3, (0, 0): 0.7}, "b": {(1, 1): 0.8, (0, 0): 0.2}}
    )
    res = PolicySpec.quota(0.5).resolve(d)
    np.testing.assert_allclose(res.rates, [0.5, 0.8])
    assert list(res.unchanged) == [False, True]
    assert res.counterfactual_rate(d) == pytest.approx(0.65)


def test_quota_default_uses_benchmark_rate():
    d = DataDistribution.from_tables(
        [0, 1],
        {"a": {(1, 1): 0.3, (0, 0): 0.7}, "b": {(1, 1): 0.8, (0, 0): 0.2}},
        groups={"a": QUOTA_GROUP, "b": BENCHMARK_GROUP},
    )
    res = PolicySpec.quota().resolve(d)
    np.testing.assert_allclose(res.rates, [0.8, 0.8])


@pytest.mark.parametrize(
    "policy",
    [PolicySpec.per_judge([0.5]), PolicySpec.per_judge([1.2, 0.5]), PolicySpec.quota(1.5), PolicySpec.average(-0.1)],
)
def test_bad_policies(policy):
    d = DataDistribution.from_tables([0, 1], {"a": {(1, 1): 0.3, (0, 0): 0.7}, "b": {(1, 1): 0.8, (0, 0): 0.2}})
    with pytest.raises(ModelError):
        policy.resolve(d)


def test_reallocation_shares():
    d = DataDistribution.from_tables(
        [0, 1],
        {"a": {(1, 1): 0.3, (0, 0): 0.7}, "b": {(1, 1): 0.8, (0, 0): 0.2}},
        n_cases={"a": 100, "b": 300},
        groups={"a": QUOTA_GROUP, "b": BENCHMARK_GROUP},
    )
    res = PolicySpec.reallocation(BENCHMARK_GROUP).resolve(d)
    np.testing.assert_allclose(res.objective_shares, [0.0, 1.0])
    assert res.unchanged.all()


def test_restriction_invariants():
    with pytest.raises(ModelError):
        PairwiseDisagreement("a", "b", delta=1.5)
    with pytest.raises(ModelError):
        PairwiseDisagreement("a", "b", a=2)
    rs = RestrictionSet([PolicyMonotonicity(), KnownY0(0.0)])
    assert rs.has(KnownY0) and len(rs) == 2
    assert not rs.without(KnownY0).has(KnownY0)
