import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcace.core import (
    DataError,
    DegenerateError,
    Grouping,
    MatchedPair,
    PairData,
    PotentialUnit,
    Unit,
    adjusted_difference,
    compliance_rate,
    weighted_decomposition_check,
)
from hcace.inference import hl_estimate

from conftest import make_pairs, random_pairs


def _pair(t=(1, 1, 3.0), c=(0, 0, 1.0)):
    return MatchedPair.from_units(0, Unit("a", *t, (1.0,)), Unit("b", *c, (2.0,)))


def test_adjusted_difference_at_zero():
    res = adjusted_difference(_pair(), 0.0)
    assert res.y == 2.0 and res.y_abs == 2.0


def test_adjusted_difference_removes_hypothesized_effect():
    assert adjusted_difference(_pair(), 2.0).y == 0.0


@given(st.floats(-50, 50), st.integers(0, 1), st.floats(-10, 10))
def test_identical_units_give_zero(r, d, lam):
    pair = MatchedPair.from_units(0, Unit("a", 1, d, r), Unit("b", 0, d, r))
    assert adjusted_difference(pair, lam).y == 0.0


def test_from_units_accepts_either_order():
    a, b = Unit("a", 0, 0, 1.0, (5.0,)), Unit("b", 1, 1, 3.0, (7.0,))
    pair = MatchedPair.from_units(3, a, b)
    assert pair.treated is b and pair.pair_covariates == (7.0,)
    assert MatchedPair.from_units(3, a, b, "control").pair_covariates == (5.0,)
    assert MatchedPair.from_units(3, a, b, "mean").pair_covariates == (6.0,)


def test_from_units_rejects_same_arm():
    with pytest.raises(DataError):
        MatchedPair.from_units(0, Unit("a", 1, 1, 0.0), Unit("b", 1, 0, 0.0))


def test_unit_validation():
    with pytest.raises(DataError):
        Unit("a", 2, 0, 0.0)
    with pytest.raises(DataError):
        Unit("a", 1, 0, float("nan"))


def test_potential_unit_realize():
    u = PotentialUnit(0, 1, 0.2, 1.7, (1.0,))
    assert u.realize(1).r == 1.7 and u.realize(1).d == 1
    assert u.realize(0).r == 0.2 and u.realize(0).d == 0


def test_compliance_perfect():
    data = make_pairs([1, 2, 3], [1, 1, 1], [0, 0, 0], [0, 0, 0])
    assert compliance_rate(data) == 1.0


def test_compliance_half():
    data = make_pairs([1, 2], [1, 0], [0, 0], [0, 0])
    assert compliance_rate(data) == 0.5


def test_compliance_empty():
    with pytest.raises(DataError):
        compliance_rate([])


def test_pairdata_roundtrip_and_readonly(rng):
    data = random_pairs(rng, 15)
    again = PairData.from_pairs(data.to_pairs())
    np.testing.assert_array_equal(again.adjusted(0.3), data.adjusted(0.3))
    with pytest.raises(ValueError):
        data.r_t[0] = 1.0


def test_pairdata_rejects_nonbinary_treatment():
    with pytest.raises(DataError):
        make_pairs([1, 2], [0.5, 1], [0, 0], [0, 0])


def test_grouping_validation():
    with pytest.raises(DataError):
        Grouping((np.array([0, 1]), np.array([1, 2])), 3)
    with pytest.raises(DataError):
        Grouping((np.array([0]),), 2)
    g = Grouping((np.array([2, 0]), np.array([1])), 3)
    assert g.labels().tolist() == [0, 1, 0]
    assert g.union([1, 0]).tolist() == [0, 1, 2]


def test_decomposition_single_leaf(rng):
    data = random_pairs(rng, 30)
    pooled = hl_estimate(data).point
    assert weighted_decomposition_check(Grouping.single(30), data, [pooled]) == pytest.approx(pooled, abs=1e-12)


def _two_leaf_compliers(c1, c2, n1=10, n2=10):
    d_t = np.r_[np.ones(c1), np.zeros(n1 - c1), np.ones(c2), np.zeros(n2 - c2)]
    data = make_pairs(np.zeros(n1 + n2), d_t, np.zeros(n1 + n2), np.zeros(n1 + n2))
    return Grouping((np.arange(n1), np.arange(n1, n1 + n2)), n1 + n2), data


@pytest.mark.parametrize("estimates", [(1.25, 0.0), (1.5, -1.0)])
def test_decomposition_eighty_twenty(estimates):
    grouping, data = _two_leaf_compliers(8, 2)
    assert weighted_decomposition_check(grouping, data, estimates) == pytest.approx(1.0, abs=1e-12)


def test_decomposition_no_compliers_names_leaf():
    grouping, data = _two_leaf_compliers(5, 0)
    with pytest.raises(DegenerateError, match="leaf 1"):
        weighted_decomposition_check(grouping, data, [1.0, 1.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_decomposition_reproduces_pooled(seed, g):
    rng = np.random.default_rng(seed)
    n = 40
    data = random_pairs(rng, n, effect=rng.normal(size=n), compliance=0.7)
    labels = np.r_[np.arange(g), rng.integers(0, g, n - g)]
    leaves = tuple(np.flatnonzero(labels == k) for k in range(g))
    b = data.treatment_diff
    if any(b[s].sum() <= 0 for s in leaves) or any(s.size < 2 for s in leaves):
        return
    grouping = Grouping(leaves, n)
    ests = [hl_estimate(data, subset=s).point for s in leaves]
    assert weighted_decomposition_check(grouping, data, ests) == pytest.approx(hl_estimate(data).point, abs=1e-9)
