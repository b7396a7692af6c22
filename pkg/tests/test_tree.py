import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcace.simulation import generate_dataset, scenario
from hcace.tree import TreeConfig, fit_tree, grouping_from_tree

from oracles import exhaustive_first_split

LOOSE = TreeConfig(complexity_parameter=0.0, min_split=2, min_bucket=1, max_depth=30)


def test_hand_example_single_split():
    y = np.array([5.0, 5.0, 1.0, 1.0])
    x = np.array([[1.0], [1.0], [0.0], [0.0]])
    tree = fit_tree(y, x, TreeConfig(complexity_parameter=0.01, min_split=2, min_bucket=1))
    assert tree.n_leaves == 2
    assert tree.root.ss == 16.0 and tree.root.improvement == pytest.approx(16.0)
    assert tree.root.feature == 0 and tree.root.threshold == 0.5
    assert all(leaf.ss == 0.0 for leaf in tree.leaves())


def test_constant_response_no_split(rng):
    tree = fit_tree(np.ones(50), rng.normal(size=(50, 3)), LOOSE)
    assert tree.n_leaves == 1 and tree.root.is_leaf


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 12), st.integers(1, 3), st.integers(1, 3))
def test_first_split_matches_exhaustive_search(seed, n, p, min_bucket):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 4, size=(n, p)).astype(float)
    y = np.abs(rng.normal(size=n))
    cfg = TreeConfig(complexity_parameter=0.0, min_split=max(2, min_bucket), min_bucket=min_bucket, max_depth=1)
    tree = fit_tree(y, x, cfg)
    ref = exhaustive_first_split(y, x, min_bucket)
    if ref is None or ref[0] <= 1e-12 * tree.root.ss:
        assert tree.root.is_leaf
        return
    assert (tree.root.feature, tree.root.threshold) == (ref[1], ref[2])
    assert tree.root.improvement == pytest.approx(ref[0], rel=1e-9, abs=1e-12)


def test_categorical_split_groups_levels_by_mean():
    codes = np.repeat([0, 1, 2, 3], 5).astype(float)
    level_means = {0: 3.0, 1: 0.0, 2: 3.1, 3: 0.1}
    y = np.array([level_means[int(c)] for c in codes])
    tree = fit_tree(y, codes[:, None], TreeConfig(0.0, 2, 1, 1), ["grp"],
                    categorical={0: ("a", "b", "c", "d")})
    assert set(tree.root.left_levels) == {1.0, 3.0}
    assert tree.root.left.rule == "grp in {b, d}"


def test_categorical_beats_numeric_ordering():
    # level means are non-monotone in the code, so only the categorical
    # treatment isolates levels {0, 2}
    codes = np.repeat([0, 1, 2], 6).astype(float)
    y = np.where(codes == 1, 0.0, 5.0) + np.tile([0.0, 0.1], 9)
    cat = fit_tree(y, codes[:, None], TreeConfig(0.0, 2, 1, 1), categorical={0: ("p", "q", "r")})
    num = fit_tree(y, codes[:, None], TreeConfig(0.0, 2, 1, 1))
    assert cat.root.improvement > num.root.improvement


def test_stopping_rules(rng):
    x = rng.normal(size=(200, 2))
    y = np.abs(rng.normal(size=200)) + (x[:, 0] > 0)
    tree = fit_tree(y, x, TreeConfig(0.0, 20, 7, 3))
    assert max(nd.depth for nd in tree.nodes()) <= 3
    assert all(leaf.n >= 7 for leaf in tree.leaves())
    for nd in tree.internal_nodes():
        assert nd.n >= 20
    big_cp = fit_tree(y, x, TreeConfig(0.9, 20, 7, 3))
    assert big_cp.n_leaves == 1


def test_cp_admission_threshold(rng):
    x = rng.normal(size=(300, 3))
    y = np.abs(rng.normal(size=300)) + 0.3 * (x[:, 1] > 0)
    cfg = TreeConfig(0.01, 20, 7, 30)
    tree = fit_tree(y, x, cfg)
    for nd in tree.internal_nodes():
        assert nd.improvement >= 0.01 * tree.root.ss


def test_grouping_from_single_leaf(rng):
    g = grouping_from_tree(fit_tree(np.ones(10), rng.normal(size=(10, 1)), LOOSE))
    assert g.n_leaves == 1 and g.leaves[0].tolist() == list(range(10))


def test_grouping_from_one_split():
    y = np.r_[np.zeros(10), np.ones(10)]
    x = np.r_[np.zeros(10), np.ones(10)][:, None]
    g = grouping_from_tree(fit_tree(y, x, TreeConfig(0.0, 20, 7, 1)))
    assert g.n_leaves == 2
    assert sorted(np.r_[g.leaves[0], g.leaves[1]].tolist()) == list(range(20))
    assert g.provenance == ("x1 < 0.5", "x1 >= 0.5")


def test_leaf_ids_in_left_to_right_order(rng):
    x = rng.normal(size=(400, 3))
    y = np.abs(rng.normal(size=400)) + (x[:, 0] > 0) + 2 * (x[:, 1] > 0.5)
    tree = fit_tree(y, x, TreeConfig(0.0, 20, 7, 3))
    assert [leaf.leaf_ids[0] for leaf in tree.leaves()] == list(range(tree.n_leaves))
    for nd in tree.internal_nodes():
        assert nd.leaf_ids == nd.left.leaf_ids + nd.right.leaf_ids


def test_invariant_to_within_pair_rerandomization_under_sharp_null():
    cfg = scenario("no").replace(n_pairs=600, compliance=0.6)
    for seed in range(10):
        sim = generate_dataset(cfg, seed)
        base = sim.pairs
        other = sim.realize(1 - sim.treated_unit)
        t1 = fit_tree(np.abs(base.adjusted(0.5)), base.x, TreeConfig(0.0, 20, 7, 4))
        t2 = fit_tree(np.abs(other.adjusted(0.5)), other.x, TreeConfig(0.0, 20, 7, 4))
        assert [(n.feature, n.threshold) for n in t1.nodes()] == [(n.feature, n.threshold) for n in t2.nodes()]


def test_ohie_shaped_depth_four_tree():
    sim = generate_dataset(scenario("ohie-large"), 0)
    d = sim.pairs
    tree = fit_tree(np.abs(d.adjusted(0.0)), d.x, TreeConfig(0.001, 90, 30, 4), d.covariate_names)
    assert 4 <= tree.n_leaves <= 16
    assert "age" in {d.covariate_names[j] for j in tree.split_features()}


def test_text_and_dot_exports():
    y = np.r_[np.zeros(10), np.ones(10)]
    x = np.r_[np.zeros(10), np.ones(10)][:, None]
    tree = fit_tree(y, x, TreeConfig(0.0, 20, 7, 1), ["edu"])
    text = tree.to_text().splitlines()
    assert text[0].startswith("node\tparent") and len(text) == 4
    dot = tree.to_dot(rejected={0: True, 1: False, 2: True})
    assert dot.startswith("digraph") and "n0 -> n1;" in dot
    assert 'style=dashed' in dot.splitlines()[3]


def test_config_validation():
    with pytest.raises(ValueError):
        TreeConfig(complexity_parameter=-1)
    with pytest.raises(ValueError):
        TreeConfig(min_split=5, min_bucket=6)
