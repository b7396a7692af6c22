"""ANOVA regression tree grown on absolute adjusted pair differences.

Growth follows rpart's anova method without the pruning pass: a node is
split when it holds at least ``min_split`` pairs, sits above
``max_depth``, and its best split lowers the sum of squares by at least
``cp`` times the root sum of squares while leaving ``min_bucket`` pairs
on each side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Grouping


@dataclass(frozen=True)
class TreeConfig:
    complexity_parameter: float = 0.005
    min_split: int = 20
    min_bucket: int = 7
    max_depth: int = 30

    def __post_init__(self):
        if self.complexity_parameter < 0:
            raise ValueError("complexity_parameter must be >= 0")
        if self.min_bucket < 1 or self.min_split < 1:
            raise ValueError("min_split and min_bucket must be positive")
        if self.min_bucket > self.min_split:
            raise ValueError("min_bucket must not exceed min_split")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    @classmethod
    def ohie_analysis(cls) -> "TreeConfig":
        return cls(complexity_parameter=0.0, max_depth=4)

    @classmethod
    def liberal(cls) -> "TreeConfig":
        """Small cp and depth 4, used for the error-rate simulations."""
        return cls(complexity_parameter=0.0001, max_depth=4)

    @classmethod
    def ohie_simulation(cls) -> "TreeConfig":
        return cls(complexity_parameter=0.001, min_split=90, min_bucket=30, max_depth=7)


@dataclass(eq=False)
class TreeNode:
    id: int
    depth: int
    indices: np.ndarray
    mean: float
    ss: float
    rule: str = ""
    path: tuple[str, ...] = ()
    feature: int | None = None
    threshold: float | None = None
    left_levels: tuple[int, ...] | None = None
    improvement: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_ids: tuple[int, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def n(self) -> int:
        return self.indices.size

    def description(self) -> str:
        return " & ".join(self.path) if self.path else "all pairs"


@dataclass(eq=False)
class FittedTree:
    root: TreeNode
    config: TreeConfig
    covariate_names: tuple[str, ...]
    categorical: dict = field(default_factory=dict)
    n_pairs: int = 0

    def nodes(self) -> list[TreeNode]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)
        return out

    def leaves(self) -> list[TreeNode]:
        return [nd for nd in self.nodes() if nd.is_leaf]

    def internal_nodes(self) -> list[TreeNode]:
        return [nd for nd in self.nodes() if not nd.is_leaf]

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    def split_features(self) -> set[int]:
        return {nd.feature for nd in self.internal_nodes()}

    def to_text(self) -> str:
        lines = ["node\tparent\tdepth\tn\tmean_abs_y\tsplit\tleaf"]
        parent = {}
        for nd in self.nodes():
            if not nd.is_leaf:
                parent[nd.left.id] = nd.id
                parent[nd.right.id] = nd.id
        for nd in self.nodes():
            split = "" if nd.is_leaf else _split_text(self, nd)
            leaf = str(nd.leaf_ids[0] + 1) if nd.is_leaf else ""
            lines.append(f"{nd.id}\t{parent.get(nd.id, '')}\t{nd.depth}\t{nd.n}\t"
                         f"{nd.mean:.6g}\t{split}\t{leaf}")
        return "\n".join(lines) + "\n"

    def to_dot(self, labels: dict | None = None, rejected: dict | None = None) -> str:
        """Graphviz source; ``rejected`` maps node id to a bool for solid/dashed boxes."""
        labels = labels or {}
        rejected = rejected or {}
        out = ["digraph hcace_tree {", '  node [shape=box, fontname="Helvetica"];']
        for nd in self.nodes():
            text = labels.get(nd.id, f"n = {nd.n}\\nmean |Y| = {nd.mean:.3g}")
            head = nd.rule or "all pairs"
            style = "dashed" if rejected.get(nd.id) is False else "solid"
            head = head.replace('"', "'")
            out.append(f'  n{nd.id} [label="{head}\\n{text}", style={style}];')
        for nd in self.nodes():
            if not nd.is_leaf:
                out.append(f"  n{nd.id} -> n{nd.left.id};")
                out.append(f"  n{nd.id} -> n{nd.right.id};")
        out.append("}")
        return "\n".join(out) + "\n"


def _split_text(tree: FittedTree, nd: TreeNode) -> str:
    name = tree.covariate_names[nd.feature]
    if nd.left_levels is not None:
        return f"{name} in {_level_names(tree, nd.feature, nd.left_levels)}"
    return f"{name} < {nd.threshold:.6g}"


def _level_names(tree, feature, levels) -> str:
    names = tree.categorical.get(feature) or tree.categorical.get(tree.covariate_names[feature])
    if names:
        return "{" + ", ".join(str(names[int(v)]) for v in levels) + "}"
    return "{" + ", ".join(f"{v:g}" for v in levels) + "}"


def _best_split(y, x, idx, categorical_cols, min_bucket):
    """Best (improvement, feature, threshold, left_levels, left_mask) at a node."""
    yn = y[idx]
    n = yn.size
    yc = yn - yn.mean()
    node_ss = float(yc @ yc)
    tol = 1e-10 * node_ss
    best = None
    nl = np.arange(1, n)
    size_ok = (nl >= min_bucket) & (n - nl >= min_bucket)
    if not size_ok.any():
        return None
    weight = n / (nl * (n - nl))
    for j in range(x.shape[1]):
        xj = x[idx, j]
        if j in categorical_cols:
            levels = np.unique(xj)
            if levels.size < 2:
                continue
            means = np.array([yn[xj == lv].mean() for lv in levels])
            order_levels = levels[np.lexsort((levels, means))]
            rank = np.empty(levels.size)
            rank[np.searchsorted(levels, order_levels)] = np.arange(levels.size)
            key = rank[np.searchsorted(levels, xj)]
        else:
            key = xj
        order = np.argsort(key, kind="stable")
        ks = key[order]
        cs = np.cumsum(yc[order])[:-1]
        valid = size_ok & (ks[:-1] < ks[1:])
        if not valid.any():
            continue
        imp = np.where(valid, cs * cs * weight, -np.inf)
        top = imp.max()
        k = int(np.flatnonzero(imp >= top - tol)[0])
        if best is not None and not top > best[0] + tol:
            continue
        if j in categorical_cols:
            left_levels = tuple(float(v) for v in order_levels[: int(ks[k]) + 1])
            mask = np.isin(xj, left_levels)
            best = (float(top), j, None, left_levels, mask)
        else:
            thr = (ks[k] + ks[k + 1]) / 2.0
            best = (float(top), j, float(thr), None, xj < thr)
    return best


def fit_tree(abs_diffs, covariates, config: TreeConfig | None = None,
             covariate_names=None, categorical: dict | None = None) -> FittedTree:
    """Grow the tree on ``abs_diffs`` (any real response works) against pair covariates.

    ``categorical`` maps a column index to its level names; those columns
    hold integer codes and are split by ordering levels on mean response.
    """
    config = config or TreeConfig()
    y = np.asarray(abs_diffs, dtype=float)
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] != y.size:
        raise ValueError("covariates and responses have different lengths")
    if not np.all(np.isfinite(y)):
        raise ValueError("responses must be finite")
    names = tuple(covariate_names) if covariate_names else tuple(f"x{j + 1}" for j in range(x.shape[1]))
    categorical = dict(categorical or {})
    cat_cols = {k if isinstance(k, int) else names.index(k) for k in categorical}

    def make(idx, depth, rule, path):
        yn = y[idx]
        mean = float(yn.mean()) if idx.size else float("nan")
        ss = float(np.sum((yn - mean) ** 2)) if idx.size else 0.0
        return TreeNode(-1, depth, idx, mean, ss, rule, path)

    root = make(np.arange(y.size), 0, "", ())
    root_ss = root.ss
    threshold = config.complexity_parameter * root_ss

    stack = [root]
    while stack:
        node = stack.pop()
        if node.n < config.min_split or node.depth >= config.max_depth or node.ss <= 0:
            continue
        found = _best_split(y, x, node.indices, cat_cols, config.min_bucket)
        if found is None:
            continue
        imp, j, thr, levels, mask = found
        if imp < threshold or imp <= 1e-12 * root_ss:
            continue
        name = names[j]
        if levels is not None:
            tmp = FittedTree(root, config, names, categorical)
            left_rule = f"{name} in {_level_names(tmp, j, levels)}"
            right_rule = f"{name} not in {_level_names(tmp, j, levels)}"
        else:
            left_rule, right_rule = f"{name} < {thr:.6g}", f"{name} >= {thr:.6g}"
        node.feature, node.threshold, node.left_levels, node.improvement = j, thr, levels, imp
        node.left = make(node.indices[mask], node.depth + 1, left_rule, node.path + (left_rule,))
        node.right = make(node.indices[~mask], node.depth + 1, right_rule, node.path + (right_rule,))
        stack.append(node.right)
        stack.append(node.left)

    tree = FittedTree(root, config, names, categorical, y.size)
    _number(tree)
    return tree


def _number(tree: FittedTree) -> None:
    leaf_count = 0
    for i, nd in enumerate(tree.nodes()):
        nd.id = i
        if nd.is_leaf:
            nd.leaf_ids = (leaf_count,)
            leaf_count += 1

    def collect(nd):
        if nd.is_leaf:
            return nd.leaf_ids
        nd.leaf_ids = collect(nd.left) + collect(nd.right)
        return nd.leaf_ids

    collect(tree.root)


def grouping_from_tree(tree: FittedTree) -> Grouping:
    leaves = tree.leaves()
    return Grouping(tuple(nd.indices for nd in leaves), tree.n_pairs,
                    tuple(nd.description() for nd in leaves))
