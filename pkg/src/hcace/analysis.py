"""One-call pipeline: adjusted differences, tree, closed test, node table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .closed_testing import ClosedTestReport, run_closed_test
from .core import Grouping, PairData, as_pair_data
from .inference import IvEstimate, hl_estimate
from .tree import FittedTree, TreeConfig, fit_tree, grouping_from_tree


@dataclass(frozen=True)
class NodeSummary:
    node_id: int
    description: str
    leaves: tuple[int, ...]
    n_pairs: int
    compliance: float
    estimate: IvEstimate | None
    decision: str

    @property
    def rejected(self) -> bool:
        return self.decision == "rejected"


@dataclass(eq=False)
class Analysis:
    pairs: PairData
    lambda0: float
    alpha: float
    tree: FittedTree
    grouping: Grouping
    report: ClosedTestReport
    nodes: list[NodeSummary]

    def to_dot(self) -> str:
        labels, rejected = {}, {}
        for s in self.nodes:
            est = s.estimate
            if est is None:
                body = f"I_s = {s.n_pairs}"
            else:
                body = (f"effect = {est.point:.3g}\\n95% CI [{est.ci_low:.3g}, {est.ci_high:.3g}]"
                        f" ({est.ci_shape})\\nI_s = {s.n_pairs}, compliance = {s.compliance:.2f}")
            labels[s.node_id] = body
            rejected[s.node_id] = s.rejected
        return self.tree.to_dot(labels, rejected)


def analyze(pairs, lambda0: float = 0.0, alpha: float = 0.05,
            tree_config: TreeConfig | None = None, use_abs: bool = True) -> Analysis:
    data = as_pair_data(pairs)
    y = data.adjusted(lambda0)
    tree = fit_tree(np.abs(y) if use_abs else y, data.x, tree_config,
                    data.covariate_names, data.categorical)
    grouping = grouping_from_tree(tree)
    report = run_closed_test(grouping, data, lambda0, alpha)
    nodes = []
    for nd in tree.nodes():
        est = hl_estimate(data, alpha, subset=nd.indices) if nd.n >= 2 else None
        comp = float(np.mean(data.treatment_diff[nd.indices])) if nd.n else float("nan")
        nodes.append(NodeSummary(nd.id, nd.description(), nd.leaf_ids, nd.n, comp, est,
                                 report.decision(nd.leaf_ids)))
    return Analysis(data, lambda0, alpha, tree, grouping, report, nodes)
