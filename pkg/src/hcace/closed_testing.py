"""Closed testing over unions of tree leaves.

Every non-empty set of leaves ``L`` defines the sharp null that all pairs
in the union of those leaves satisfy ``lambda = lambda0``. Sets are
bitmasks over leaves (bit ``g`` is leaf ``g``). A set is rejected only if
it and every superset are rejected by the effect-ratio test at level
``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from .core import Grouping, as_pair_data
from .inference import IvEstimate, hl_estimate, pair_statistics

G_MAX = 16
BRUTE_FORCE_MAX = 12

UNTESTED = 0
REJECTED = 1
RETAINED = 2
SKIPPED = 3
TOO_SMALL = 4

DECISION_NAMES = {
    REJECTED: "rejected",
    RETAINED: "retained",
    SKIPPED: "skipped-by-shortcut",
    TOO_SMALL: "retained-too-few-pairs",
}


class TooManyLeavesError(ValueError):
    pass


@dataclass(frozen=True)
class SubsetHypothesis:
    leaves: tuple[int, ...]
    pairs: np.ndarray
    lambda0: float
    decision: str
    p_value: float
    z: float = float("nan")


def _subset_statistics(grouping: Grouping, v: np.ndarray):
    """Mean, z and pair count of the pooled pairs for every leaf mask.

    Sums over the leaves in each mask are built bit by bit, so the cost is
    O(2^G) vector work. Values are centred first to keep the
    sum-of-squares difference well conditioned.
    """
    g = grouping.n_leaves
    size = 1 << g
    c = float(v.mean())
    n = np.zeros(size)
    s1 = np.zeros(size)
    s2 = np.zeros(size)
    lo = np.full(size, np.inf)
    hi = np.full(size, -np.inf)
    for k, leaf in enumerate(grouping.leaves):
        w = v[leaf] - c
        a = 1 << k
        n[a:2 * a] = n[:a] + leaf.size
        s1[a:2 * a] = s1[:a] + w.sum()
        s2[a:2 * a] = s2[:a] + w @ w
        lo[a:2 * a] = np.minimum(lo[:a], v[leaf].min())
        hi[a:2 * a] = np.maximum(hi[:a], v[leaf].max())
    with np.errstate(divide="ignore", invalid="ignore"):
        t = c + s1 / n
        m2 = np.maximum(s2 - s1 * s1 / n, 0.0)
        se = np.sqrt(m2 / (n * (n - 1)))
        z = t / se
    flat = lo == hi
    t[flat] = lo[flat]
    z[flat] = np.where(lo[flat] == 0, 0.0, np.copysign(np.inf, lo[flat]))
    small = n < 2
    z[small] = np.nan
    z[0] = np.nan
    return z, n


def _superset_any(flags: np.ndarray, g: int, strict: bool) -> np.ndarray:
    """For each mask, whether ``flags`` holds at some (strict) superset."""
    sup = flags.copy()
    for k in range(g):
        view = sup.reshape(-1, 2, 1 << k)
        view[:, 0, :] |= view[:, 1, :]
    if not strict:
        return sup
    out = np.zeros_like(flags)
    for k in range(g):
        o = out.reshape(-1, 2, 1 << k)
        o[:, 0, :] |= sup.reshape(-1, 2, 1 << k)[:, 1, :]
    return out


def _members(mask: int, g: int) -> list[int]:
    return [k for k in range(g) if mask >> k & 1]


def masks_by_cardinality(g: int):
    """Non-empty masks, largest sets first, lexicographic within a size."""
    for size in range(g, 0, -1):
        for combo in combinations(range(g), size):
            yield sum(1 << k for k in combo)


@dataclass(eq=False)
class ClosedTestReport:
    grouping: Grouping
    lambda0: float
    alpha: float
    decisions: np.ndarray  # indexed by mask; entry 0 unused
    z: np.ndarray
    p_values: np.ndarray
    leaf_rejected: np.ndarray
    leaf_estimates: list[IvEstimate]
    n_tests: int

    @property
    def n_leaves(self) -> int:
        return self.grouping.n_leaves

    def mask(self, leaves) -> int:
        return sum(1 << int(k) for k in set(leaves))

    def is_rejected(self, leaves) -> bool:
        return bool(self.decisions[self.mask(leaves)] == REJECTED)

    def rejected_masks(self) -> set[int]:
        return {int(m) for m in np.flatnonzero(self.decisions == REJECTED)}

    def decision(self, leaves) -> str:
        return DECISION_NAMES[int(self.decisions[self.mask(leaves)])]

    def hypotheses(self, tested_only: bool = False):
        g = self.n_leaves
        for m in masks_by_cardinality(g):
            code = int(self.decisions[m])
            if tested_only and code == SKIPPED:
                continue
            members = tuple(_members(m, g))
            yield SubsetHypothesis(members, self.grouping.union(members), self.lambda0,
                                   DECISION_NAMES[code], float(self.p_values[m]), float(self.z[m]))


def _validate(grouping: Grouping, limit: int, what: str) -> int:
    g = grouping.n_leaves
    if g > limit:
        raise TooManyLeavesError(
            f"{what} supports at most {limit} leaves, the grouping has {g}; "
            "reduce the tree size (raise cp or lower max_depth)")
    return g


def _leaf_estimates(pairs, grouping: Grouping, alpha: float) -> list[IvEstimate]:
    data = as_pair_data(pairs)
    out = []
    for s in grouping.leaves:
        if s.size >= 2:
            out.append(hl_estimate(data, alpha, subset=s))
        else:
            nan = float("nan")
            out.append(IvEstimate(nan, nan, nan, alpha, "undefined", int(s.size), nan))
    return out


def run_closed_test(grouping: Grouping, pairs, lambda0: float = 0.0, alpha: float = 0.05,
                    *, g_max: int = G_MAX, estimates: bool = True) -> ClosedTestReport:
    """Closed testing with acceptance propagation.

    Sets are visited from the full set downward. A set not already covered
    by an accepted superset is tested; if ``|z| <= z_{1-alpha/2}`` it and
    all of its subsets are accepted, otherwise it is rejected. A set ends
    up covered exactly when some strict superset is accepted by its own
    test, which is how the sweep is evaluated here.
    """
    g = _validate(grouping, g_max, "run_closed_test")
    data = as_pair_data(pairs)
    z, n = _subset_statistics(grouping, data.adjusted(lambda0))
    crit = float(norm.ppf(1.0 - alpha / 2.0))
    small = n < 2
    reject = ~small & (np.abs(np.nan_to_num(z, nan=0.0)) > crit)
    reject[0] = False
    accept = ~reject
    accept[0] = False
    covered = _superset_any(accept, g, strict=True)

    decisions = np.where(reject, REJECTED, np.where(small, TOO_SMALL, RETAINED)).astype(np.int8)
    decisions[covered] = SKIPPED
    decisions[0] = UNTESTED
    zs = np.where(covered, np.nan, z)
    zs[0] = np.nan
    ps = np.full(zs.size, np.nan)
    live = ~np.isnan(zs)
    ps[live] = 2.0 * ndtr(-np.abs(zs[live]))
    leaf_rejected = np.array([decisions[1 << k] == REJECTED for k in range(g)])
    est = _leaf_estimates(data, grouping, alpha) if estimates else []
    n_tests = int(np.sum(decisions[1:] != SKIPPED))
    return ClosedTestReport(grouping, lambda0, alpha, decisions, zs, ps, leaf_rejected, est, n_tests)


def brute_force_closed_test(grouping: Grouping, pairs, lambda0: float = 0.0,
                            alpha: float = 0.05, *, estimates: bool = True) -> ClosedTestReport:
    """Reference closed test: every union tested directly, closure applied afterwards."""
    g = _validate(grouping, BRUTE_FORCE_MAX, "brute_force_closed_test")
    data = as_pair_data(pairs)
    crit = float(norm.ppf(1.0 - alpha / 2.0))
    size = 1 << g
    zs = np.full(size, np.nan)
    ps = np.full(size, np.nan)
    local = np.zeros(size, dtype=bool)
    for m in range(1, size):
        idx = grouping.union(_members(m, g))
        if idx.size < 2:
            continue
        res = pair_statistics(data, lambda0, subset=idx)
        zs[m], ps[m] = res.z, res.p_value
        local[m] = abs(res.z) > crit
    decisions = np.zeros(size, dtype=np.int8)
    for m in range(1, size):
        supersets_rejected = all(local[k] for k in range(m, size) if k & m == m)
        decisions[m] = REJECTED if supersets_rejected else RETAINED
    leaf_rejected = np.array([decisions[1 << k] == REJECTED for k in range(g)])
    est = _leaf_estimates(data, grouping, alpha) if estimates else []
    return ClosedTestReport(grouping, lambda0, alpha, decisions, zs, ps, leaf_rejected, est, size - 1)
