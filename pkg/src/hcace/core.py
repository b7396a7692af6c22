"""Domain types shared by matching, inference, tree discovery and testing.

Pair indices are 0-based throughout. The array-backed :class:`PairData`
is what every numerical routine consumes; :class:`Unit` and
:class:`MatchedPair` are the record-level view used at the edges
(ingestion, matching output, serialization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Input data violates a structural requirement."""


class DegenerateError(ArithmeticError):
    """A quantity is undefined for the supplied data (e.g. no compliers)."""


PAIR_COVARIATE_RULES = ("treated", "control", "mean")


@dataclass(frozen=True)
class Unit:
    id: str
    z: int
    d: int
    r: float
    x: tuple[float, ...] = ()

    def __post_init__(self):
        if self.z not in (0, 1):
            raise DataError(f"unit {self.id}: instrument must be 0/1, got {self.z!r}")
        if self.d not in (0, 1):
            raise DataError(f"unit {self.id}: treatment must be 0/1, got {self.d!r}")
        if not math.isfinite(self.r):
            raise DataError(f"unit {self.id}: response is not finite")


@dataclass(frozen=True)
class PotentialUnit:
    """Potential treatments and responses of one simulated unit.

    ``u`` is an unobserved confounder; nothing downstream reads it.
    """

    d0: int
    d1: int
    r0: float
    r1: float
    x: tuple[float, ...] = ()
    u: float | None = None

    def realize(self, z: int, id: str = "") -> Unit:
        if z == 1:
            return Unit(id, 1, self.d1, self.r1, self.x)
        return Unit(id, 0, self.d0, self.r0, self.x)


@dataclass(frozen=True)
class MatchedPair:
    index: int
    treated: Unit
    control: Unit
    pair_covariates: tuple[float, ...]

    def __post_init__(self):
        if self.treated.z != 1 or self.control.z != 0:
            raise DataError(f"pair {self.index}: needs one z=1 unit and one z=0 unit")

    @classmethod
    def from_units(cls, index: int, a: Unit, b: Unit, rule: str = "treated") -> "MatchedPair":
        """Build a pair from two units in either order.

        ``rule`` picks the pair-level covariates: the treated unit's, the
        control unit's, or their coordinate-wise mean.
        """
        if {a.z, b.z} != {0, 1}:
            raise DataError(f"pair {index}: units must have opposite instrument values")
        t, c = (a, b) if a.z == 1 else (b, a)
        return cls(index, t, c, pair_covariates(t, c, rule))


def pair_covariates(treated: Unit, control: Unit, rule: str = "treated") -> tuple[float, ...]:
    if rule == "treated":
        return tuple(treated.x)
    if rule == "control":
        return tuple(control.x)
    if rule == "mean":
        return tuple((a + b) / 2.0 for a, b in zip(treated.x, control.x))
    raise ValueError(f"unknown pair covariate rule {rule!r}; expected one of {PAIR_COVARIATE_RULES}")


@dataclass(frozen=True)
class AdjustedDifference:
    index: int
    lambda0: float
    y: float
    y_abs: float


def adjusted_difference(pair: MatchedPair, lambda0: float) -> AdjustedDifference:
    t, c = pair.treated, pair.control
    y = (t.r - lambda0 * t.d) - (c.r - lambda0 * c.d)
    return AdjustedDifference(pair.index, lambda0, y, abs(y))


@dataclass(frozen=True, eq=False)
class PairData:
    """Column store of I matched pairs.

    ``r_t, d_t`` belong to the instrument-1 unit and ``r_c, d_c`` to the
    instrument-0 unit of each pair. ``x`` holds the pair covariates used
    for tree splitting (I x p, numeric codes for categorical columns).
    """

    r_t: np.ndarray
    d_t: np.ndarray
    r_c: np.ndarray
    d_c: np.ndarray
    x: np.ndarray
    covariate_names: tuple[str, ...] = ()
    categorical: dict = field(default_factory=dict)

    def __post_init__(self):
        cols = {}
        for name in ("r_t", "d_t", "r_c", "d_c"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim != 1:
                raise DataError(f"{name} must be one-dimensional")
            a.setflags(write=False)
            cols[name] = a
        n = cols["r_t"].size
        if any(a.size != n for a in cols.values()):
            raise DataError("pair columns have different lengths")
        if not np.all(np.isfinite(cols["r_t"])) or not np.all(np.isfinite(cols["r_c"])):
            raise DataError("responses must be finite")
        for name in ("d_t", "d_c"):
            if not np.all((cols[name] == 0) | (cols[name] == 1)):
                raise DataError(f"{name} must be binary")
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1) if n else x.reshape(0, 0)
        if x.shape[0] != n:
            raise DataError("covariate matrix row count differs from the number of pairs")
        x.setflags(write=False)
        cols["x"] = x
        for k, v in cols.items():
            object.__setattr__(self, k, v)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError("covariate_names length differs from the covariate count")
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.r_t.size

    def __len__(self) -> int:
        return self.n

    @property
    def response_diff(self) -> np.ndarray:
        return self.r_t - self.r_c

    @property
    def treatment_diff(self) -> np.ndarray:
        return self.d_t - self.d_c

    def adjusted(self, lambda0: float) -> np.ndarray:
        """Signed adjusted differences Y_i(lambda0), treated minus control."""
        return (self.r_t - lambda0 * self.d_t) - (self.r_c - lambda0 * self.d_c)

    def subset(self, idx) -> "PairData":
        idx = np.asarray(idx)
        return PairData(self.r_t[idx], self.d_t[idx], self.r_c[idx], self.d_c[idx],
                        self.x[idx], self.covariate_names, self.categorical)

    @classmethod
    def from_pairs(cls, pairs: Sequence[MatchedPair], covariate_names: Sequence[str] = (),
                   categorical: dict | None = None) -> "PairData":
        pairs = list(pairs)
        p = len(pairs[0].pair_covariates) if pairs else len(covariate_names)
        x = np.array([pr.pair_covariates for pr in pairs], dtype=float).reshape(len(pairs), p)
        return cls(
            np.array([pr.treated.r for pr in pairs], dtype=float),
            np.array([pr.treated.d for pr in pairs], dtype=float),
            np.array([pr.control.r for pr in pairs], dtype=float),
            np.array([pr.control.d for pr in pairs], dtype=float),
            x, tuple(covariate_names), dict(categorical or {}),
        )

    def to_pairs(self) -> list[MatchedPair]:
        out = []
        for i in range(self.n):
            xi = tuple(float(v) for v in self.x[i])
            t = Unit(f"{i}t", 1, int(self.d_t[i]), float(self.r_t[i]), xi)
            c = Unit(f"{i}c", 0, int(self.d_c[i]), float(self.r_c[i]), xi)
            out.append(MatchedPair(i, t, c, xi))
        return out


def as_pair_data(pairs) -> PairData:
    if isinstance(pairs, PairData):
        return pairs
    return PairData.from_pairs(list(pairs))


@dataclass(frozen=True, eq=False)
class Grouping:
    """Mutually exclusive and exhaustive partition of pair indices into leaves."""

    leaves: tuple[np.ndarray, ...]
    n_pairs: int
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        leaves = tuple(np.sort(np.asarray(s, dtype=np.intp)) for s in self.leaves)
        if not leaves:
            raise DataError("a grouping needs at least one leaf")
        seen = np.zeros(self.n_pairs, dtype=np.intp)
        for g, s in enumerate(leaves):
            if s.size == 0:
                raise DataError(f"leaf {g} is empty")
            if s.min() < 0 or s.max() >= self.n_pairs:
                raise DataError(f"leaf {g} has indices outside 0..{self.n_pairs - 1}")
            np.add.at(seen, s, 1)
            s.setflags(write=False)
        if np.any(seen != 1):
            raise DataError("leaves must be disjoint and cover every pair exactly once")
        prov = tuple(self.provenance) or tuple(f"leaf {g + 1}" for g in range(len(leaves)))
        if len(prov) != len(leaves):
            raise DataError("provenance length differs from the leaf count")
        object.__setattr__(self, "leaves", leaves)
        object.__setattr__(self, "provenance", prov)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def union(self, leaf_ids: Iterable[int]) -> np.ndarray:
        ids = list(leaf_ids)
        if not ids:
            return np.empty(0, dtype=np.intp)
        return np.sort(np.concatenate([self.leaves[g] for g in ids]))

    def labels(self) -> np.ndarray:
        """Leaf number of every pair."""
        out = np.empty(self.n_pairs, dtype=np.intp)
        for g, s in enumerate(self.leaves):
            out[s] = g
        return out

    @classmethod
    def single(cls, n_pairs: int) -> "Grouping":
        return cls((np.arange(n_pairs),), n_pairs, ("all pairs",))


def compliance_rate(pairs) -> float:
    """Mean of (D_treated - D_control) over the pairs."""
    data = as_pair_data(pairs)
    if data.n == 0:
        raise DataError("compliance rate of an empty set of pairs")
    return float(np.mean(data.treatment_diff))


def weighted_decomposition_check(grouping: Grouping, pairs, lambda_hats: Sequence[float]) -> float:
    """Complier-weighted sum of per-leaf effect estimates.

    Weights are each leaf's share of the estimated complier count, so the
    result reproduces the pooled effect-ratio estimate.
    """
    data = as_pair_data(pairs)
    if len(lambda_hats) != grouping.n_leaves:
        raise ValueError("one estimate per leaf is required")
    b = data.treatment_diff
    counts = np.array([b[s].sum() for s in grouping.leaves])
    for g, c in enumerate(counts):
        if c <= 0:
            raise DegenerateError(f"leaf {g} ({grouping.provenance[g]}) has no estimated compliers")
    total = counts.sum()
    return float(np.sum(counts / total * np.asarray(lambda_hats, dtype=float)))
