"""Optimal pair matching on a rank-based Mahalanobis distance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .core import DataError, DegenerateError, MatchedPair, PairData, Unit


@dataclass(frozen=True)
class DistanceSpec:
    covariates: tuple[int, ...] | None = None
    caliper_variable: int | None = None
    caliper_width: float = 0.0
    caliper_penalty: float = 1000.0
    ridge: float = 1e-8

    def __post_init__(self):
        if self.caliper_width < 0 or self.caliper_penalty < 0:
            raise ValueError("caliper width and penalty must be >= 0")
        if self.caliper_variable is not None and self.caliper_width <= 0:
            raise ValueError("caliper_width must be positive when a caliper variable is set")


def _as_matrix(units_or_x) -> np.ndarray:
    if isinstance(units_or_x, np.ndarray):
        x = units_or_x.astype(float)
    else:
        x = np.array([u.x for u in units_or_x], dtype=float)
    return x.reshape(len(x), -1)


def rank_mahalanobis_distance(treated, control, spec: DistanceSpec | None = None) -> np.ndarray:
    """Squared robust Mahalanobis distances between treated and control rows.

    Each covariate is replaced by its pooled rank (ties get average
    ranks). The rank covariance is rescaled so every column has the
    variance of untied ranks, so ties do not inflate a covariate's
    weight. A ridge of ``spec.ridge * trace / dim`` is added before
    inversion. Caliper violations add ``penalty * (|gap| - width)``.
    Accepts unit lists or covariate matrices.
    """
    spec = spec or DistanceSpec()
    xt, xc = _as_matrix(treated), _as_matrix(control)
    if xt.shape[0] == 0 or xc.shape[0] == 0:
        raise DataError("both groups need at least one unit")
    if xt.shape[1] != xc.shape[1]:
        raise DataError("treated and control covariate counts differ")
    if not (np.all(np.isfinite(xt)) and np.all(np.isfinite(xc))):
        raise DataError("covariates must be finite; encode missing values with indicators first")
    cols = list(spec.covariates) if spec.covariates is not None else list(range(xt.shape[1]))
    pooled = np.vstack([xt, xc])[:, cols]
    n = pooled.shape[0]
    ranks = np.column_stack([rankdata(pooled[:, j]) for j in range(pooled.shape[1])])
    cov = np.atleast_2d(np.cov(ranks, rowvar=False))
    var_untied = np.var(np.arange(1, n + 1), ddof=1)
    diag = np.diag(cov).copy()
    scale = np.zeros_like(diag)
    varying = diag > 0
    scale[varying] = np.sqrt(var_untied / diag[varying])
    cov = cov * np.outer(scale, scale)
    dim = cov.shape[0]
    trace = float(np.trace(cov))
    if trace <= 0:
        raise DegenerateError("rank covariance is singular: every covariate is constant")
    cov = cov + np.eye(dim) * spec.ridge * trace / dim
    try:
        prec = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise DegenerateError("rank covariance is singular after regularization") from exc

    rt, rc = ranks[: xt.shape[0]], ranks[xt.shape[0]:]
    diff = rt[:, None, :] - rc[None, :, :]
    dist = np.einsum("ijk,kl,ijl->ij", diff, prec, diff)
    dist = np.maximum(dist, 0.0)

    if spec.caliper_variable is not None:
        k = spec.caliper_variable
        gap = np.abs(xt[:, k][:, None] - xc[:, k][None, :])
        dist = dist + spec.caliper_penalty * np.maximum(gap - spec.caliper_width, 0.0)
    return dist


def optimal_pair_match(distances) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimum-total-distance one-to-one assignment.

    Returns treated row indices, matched control column indices (sorted
    by treated index) and the total cost. When the groups differ in size
    every unit of the smaller group is matched.
    """
    d = np.asarray(distances, dtype=float)
    if d.ndim != 2 or d.size == 0:
        raise DataError("distance matrix is empty")
    if not np.all(np.isfinite(d)):
        raise DataError("distance matrix has non-finite entries")
    rows, cols = linear_sum_assignment(d)
    return rows, cols, float(d[rows, cols].sum())


@dataclass(frozen=True)
class BalanceReport:
    names: tuple[str, ...]
    before: np.ndarray
    after: np.ndarray
    degenerate: np.ndarray
    threshold: float = 0.25
    flagged: tuple[str, ...] = field(default=())

    def rows(self):
        for k, name in enumerate(self.names):
            yield name, float(self.before[k]), float(self.after[k]), bool(self.degenerate[k])


def _std_diff(mt, mc, sd):
    out = np.zeros_like(mt)
    ok = sd > 0
    out[ok] = (mt[ok] - mc[ok]) / sd[ok]
    equal = ~ok & (mt == mc)
    out[equal] = 0.0
    out[~ok & ~equal] = np.nan
    return out


def balance_report(x_treated, x_control, rows, cols, names: Sequence[str] = (),
                   threshold: float = 0.25) -> BalanceReport:
    """Standardized differences in means before and after matching.

    Both columns divide by the pre-match pooled standard deviation
    ``sqrt((var_t + var_c) / 2)``. A zero denominator gives 0 when the
    means agree and NaN otherwise; both cases carry the degenerate flag.
    """
    xt, xc = _as_matrix(x_treated), _as_matrix(x_control)
    if xt.shape[0] < 2 or xc.shape[0] < 2:
        raise DataError("balance needs at least 2 units per arm")
    sd = np.sqrt((xt.var(axis=0, ddof=1) + xc.var(axis=0, ddof=1)) / 2.0)
    before = _std_diff(xt.mean(axis=0), xc.mean(axis=0), sd)
    mt, mc = xt[np.asarray(rows)], xc[np.asarray(cols)]
    after = _std_diff(mt.mean(axis=0), mc.mean(axis=0), sd)
    names = tuple(names) or tuple(f"x{j + 1}" for j in range(xt.shape[1]))
    degenerate = ~(sd > 0)
    flagged = tuple(n for n, a in zip(names, after) if not np.isnan(a) and abs(a) > threshold)
    return BalanceReport(names, before, after, degenerate, threshold, flagged)


@dataclass(eq=False)
class MatchResult:
    pairs: list[MatchedPair]
    balance: BalanceReport
    total_distance: float

    def pair_data(self, covariate_names=(), categorical=None) -> PairData:
        return PairData.from_pairs(self.pairs, covariate_names, categorical)


def match_units(units: Sequence[Unit], spec: DistanceSpec | None = None,
                names: Sequence[str] = (), pair_rule: str = "treated") -> MatchResult:
    """Split units by instrument, pair them optimally and report balance."""
    treated = [u for u in units if u.z == 1]
    control = [u for u in units if u.z == 0]
    dist = rank_mahalanobis_distance(treated, control, spec)
    rows, cols, total = optimal_pair_match(dist)
    pairs = [MatchedPair.from_units(i, treated[r], control[c], pair_rule)
             for i, (r, c) in enumerate(zip(rows, cols))]
    bal = balance_report(treated, control, rows, cols, names)
    return MatchResult(pairs, bal, total)
