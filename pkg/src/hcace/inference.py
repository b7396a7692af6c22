"""Randomization-based inference for the effect ratio in matched pairs.

For a subset of pairs let ``A_i`` be the treated-minus-control response
difference and ``B_i`` the treated-minus-control treatment difference.
Under the null value ``lambda0`` each pair contributes
``V_i = A_i - lambda0 * B_i``; the test statistic is the mean of ``V`` and
its standard error is the usual pair-level one. Both are polynomial in
``lambda``, so the point estimate and confidence set come out in closed
form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from .core import DataError, PairData, as_pair_data

FINITE = "finite-interval"
WHOLE_LINE = "whole-line"
RAYS = "union-of-rays"


@dataclass(frozen=True)
class IvTestResult:
    lambda0: float
    T: float
    S: float
    z: float
    p_value: float
    n_pairs: int
    compliance: float
    degenerate: bool = False
    subset_id: str | None = None


@dataclass(frozen=True)
class IvEstimate:
    """Point estimate and confidence set for the effect ratio.

    For ``ci_shape == "union-of-rays"`` the set is
    ``(-inf, ci_low] U [ci_high, inf)``; for the other shapes it is
    ``[ci_low, ci_high]``.
    """

    point: float
    ci_low: float
    ci_high: float
    alpha: float
    ci_shape: str
    n_pairs: int = 0
    compliance: float = float("nan")

    def contains(self, value: float) -> bool:
        if self.ci_shape == RAYS:
            return value <= self.ci_low or value >= self.ci_high
        return self.ci_low <= value <= self.ci_high


def two_sided_p(z: float) -> float:
    return float(2.0 * ndtr(-abs(z)))


def _select(pairs, subset) -> PairData:
    data = as_pair_data(pairs)
    return data if subset is None else data.subset(subset)


def v_statistics(v: np.ndarray) -> tuple[float, float, bool]:
    """Mean, standard error and degeneracy flag of pair-level differences."""
    n = v.size
    if n < 2:
        raise DataError(f"at least 2 pairs are needed, got {n}")
    t = float(v.mean())
    if v.max() == v.min():
        return float(v[0]), 0.0, True
    s2 = float(np.sum((v - t) ** 2)) / (n * (n - 1))
    return t, math.sqrt(s2), False


def z_and_p(t: float, s: float) -> tuple[float, float]:
    if s > 0:
        z = t / s
        return z, two_sided_p(z)
    if t == 0:
        return 0.0, 1.0
    return math.copysign(math.inf, t), 0.0


def pair_statistics(pairs, lambda0: float = 0.0, subset=None, *,
                    convention: str = "pair", subset_id: str | None = None) -> IvTestResult:
    """Effect-ratio test of ``H0: lambda = lambda0`` on a subset of pairs.

    ``convention="pair"`` uses the mean of pair differences and its
    standard error. ``convention="literal"`` reproduces the printed
    formula with the leading factor 2/I and per-unit terms in the
    variance; it is kept only for diagnostics.
    """
    data = _select(pairs, subset)
    n = data.n
    if n < 2:
        raise DataError(f"at least 2 pairs are needed, got {n}")
    comp = float(np.mean(data.treatment_diff))
    if convention == "pair":
        t, s, degenerate = v_statistics(data.adjusted(lambda0))
    elif convention == "literal":
        adj_t = data.r_t - lambda0 * data.d_t
        adj_c = data.r_c - lambda0 * data.d_c
        t = 2.0 / n * float(np.sum(adj_t - adj_c))
        s2 = float(np.sum((adj_t - t) ** 2 + (-adj_c - t) ** 2)) / (n * (n - 1))
        s = math.sqrt(s2)
        degenerate = s == 0.0
    else:
        raise ValueError(f"unknown convention {convention!r}")
    z, p = z_and_p(t, s)
    return IvTestResult(lambda0, t, s, z, p, n, comp, degenerate, subset_id)


def exact_p_value(pairs, lambda0: float = 0.0, subset=None) -> float:
    """Exact two-sided p-value over all within-pair instrument swaps.

    Swapping the instrument in pair i flips the sign of V_i under the
    sharp null. |T/S| is increasing in |sum V| because sum V^2 is fixed,
    so the count reduces to sign vectors with |sum s_i V_i| >= |sum V_i|,
    done by meet-in-the-middle. Practical up to roughly 40 pairs.
    """
    data = _select(pairs, subset)
    v = data.adjusted(lambda0)
    n = v.size
    if n < 1:
        raise DataError("no pairs")
    if n > 40:
        raise ValueError("exact enumeration is limited to 40 pairs; use the normal p-value")
    obs = abs(float(v.sum()))
    tol = 1e-9 * max(1.0, float(np.abs(v).sum()))
    half = n // 2
    left = _signed_sums(v[:half])
    right = np.sort(_signed_sums(v[half:]))
    # |a + b| >= obs  <=>  b >= obs - a  or  b <= -obs - a
    hi = right.size - np.searchsorted(right, obs - left - tol, side="left")
    lo = np.searchsorted(right, -obs - left + tol, side="right")
    if obs <= tol:
        count = left.size * right.size
    else:
        count = int(np.sum(hi + lo))
    return count / float(2 ** n)


def _signed_sums(v: np.ndarray) -> np.ndarray:
    sums = np.zeros(1)
    for value in v:
        sums = np.concatenate([sums + value, sums - value])
    return sums


def hl_estimate(pairs, alpha: float = 0.05, subset=None) -> IvEstimate:
    """Hodges-Lehmann point estimate and inverted-test confidence set.

    The point estimate solves T(lambda) = 0, i.e. mean(A) / mean(B). The
    confidence set is ``{lambda : T(lambda)^2 <= z^2 S(lambda)^2}``, a
    quadratic inequality in ``lambda``.
    """
    data = _select(pairs, subset)
    n = data.n
    if n < 2:
        raise DataError(f"at least 2 pairs are needed, got {n}")
    a = data.response_diff
    b = data.treatment_diff
    abar, bbar = float(a.mean()), float(b.mean())
    denom = n * (n - 1)
    ac, bc = a - abar, b - bbar
    qaa = float(ac @ ac) / denom
    qab = float(ac @ bc) / denom
    qbb = float(bc @ bc) / denom
    crit = float(norm.ppf(1.0 - alpha / 2.0))
    z2 = crit * crit

    point = abar / bbar if bbar != 0 else float("nan")
    # (abar - l*bbar)^2 - z2*(qaa - 2 l qab + l^2 qbb) <= 0
    qa = bbar * bbar - z2 * qbb
    qb = -2.0 * (abar * bbar - z2 * qab)
    qc = abar * abar - z2 * qaa
    lo, hi, shape = _solve_quadratic_set(qa, qb, qc)
    return IvEstimate(point, lo, hi, alpha, shape, n, bbar)


def _solve_quadratic_set(qa: float, qb: float, qc: float) -> tuple[float, float, str]:
    """Solution set of qa*l^2 + qb*l + qc <= 0."""
    inf = math.inf
    scale = max(abs(qa), abs(qb), abs(qc), 1e-300)
    if abs(qa) <= 1e-14 * scale:
        if abs(qb) <= 1e-14 * scale:
            return (-inf, inf, WHOLE_LINE) if qc <= 0 else (-inf, inf, RAYS)
        root = -qc / qb
        # a single ray: one side of the union is empty
        return (root, inf, RAYS) if qb > 0 else (-inf, root, RAYS)
    disc = qb * qb - 4.0 * qa * qc
    if qa > 0:
        if disc < 0:
            # cannot happen when the point estimate exists; keep it total
            return (inf, -inf, FINITE)
        sq = math.sqrt(disc)
        r1, r2 = sorted(((-qb - sq) / (2 * qa), (-qb + sq) / (2 * qa)))
        return r1, r2, FINITE
    if disc <= 0:
        return -inf, inf, WHOLE_LINE
    sq = math.sqrt(disc)
    r1, r2 = sorted(((-qb - sq) / (2 * qa), (-qb + sq) / (2 * qa)))
    return r1, r2, RAYS


def statistic_line(pairs, subset=None) -> tuple[float, float]:
    """Intercept and slope of T(lambda) = mean(A) - lambda * mean(B)."""
    data = _select(pairs, subset)
    return float(data.response_diff.mean()), -float(data.treatment_diff.mean())

