"""Cluster-weighted estimators of marginal distribution characteristics.

Every estimator is the sample counterpart of a functional that averages
within each cluster first and then across clusters, so each cluster counts
once regardless of its size.  Quantiles follow the ``inf{y : F(y) >= alpha}``
convention throughout; there is no interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from icsmarginal.dataset import ClusteredSample, WeightingScheme, observation_weights
from icsmarginal.errors import EmptyInputError, ICSError, UndefinedCorrelationError

__all__ = [
    "CovarianceEstimator",
    "Estimate",
    "HodgesLehmannVariant",
    "WeightedEcdf",
    "cluster_mean_variance",
    "hodges_lehmann",
    "marginal_correlation",
    "marginal_covariance",
    "marginal_mean",
    "marginal_variance",
    "quantile",
    "trimmed_mean",
    "weighted_ecdf",
    "weighted_median",
    "weighted_quantile",
]

# Slack when comparing accumulated weights to a probability level; keeps
# e.g. 1/3 + 1/3 >= 2/3 true despite rounding.
_CUM_TOL = 1e-12


@dataclass(frozen=True)
class Estimate:
    value: float
    variance: float | None
    scheme: WeightingScheme
    n_clusters: int
    method: str = ""

    def __post_init__(self) -> None:
        if self.variance is not None and self.variance < 0:
            raise ICSError("variance must be nonnegative")

    @property
    def std_error(self) -> float | None:
        return None if self.variance is None else float(np.sqrt(self.variance))


@dataclass(frozen=True)
class WeightedEcdf:
    """Right-continuous step function with cluster-weighted jumps."""

    support: np.ndarray
    cumulative: np.ndarray

    def __call__(self, y: float | np.ndarray) -> float | np.ndarray:
        pos = np.searchsorted(self.support, y, side="right")
        out = np.where(pos > 0, self.cumulative[np.maximum(pos - 1, 0)], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def left_limit(self, y: float | np.ndarray) -> float | np.ndarray:
        """``F(y-)``, the mass strictly below ``y``."""
        pos = np.searchsorted(self.support, y, side="left")
        out = np.where(pos > 0, self.cumulative[np.maximum(pos - 1, 0)], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def jumps(self) -> np.ndarray:
        return np.diff(self.cumulative, prepend=0.0)


def _step_function(values: np.ndarray, weights: np.ndarray) -> WeightedEcdf:
    support, inverse = np.unique(values, return_inverse=True)
    mass = np.bincount(inverse.reshape(-1), weights=weights, minlength=support.size)
    cumulative = np.cumsum(mass)
    cumulative = cumulative / cumulative[-1]
    support.setflags(write=False)
    cumulative.setflags(write=False)
    return WeightedEcdf(support, cumulative)


def weighted_ecdf(
    sample: ClusteredSample,
    absolute: bool = False,
    scheme: WeightingScheme | str = WeightingScheme.INVERSE_CLUSTER_SIZE,
) -> WeightedEcdf:
    """ECDF with jump ``sum_i #{j: Y_ij = y} / (M N_i)`` at each value ``y``.

    With ``absolute=True`` the step function is built from ``|Y_ij|``.
    Other schemes are available for comparison only.
    """
    y = sample.univariate()
    if absolute:
        y = np.abs(y)
    w = observation_weights(sample, scheme)
    if WeightingScheme.parse(scheme) is WeightingScheme.FIRST_OBSERVATION:
        y, w = y[sample.offsets], w[sample.offsets]
    return _step_function(y, w)


def quantile(ecdf: WeightedEcdf, alpha: float) -> float:
    """Smallest support point ``y`` with ``F(y) >= alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    k = int(np.searchsorted(ecdf.cumulative, alpha - _CUM_TOL, side="left"))
    return float(ecdf.support[min(k, ecdf.support.size - 1)])


def weighted_quantile(values: np.ndarray, weights: np.ndarray, alpha: float) -> float:
    """``inf{y : F_w(y) >= alpha}`` for arbitrary nonnegative weights."""
    values = np.asarray(values, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if values.size == 0:
        raise EmptyInputError("no values")
    return quantile(_step_function(values, weights), alpha)


def cluster_mean_variance(sample: ClusteredSample) -> tuple[float, float]:
    """Return ``(T2, tau2)``: the inverse-size mean and the plug-in variance of
    the cluster means (second moment minus squared mean, floored at 0)."""
    g = sample.cluster_means(sample.univariate())
    t2 = float(g.mean())
    tau2 = float(np.mean(g * g) - t2 * t2)
    return t2, max(tau2, 0.0)


def marginal_mean(
    sample: ClusteredSample,
    scheme: WeightingScheme | str = WeightingScheme.INVERSE_CLUSTER_SIZE,
) -> Estimate:
    """Weighted mean ``sum_ij w_ij Y_ij``.

    The variance attached is ``tau2 / M`` for the inverse-size scheme and the
    plain i.i.d. ``S1 / M`` for the first-observation scheme.  The pooled mean
    estimates no functional under informative sizes and carries no variance.
    """
    scheme = WeightingScheme.parse(scheme)
    y = sample.univariate()
    m = sample.n_clusters
    if scheme is WeightingScheme.INVERSE_CLUSTER_SIZE:
        t2, tau2 = cluster_mean_variance(sample)
        return Estimate(t2, tau2 / m, scheme, m, "mean")
    if scheme is WeightingScheme.FIRST_OBSERVATION:
        first = y[sample.offsets]
        return Estimate(float(first.mean()), float(first.var()) / m, scheme, m, "mean")
    return Estimate(float(y.mean()), None, scheme, m, "mean")


def marginal_variance(
    sample: ClusteredSample,
    scheme: WeightingScheme | str = WeightingScheme.INVERSE_CLUSTER_SIZE,
) -> Estimate:
    """``sum_ij w_ij (Y_ij - T)^2`` around the same-scheme mean; no bias correction."""
    scheme = WeightingScheme.parse(scheme)
    y = sample.univariate()
    w = observation_weights(sample, scheme)
    centre = marginal_mean(sample, scheme).value
    value = float(np.sum(w * (y - centre) ** 2))
    return Estimate(value, None, scheme, sample.n_clusters, "variance")


def weighted_median(
    sample: ClusteredSample,
    scheme: WeightingScheme | str = WeightingScheme.INVERSE_CLUSTER_SIZE,
) -> Estimate:
    scheme = WeightingScheme.parse(scheme)
    value = quantile(weighted_ecdf(sample, scheme=scheme), 0.5)
    return Estimate(value, None, scheme, sample.n_clusters, "median")


def trimmed_mean(sample: ClusteredSample, alpha: float) -> Estimate:
    """Cluster-weighted alpha-trimmed mean.

    Keeps observations in the closed interval between the weighted
    ``alpha/2`` and ``1 - alpha/2`` quantiles and divides by ``1 - alpha``
    (not by the retained mass), exactly as the functional is written.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    y = sample.univariate()
    scheme = WeightingScheme.INVERSE_CLUSTER_SIZE
    if alpha == 0.0:
        est = marginal_mean(sample, scheme)
        return Estimate(est.value, None, scheme, sample.n_clusters, "trimmed mean")
    ecdf = weighted_ecdf(sample)
    lo, hi = quantile(ecdf, alpha / 2), quantile(ecdf, 1 - alpha / 2)
    keep = (y >= lo) & (y <= hi)
    w = observation_weights(sample, scheme)
    value = float(np.sum(w * keep * y) / (1.0 - alpha))
    return Estimate(value, None, scheme, sample.n_clusters, "trimmed mean")


class CovarianceEstimator(str, Enum):
    CORRECT = "correct"
    NAIVE_POOLED = "naive"
    WEIGHTED_CROSS_NAIVE_CENTER = "weighted-naive-center"

    @classmethod
    def parse(cls, value: CovarianceEstimator | str) -> CovarianceEstimator:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown covariance estimator {value!r}") from None


def marginal_covariance(
    sample: ClusteredSample,
    estimator: CovarianceEstimator | str = CovarianceEstimator.CORRECT,
) -> Estimate:
    """Covariance of the two outcome components.

    ``correct`` weights cross-products by ``1/(M N_i)`` around the inverse-size
    mean vector.  ``naive`` is the pooled covariance.  ``weighted-naive-center``
    uses the inverse-size weights but centres at the pooled mean; the last two
    are kept only to show how informative sizes bias the answer.
    """
    estimator = CovarianceEstimator.parse(estimator)
    if sample.outcome_dim != 2:
        raise ICSError("covariance needs a bivariate outcome")
    y1, y2 = sample.outcome(0), sample.outcome(1)
    w_ics = observation_weights(sample, WeightingScheme.INVERSE_CLUSTER_SIZE)
    if estimator is CovarianceEstimator.CORRECT:
        w, centre_w, scheme = w_ics, w_ics, WeightingScheme.INVERSE_CLUSTER_SIZE
    elif estimator is CovarianceEstimator.NAIVE_POOLED:
        w_naive = observation_weights(sample, WeightingScheme.NAIVE_POOLED)
        w, centre_w, scheme = w_naive, w_naive, WeightingScheme.NAIVE_POOLED
    else:
        w_naive = observation_weights(sample, WeightingScheme.NAIVE_POOLED)
        w, centre_w, scheme = w_ics, w_naive, WeightingScheme.INVERSE_CLUSTER_SIZE
    c1, c2 = np.sum(centre_w * y1), np.sum(centre_w * y2)
    value = float(np.sum(w * (y1 - c1) * (y2 - c2)))
    return Estimate(value, None, scheme, sample.n_clusters, f"covariance ({estimator.value})")


def marginal_correlation(sample: ClusteredSample) -> Estimate:
    """Correct covariance over the root product of the inverse-size variances."""
    if sample.outcome_dim != 2:
        raise ICSError("correlation needs a bivariate outcome")
    w = observation_weights(sample, WeightingScheme.INVERSE_CLUSTER_SIZE)
    y1, y2 = sample.outcome(0), sample.outcome(1)
    d1 = y1 - np.sum(w * y1)
    d2 = y2 - np.sum(w * y2)
    v1, v2 = float(np.sum(w * d1 * d1)), float(np.sum(w * d2 * d2))
    if v1 <= 0.0 or v2 <= 0.0:
        raise UndefinedCorrelationError("a marginal variance is zero; correlation undefined")
    r = float(np.sum(w * d1 * d2)) / np.sqrt(v1 * v2)
    if abs(r) > 1.0:
        if abs(r) - 1.0 > 1e-12:
            raise ICSError(f"correlation {r!r} outside [-1, 1] beyond rounding")
        r = float(np.sign(r))
    return Estimate(r, None, WeightingScheme.INVERSE_CLUSTER_SIZE, sample.n_clusters, "correlation")


class HodgesLehmannVariant(str, Enum):
    FIRST_OBSERVATION = "first"
    INVERSE_CLUSTER_SIZE_PAIRS = "ics"


def _cross_cluster_averages(sample: ClusteredSample, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise means over cluster pairs i < i' with weights 1/(N_i N_i')."""
    values, weights = [], []
    inv = 1.0 / sample.sizes
    for i in range(sample.n_clusters - 1):
        a = y[sample.offsets[i] : sample.offsets[i] + sample.sizes[i]]
        rest = y[sample.offsets[i + 1] :]
        values.append(((a[:, None] + rest[None, :]) / 2.0).reshape(-1))
        w_rest = inv[sample.codes[sample.offsets[i + 1] :]] * inv[i]
        weights.append(np.broadcast_to(w_rest, (a.size, rest.size)).reshape(-1))
    return np.concatenate(values), np.concatenate(weights)


def hodges_lehmann(
    sample: ClusteredSample,
    variant: HodgesLehmannVariant | str = HodgesLehmannVariant.INVERSE_CLUSTER_SIZE_PAIRS,
) -> Estimate:
    """Hodges-Lehmann location estimate.

    ``first``: lower median of the Walsh averages ``(Y_i1 + Y_k1)/2``,
    ``i <= k``, of the first observations.  ``ics``: weighted lower median of
    ``(Y_ij + Y_i'j')/2`` over observations in *different* clusters, each
    pair weighted ``1/(N_i N_i')``.  Memory grows with ``N**2 / 2``.
    """
    variant = HodgesLehmannVariant(variant)
    y = sample.univariate()
    m = sample.n_clusters
    if variant is HodgesLehmannVariant.FIRST_OBSERVATION:
        first = y[sample.offsets]
        iu = np.triu_indices(m)
        walsh = (first[iu[0]] + first[iu[1]]) / 2.0
        value = weighted_quantile(walsh, np.ones_like(walsh), 0.5)
        return Estimate(value, None, WeightingScheme.FIRST_OBSERVATION, m, "hodges-lehmann")
    if m < 2:
        raise ICSError("the between-cluster Hodges-Lehmann estimate needs at least two clusters")
    values, weights = _cross_cluster_averages(sample, y)
    value = weighted_quantile(values, weights, 0.5)
    return Estimate(value, None, WeightingScheme.INVERSE_CLUSTER_SIZE, m, "hodges-lehmann")
