"""One-sample statistics for i.i.d. data and their cluster-level counterparts.

The within-cluster resampling machinery evaluates an ordinary i.i.d.
statistic on one observation drawn per cluster.  Each registry entry below
supplies that statistic in vectorised form (rows are replicates), a
variance estimate for it, and where one exists the closed form of its
conditional expectation over all draws.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from icsmarginal.dataset import ClusteredSample
from icsmarginal.functionals import weighted_ecdf

__all__ = [
    "STATISTICS",
    "IidStatistic",
    "get_statistic",
    "mean_scores",
    "sign_scores",
    "signed_rank_expectation",
    "signed_rank_scores",
]


def _centred(sample: ClusteredSample, theta0: float) -> ClusteredSample:
    if theta0 == 0.0:
        return sample
    return sample.with_outcomes(sample.univariate() - theta0)


def mean_scores(sample: ClusteredSample, theta0: float = 0.0) -> np.ndarray:
    """Cluster means of ``Y_ij - theta0``."""
    return sample.cluster_means(sample.univariate() - theta0)


def sign_scores(sample: ClusteredSample, theta0: float = 0.0) -> np.ndarray:
    """Cluster means of ``sign(Y_ij - theta0)``; ``sign(0) = 0``."""
    return sample.cluster_means(np.sign(sample.univariate() - theta0))


def _abs_ecdf_at_obs(sample: ClusteredSample) -> np.ndarray:
    ecdf = weighted_ecdf(sample, absolute=True)
    return ecdf(np.abs(sample.univariate()))


def signed_rank_scores(sample: ClusteredSample, theta0: float = 0.0) -> np.ndarray:
    """Cluster means of ``sign(Y_ij) F+(|Y_ij|)`` after centring at ``theta0``.

    ``F+`` is the cluster-weighted ECDF of the absolute values, including the
    observation's own cluster.
    """
    s = _centred(sample, theta0)
    d = s.univariate()
    return s.cluster_means(np.sign(d) * _abs_ecdf_at_obs(s))


def _within_cluster_abs_ecdf(sample: ClusteredSample) -> np.ndarray:
    """For each observation, the fraction of its own cluster with |Y| <= |Y_ij|."""
    a = np.abs(sample.univariate())
    dense = rankdata(a, method="dense").astype(np.int64)
    key = sample.codes * (int(dense.max()) + 1) + dense
    order = np.sort(key)
    below_or_equal = np.searchsorted(order, key, side="right") - sample.offsets[sample.codes]
    return below_or_equal / sample.sizes[sample.codes]


def signed_rank_expectation(sample: ClusteredSample, theta0: float = 0.0) -> float:
    """Exact average of the i.i.d. signed-rank statistic over all one-per-cluster draws.

    Uses ranks counting ties upward, statistic ``sum_i sign(Y_i) R_i / M**2``.
    Equals the functional statistic plus
    ``M**-2 sum_i N_i**-1 sum_j sign(Y_ij) (1 - F_i+(|Y_ij|))``, where
    ``F_i+`` is cluster i's own absolute ECDF; the correction is at most 1/M.
    """
    s = _centred(sample, theta0)
    d = s.univariate()
    m = s.n_clusters
    sgn = np.sign(d)
    w = float(np.mean(s.cluster_means(sgn * _abs_ecdf_at_obs(s))))
    own = _within_cluster_abs_ecdf(s)
    correction = float(np.mean(s.cluster_means(sgn * (1.0 - own)))) / m
    return w + correction


# -- vectorised i.i.d. statistics on (replicates, M) arrays --------------------


def _mean(y: np.ndarray) -> np.ndarray:
    return y.mean(axis=1)


def _mean_var(y: np.ndarray) -> np.ndarray:
    m = y.shape[1]
    if m < 2:
        return np.full(y.shape[0], np.nan)
    return y.var(axis=1, ddof=1) / m


def _sign(y: np.ndarray) -> np.ndarray:
    return np.sign(y).mean(axis=1)


def _sign_var(y: np.ndarray) -> np.ndarray:
    return np.abs(np.sign(y)).mean(axis=1) / y.shape[1]


def _signed_rank(y: np.ndarray) -> np.ndarray:
    m = y.shape[1]
    ranks = rankdata(np.abs(y), method="max", axis=1)
    return (np.sign(y) * ranks).sum(axis=1) / m**2


def _signed_rank_var(y: np.ndarray) -> np.ndarray:
    m = y.shape[1]
    ranks = rankdata(np.abs(y), method="max", axis=1)
    return (np.abs(np.sign(y)) * ranks**2).sum(axis=1) / m**4


def _t(y: np.ndarray) -> np.ndarray:
    m = y.shape[1]
    if m < 2:
        return np.full(y.shape[0], np.nan)
    sd = y.std(axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(sd > 0, np.sqrt(m) * y.mean(axis=1) / sd, np.nan)


def _t_var(y: np.ndarray) -> np.ndarray:
    return np.ones(y.shape[0])


@dataclass(frozen=True)
class IidStatistic:
    """A named i.i.d. statistic usable with within-cluster resampling.

    ``value`` and ``variance`` map an (R, M) array of draws to R numbers.
    ``expectation(sample)`` is the exact conditional mean over draws when a
    closed form exists; ``analytic_variance(sample)`` estimates its variance
    by linearisation, using uncentred second moments of cluster scores (the
    null hypothesis centres them at zero).
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    variance: Callable[[np.ndarray], np.ndarray] | None
    expectation: Callable[[ClusteredSample], float] | None = None
    analytic_variance: Callable[[ClusteredSample], float] | None = None


def _uncentred(scores: Callable[[ClusteredSample], np.ndarray]) -> Callable[[ClusteredSample], float]:
    def variance(sample: ClusteredSample) -> float:
        g = scores(sample)
        return float(np.mean(g * g)) / sample.n_clusters

    return variance


STATISTICS: dict[str, IidStatistic] = {
    "mean": IidStatistic(
        "mean", _mean, _mean_var,
        expectation=lambda s: float(np.mean(mean_scores(s))),
        analytic_variance=_uncentred(mean_scores),
    ),
    "sign": IidStatistic(
        "sign", _sign, _sign_var,
        expectation=lambda s: float(np.mean(sign_scores(s))),
        analytic_variance=_uncentred(sign_scores),
    ),
    "signed-rank": IidStatistic(
        "signed-rank", _signed_rank, _signed_rank_var,
        expectation=signed_rank_expectation,
        analytic_variance=_uncentred(signed_rank_scores),
    ),
    "t": IidStatistic("t", _t, _t_var),
}


def get_statistic(statistic: str | IidStatistic) -> IidStatistic:
    if isinstance(statistic, IidStatistic):
        return statistic
    try:
        return STATISTICS[statistic]
    except KeyError:
        names = ", ".join(sorted(STATISTICS))
        raise ValueError(f"unknown statistic {statistic!r}; choose from {names}") from None
