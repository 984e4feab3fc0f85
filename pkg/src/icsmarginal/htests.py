"""One-sample tests on the marginal distribution of clustered data.

The sign, signed-rank and modified t tests are built from per-cluster
scores ``g_i`` that average over the cluster's observations; under the null
hypothesis the ``g_i`` are i.i.d. with mean zero, so their uncentred second
moment estimates the variance.  :func:`wcr_test` builds a test from any
registered i.i.d. statistic by averaging it over within-cluster draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import stats

from icsmarginal.dataset import ClusteredSample
from icsmarginal.errors import DegenerateTestError, ICSError
from icsmarginal.iid import (
    get_statistic,
    mean_scores,
    sign_scores,
    signed_rank_scores,
)
from icsmarginal.resampling import (
    WcrConfig,
    _wcr_variance,
    cluster_bootstrap_variance,
    wcr_estimate,
)

__all__ = [
    "Reference",
    "TestResult",
    "VarianceMethod",
    "modified_t_test",
    "sign_statistic",
    "sign_test",
    "signed_rank_statistic",
    "signed_rank_test",
    "wcr_test",
]


class Reference(str, Enum):
    STANDARD_NORMAL = "normal"
    CHI_SQUARE_1 = "chi2(1)"


class VarianceMethod(str, Enum):
    ANALYTIC = "analytic"
    MONTE_CARLO_FORMULA = "mc"
    CLUSTER_BOOTSTRAP = "bootstrap"

    @classmethod
    def parse(cls, value: VarianceMethod | str) -> VarianceMethod:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"montecarloformula": "mc", "monte-carlo": "mc", "clusterbootstrap": "bootstrap"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown variance method {value!r}") from None


@dataclass(frozen=True)
class TestResult:
    """Outcome of a test.

    ``variance`` estimates the variance of ``sqrt(M) * statistic``, so for a
    normal reference ``standardized = statistic / sqrt(variance / M)`` and for
    the chi-square reference ``standardized = M * statistic**2 / variance``.
    """

    __test__ = False  # keep pytest from collecting this class

    statistic: float
    variance: float
    standardized: float
    reference: Reference
    p_value: float
    method: str
    n_clusters: int
    B: int | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise ICSError(f"p-value {self.p_value} outside [0, 1]")
        if self.variance < 0:
            raise ICSError("variance must be nonnegative")


def _normal_p(z: float, alternative: str) -> float:
    if alternative == "two-sided":
        return float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    if alternative == "greater":
        return float(stats.norm.sf(z))
    if alternative == "less":
        return float(stats.norm.cdf(z))
    raise ValueError(f"alternative must be 'two-sided', 'greater' or 'less', got {alternative!r}")


def _chi2_result(statistic: float, scores: np.ndarray, method: str) -> TestResult:
    m = scores.size
    v = float(np.mean(scores * scores))
    if v <= 0.0:
        raise DegenerateTestError(f"{method}: variance estimate is zero")
    q = m * statistic * statistic / v
    return TestResult(
        statistic=statistic,
        variance=v,
        standardized=q,
        reference=Reference.CHI_SQUARE_1,
        p_value=float(stats.chi2.sf(q, 1)),
        method=method,
        n_clusters=m,
    )


def _need_two_clusters(sample: ClusteredSample, name: str) -> None:
    if sample.n_clusters < 2:
        raise ICSError(f"{name} needs at least two clusters")


def sign_statistic(sample: ClusteredSample, theta0: float = 0.0) -> float:
    """``(1/M) sum_i (1/N_i) sum_j sign(Y_ij - theta0)``."""
    return float(np.mean(sign_scores(sample, theta0)))


def sign_test(sample: ClusteredSample, theta0: float = 0.0) -> TestResult:
    """Cluster-weighted sign test of ``H0: marginal median = theta0`` (chi-square, 1 df)."""
    _need_two_clusters(sample, "sign test")
    g = sign_scores(sample, theta0)
    return _chi2_result(float(np.mean(g)), g, "sign")


def signed_rank_statistic(sample: ClusteredSample, theta0: float = 0.0) -> float:
    """``(1/M) sum_i (1/N_i) sum_j sign(Y_ij) F+(|Y_ij|)`` on data centred at ``theta0``."""
    return float(np.mean(signed_rank_scores(sample, theta0)))


def signed_rank_test(
    sample: ClusteredSample,
    theta0: float = 0.0,
    variance: VarianceMethod | str = VarianceMethod.ANALYTIC,
    B: int = 2000,
    seed: int = 0,
) -> TestResult:
    """Cluster-weighted signed-rank test of symmetry about ``theta0``.

    ``variance="bootstrap"`` replaces the score second moment by ``M`` times
    the cluster-bootstrap variance of the statistic.
    """
    _need_two_clusters(sample, "signed-rank test")
    method = VarianceMethod.parse(variance)
    g = signed_rank_scores(sample, theta0)
    w = float(np.mean(g))
    if method is VarianceMethod.ANALYTIC:
        return _chi2_result(w, g, "signed-rank")
    if method is not VarianceMethod.CLUSTER_BOOTSTRAP:
        raise ValueError("signed_rank_test supports analytic or bootstrap variance")
    m = sample.n_clusters
    v = m * cluster_bootstrap_variance(sample, lambda s: signed_rank_statistic(s, theta0), B, seed)
    if v <= 0.0:
        raise DegenerateTestError("signed-rank: bootstrap variance is zero")
    q = m * w * w / v
    return TestResult(w, v, q, Reference.CHI_SQUARE_1, float(stats.chi2.sf(q, 1)),
                      "signed-rank (bootstrap variance)", m, B)


def modified_t_test(
    sample: ClusteredSample,
    mu0: float = 0.0,
    alternative: str = "two-sided",
) -> TestResult:
    """``Z = sqrt(M) T2 / sigma`` with ``sigma^2 = (1/M) sum_i g_i^2`` and
    ``g_i`` the cluster mean of ``Y_ij - mu0``; standard normal reference."""
    _need_two_clusters(sample, "modified t test")
    g = mean_scores(sample, mu0)
    m = g.size
    t2 = float(np.mean(g))
    s2 = float(np.mean(g * g))
    if s2 <= 0.0:
        raise DegenerateTestError("modified t test: variance estimate is zero")
    z = math.sqrt(m) * t2 / math.sqrt(s2)
    return TestResult(t2, s2, z, Reference.STANDARD_NORMAL, _normal_p(z, alternative),
                      "modified t", m)


def wcr_test(
    sample: ClusteredSample,
    statistic: str,
    B: int = 1000,
    variance_method: VarianceMethod | str = VarianceMethod.MONTE_CARLO_FORMULA,
    seed: int = 0,
    theta0: float = 0.0,
    exact_enumeration_cap: int = 10**6,
    bootstrap_B: int | None = None,
    inner_B: int = 200,
    alternative: str = "two-sided",
) -> TestResult:
    """Test built from an i.i.d. statistic averaged over within-cluster draws.

    The point statistic is the resampling average (exact when the number of
    draws is at most ``exact_enumeration_cap``).  Its variance comes from

    * ``analytic``: linearisation through cluster scores (mean, sign,
      signed-rank only);
    * ``mc``: the Monte Carlo variance formula;
    * ``bootstrap``: whole-cluster bootstrap (``bootstrap_B`` replicates,
      default ``B``) of the exact conditional mean where a closed form
      exists, otherwise of an ``inner_B``-draw resampling average.

    The result is referred to the standard normal.
    """
    stat = get_statistic(statistic)
    method = VarianceMethod.parse(variance_method)
    if method is not VarianceMethod.ANALYTIC and B < 2:
        raise ValueError("Monte Carlo variance methods need B >= 2")
    _need_two_clusters(sample, "wcr test")
    centred = sample if theta0 == 0.0 else sample.with_outcomes(sample.univariate() - theta0)
    config = WcrConfig(B=B, seed=seed, exact_enumeration_cap=exact_enumeration_cap)
    out = wcr_estimate(centred, stat, config)
    m = sample.n_clusters
    notes: list[str] = []

    if method is VarianceMethod.ANALYTIC:
        if stat.analytic_variance is None:
            raise ICSError(f"no analytic variance available for statistic {stat.name!r}")
        var_t = stat.analytic_variance(centred)
    elif method is VarianceMethod.MONTE_CARLO_FORMULA:
        var_t, clamped = _wcr_variance(out)
        if clamped:
            notes.append("Monte Carlo variance estimate was negative; clamped to 0")
    else:
        if stat.expectation is not None:
            fn = stat.expectation
        else:
            inner = WcrConfig(B=max(2, inner_B), seed=seed, exact_enumeration_cap=exact_enumeration_cap)

            def fn(s: ClusteredSample) -> float:
                return wcr_estimate(s, stat, inner).point

        var_t = cluster_bootstrap_variance(centred, fn, bootstrap_B or B, seed)

    if var_t <= 0.0:
        raise DegenerateTestError(f"wcr test ({stat.name}): variance estimate is zero")
    z = out.point / math.sqrt(var_t)
    return TestResult(
        statistic=out.point,
        variance=m * var_t,
        standardized=z,
        reference=Reference.STANDARD_NORMAL,
        p_value=_normal_p(z, alternative),
        method=f"wcr {stat.name} ({method.value} variance{', exact' if out.exact else ''})",
        n_clusters=m,
        B=out.B,
        warnings=tuple(notes),
    )
