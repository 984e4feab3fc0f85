"""Marginal estimation, testing and regression for clustered data whose
cluster size may carry information about the outcomes.

Every estimator weights observation ``j`` of cluster ``i`` by ``1/N_i`` so
that each cluster counts once, whatever its size.
"""

from icsmarginal.dataset import (
    INTERCEPT,
    Cluster,
    ClusteredSample,
    CsvSchema,
    Observation,
    WeightingScheme,
    informativeness_diagnostic,
    load_long_csv,
    write_long_csv,
)
from icsmarginal.errors import (
    CensoredDataError,
    ConvergenceError,
    DegenerateScaleError,
    DegenerateTestError,
    EmptyInputError,
    ICSError,
    ParseError,
    RankError,
    SchemaError,
    UndefinedCorrelationError,
)
from icsmarginal.functionals import (
    CovarianceEstimator,
    Estimate,
    HodgesLehmannVariant,
    WeightedEcdf,
    hodges_lehmann,
    marginal_correlation,
    marginal_covariance,
    marginal_mean,
    marginal_variance,
    quantile,
    trimmed_mean,
    weighted_ecdf,
    weighted_median,
)
from icsmarginal.htests import (
    TestResult,
    VarianceMethod,
    modified_t_test,
    sign_test,
    signed_rank_test,
    wcr_test,
)
from icsmarginal.regression import (
    HuberConfig,
    RegressionFit,
    huber_icw_fit,
    icswls_fit,
    ols_fit,
    wcr_regression,
)
from icsmarginal.resampling import WcrConfig, cluster_bootstrap_variance, wcr_estimate, wcr_variance

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
