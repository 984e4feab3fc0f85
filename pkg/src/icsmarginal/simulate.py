"""Generators for clustered data with informative cluster size.

Three mechanisms are covered: the cluster size drives the outcomes
(``example-mean``, ``example-correlation``, ``ics-regression``), the outcomes
drive the cluster size (``recurrent``), and a latent variable drives both
(``latent``).  All generators accept an integer seed or a
``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from icsmarginal.dataset import INTERCEPT, ClusteredSample, WeightingScheme
from icsmarginal.functionals import marginal_mean

__all__ = [
    "GeneratorSpec",
    "Mechanism",
    "SweepRow",
    "bias_sweep",
    "example_mean_t2_variance",
    "gen_example_correlation",
    "gen_example_mean",
    "gen_ics_regression",
    "gen_latent",
    "gen_recurrent_events",
    "gen_size_first",
    "generate",
]

SeedLike = int | np.random.Generator | None


def _check_sizes(n_a: int, n_b: int) -> None:
    if n_a < 1 or n_b < 1:
        raise ValueError("cluster sizes n_a and n_b must be at least 1")


def _check_m(M: int) -> None:
    if M < 1:
        raise ValueError("M must be at least 1")


def gen_example_mean(M: int, n_a: int, n_b: int, seed: SeedLike = None) -> ClusteredSample:
    """``Y_ij = mu_i + eps_ij`` with ``N_i = n_a`` if ``mu_i < 0`` else ``n_b``.

    ``mu_i`` and ``eps_ij`` are independent standard normals, so every
    observation has marginal mean 0 and variance 2.
    """
    _check_m(M)
    _check_sizes(n_a, n_b)
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal(M)
    sizes = np.where(mu < 0, n_a, n_b)
    eps = rng.standard_normal(int(sizes.sum()))
    return ClusteredSample(y=np.repeat(mu, sizes) + eps, sizes=sizes)


def example_mean_t2_variance(M: int, n_a: int, n_b: int) -> float:
    """Exact ``Var(T2)`` under :func:`gen_example_mean`: ``(1 + E[1/N]) / M``.

    The cluster mean is ``mu + mean(eps)``, whose variance is
    ``1 + E[1/N]`` with ``E[1/N] = (1/n_a + 1/n_b) / 2``.
    """
    return (1.0 + 0.5 * (1.0 / n_a + 1.0 / n_b)) / M


def gen_example_correlation(
    M: int, n_a: int = 1, n_b: int = 10, seed: SeedLike = None
) -> ClusteredSample:
    """Bivariate ``Y_ij = mu_i + eps_ij`` (identity covariances, uncorrelated
    components); clusters have ``n_b`` members when both components of
    ``mu_i`` exceed 1, otherwise ``n_a``."""
    _check_m(M)
    _check_sizes(n_a, n_b)
    if n_b < n_a:
        raise ValueError("need n_b >= n_a")
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal((M, 2))
    big = (mu[:, 0] > 1) & (mu[:, 1] > 1)
    sizes = n_a + big.astype(np.int64) * (n_b - n_a)
    eps = rng.standard_normal((int(sizes.sum()), 2))
    return ClusteredSample(y=np.repeat(mu, sizes, axis=0) + eps, sizes=sizes)


def gen_recurrent_events(
    M: int,
    followup_c: float,
    gap_distribution: str = "exponential",
    rate: float = 1.0,
    gap_value: float = 1.0,
    seed: SeedLike = None,
    return_uncensored: bool = False,
) -> ClusteredSample | tuple[ClusteredSample, np.ndarray]:
    """Gap times of a renewal process observed on ``[0, followup_c]``.

    Gaps are drawn until their running sum reaches ``followup_c``; the size
    ``N_i`` is the number of gaps needed.  The last gap is right-censored and
    recorded as ``followup_c`` minus the preceding gaps.  With
    ``return_uncensored`` the full (uncensored) last gaps are returned too.
    """
    _check_m(M)
    if not followup_c > 0:
        raise ValueError("follow-up length must be positive")
    if gap_distribution == "exponential":
        if not rate > 0:
            raise ValueError("gap rate must be positive")
    elif gap_distribution == "fixed":
        if not gap_value > 0:
            raise ValueError("fixed gap must be positive")
    else:
        raise ValueError(f"unknown gap distribution {gap_distribution!r}")

    rng = np.random.default_rng(seed)
    expected = 1.0 + (rate * followup_c if gap_distribution == "exponential" else followup_c / gap_value)
    block = max(4, int(2 * expected) + 2)
    values, sizes, full_last = [], [], []
    for _ in range(M):
        gaps = np.empty(0)
        while True:
            if gap_distribution == "exponential":
                more = rng.exponential(1.0 / rate, size=block)
            else:
                more = np.full(block, float(gap_value))
            gaps = np.concatenate([gaps, more])
            cum = np.cumsum(gaps)
            if cum[-1] >= followup_c:
                break
        n = int(np.searchsorted(cum, followup_c, side="left")) + 1
        obs = gaps[:n].copy()
        full_last.append(obs[-1])
        obs[-1] = followup_c - (cum[n - 2] if n > 1 else 0.0)
        values.append(obs)
        sizes.append(n)
    sizes_arr = np.asarray(sizes)
    flags = np.zeros(int(sizes_arr.sum()), dtype=bool)
    flags[np.cumsum(sizes_arr) - 1] = True
    sample = ClusteredSample(y=np.concatenate(values), sizes=sizes_arr, censored=flags)
    if return_uncensored:
        return sample, np.asarray(full_last)
    return sample


def gen_latent(
    M: int,
    a: float = 0.5,
    b: float = 1.0,
    outcome_sd: float = 1.0,
    seed: SeedLike = None,
    size_link: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
    outcome_link: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = None,
) -> ClusteredSample:
    """Latent ``xi_i ~ N(0, 1)`` drives both size and outcomes.

    Defaults: ``N_i = 1 + Poisson(exp(a + b xi_i))`` and
    ``Y_ij ~ N(xi_i, outcome_sd^2)``, conditionally independent given
    ``xi_i``.  ``b = 0`` makes the size noninformative.  Custom links take
    the latent values (one per cluster, or one per observation for the
    outcome link) and the generator.
    """
    _check_m(M)
    if not outcome_sd > 0:
        raise ValueError("outcome_sd must be positive")
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(M)
    if size_link is None:
        sizes = 1 + rng.poisson(np.exp(a + b * xi))
    else:
        sizes = np.asarray(size_link(xi, rng), dtype=np.int64)
        if sizes.shape != (M,) or np.any(sizes < 1):
            raise ValueError("size_link must return one positive integer per cluster")
    xi_obs = np.repeat(xi, sizes)
    if outcome_link is None:
        y = xi_obs + outcome_sd * rng.standard_normal(xi_obs.size)
    else:
        y = np.asarray(outcome_link(xi_obs, rng), dtype=float)
    return ClusteredSample(y=y, sizes=sizes)


def gen_ics_regression(
    M: int,
    n_a: int = 2,
    n_b: int = 10,
    beta: Sequence[float] = (1.0, 2.0),
    seed: SeedLike = None,
) -> ClusteredSample:
    """``Y_ij = beta0 + beta1 x_ij + b_i + e_ij`` with ``N_i = n_a`` if ``b_i < 0`` else ``n_b``.

    ``x``, ``b`` and ``e`` are independent standard normals; the marginal
    regression line is ``beta0 + beta1 x`` and the covariate is unrelated to
    cluster size.  The sample carries an intercept column.
    """
    _check_m(M)
    _check_sizes(n_a, n_b)
    rng = np.random.default_rng(seed)
    effect = rng.standard_normal(M)
    sizes = np.where(effect < 0, n_a, n_b)
    n = int(sizes.sum())
    x = rng.standard_normal(n)
    y = beta[0] + beta[1] * x + np.repeat(effect, sizes) + rng.standard_normal(n)
    return ClusteredSample(
        y=y, sizes=sizes, x=np.column_stack([np.ones(n), x]), x_names=(INTERCEPT, "x"),
    )


def gen_size_first(
    M: int,
    n_min: int = 1,
    n_max: int = 10,
    slope: float = 0.25,
    seed: SeedLike = None,
) -> ClusteredSample:
    """Size drawn first, outcomes given size.

    ``N_i`` is uniform on ``{n_min, ..., n_max}``; ``Y_ij = slope (N_i - nbar)
    + b_i + e_ij`` with ``nbar`` the mean size and ``b``, ``e`` standard
    normal.  The cluster-level mean of the outcomes is 0.
    """
    _check_m(M)
    if n_min < 1 or n_max < n_min:
        raise ValueError("need 1 <= n_min <= n_max")
    rng = np.random.default_rng(seed)
    sizes = rng.integers(n_min, n_max + 1, size=M)
    centre = 0.5 * (n_min + n_max)
    mu = slope * (sizes - centre) + rng.standard_normal(M)
    return ClusteredSample(y=np.repeat(mu, sizes) + rng.standard_normal(int(sizes.sum())), sizes=sizes)


class Mechanism(str, Enum):
    SIZE_FIRST = "size-first"
    RECURRENT = "recurrent"
    LATENT = "latent"
    EXAMPLE_MEAN = "example-mean"
    EXAMPLE_CORRELATION = "example-correlation"
    ICS_REGRESSION = "ics-regression"

    @classmethod
    def parse(cls, value: Mechanism | str) -> Mechanism:
        if isinstance(value, cls):
            return value
        key = "".join(ch for ch in str(value).lower() if ch.isalnum())
        aliases = {
            "sizefirst": "size-first",
            "recurrent": "recurrent",
            "outcomefirstrecurrent": "recurrent",
            "latent": "latent",
            "examplemean": "example-mean",
            "examplecorrelation": "example-correlation",
            "icsregression": "ics-regression",
        }
        try:
            return cls(aliases[key])
        except KeyError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown mechanism {value!r}; choose from {names}") from None


@dataclass(frozen=True)
class GeneratorSpec:
    mechanism: Mechanism
    M: int
    parameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mechanism", Mechanism.parse(self.mechanism))
        _check_m(self.M)


def generate(spec: GeneratorSpec, seed: SeedLike = None, M: int | None = None) -> ClusteredSample:
    """Draw one sample; ``seed`` and ``M`` override the generator settings when given."""
    p = dict(spec.parameters)
    m = spec.M if M is None else M
    s = spec.seed if seed is None else seed
    if spec.mechanism is Mechanism.SIZE_FIRST:
        return gen_size_first(
            m, int(p.get("n_min", 1)), int(p.get("n_max", 10)), float(p.get("slope", 0.25)), s
        )
    if spec.mechanism is Mechanism.EXAMPLE_MEAN:
        return gen_example_mean(m, int(p.get("n_a", 5)), int(p.get("n_b", 50)), s)
    if spec.mechanism is Mechanism.EXAMPLE_CORRELATION:
        return gen_example_correlation(m, int(p.get("n_a", 1)), int(p.get("n_b", 10)), s)
    if spec.mechanism is Mechanism.RECURRENT:
        return gen_recurrent_events(
            m,
            float(p.get("followup_c", 2.0)),
            str(p.get("gap_distribution", "exponential")),
            rate=float(p.get("rate", 1.0)),
            gap_value=float(p.get("gap_value", 1.0)),
            seed=s,
        )
    if spec.mechanism is Mechanism.LATENT:
        return gen_latent(
            m, float(p.get("a", 0.5)), float(p.get("b", 1.0)), float(p.get("outcome_sd", 1.0)), s
        )
    return gen_ics_regression(
        m, int(p.get("n_a", 2)), int(p.get("n_b", 10)), tuple(p.get("beta", (1.0, 2.0))), s
    )


@dataclass(frozen=True)
class SweepRow:
    M: int
    estimator: str
    mean: float
    mc_se: float
    replications: int


def _estimator_table(
    estimators: Sequence[str] | Mapping[str, Callable[[ClusteredSample], float]],
) -> dict[str, Callable[[ClusteredSample], float]]:
    if isinstance(estimators, Mapping):
        return dict(estimators)
    table = {}
    for name in estimators:
        scheme = WeightingScheme.parse(name)
        table[name] = lambda s, scheme=scheme: marginal_mean(s, scheme).value
    return table


def bias_sweep(
    generator: GeneratorSpec,
    estimators: Sequence[str] | Mapping[str, Callable[[ClusteredSample], float]],
    M_values: Sequence[int],
    replications: int,
    seed: int = 0,
) -> list[SweepRow]:
    """Monte Carlo mean and standard error of each estimator at each ``M``.

    ``estimators`` are mean schemes (``"first"``, ``"ics"``, ``"naive"``) or a
    mapping of names to functions of a sample.  Replication ``r`` at cluster
    count ``M`` uses generator ``default_rng([seed, M, r])``.
    """
    if replications < 100:
        raise ValueError("bias_sweep needs at least 100 replications")
    table = _estimator_table(estimators)
    rows = []
    for m in M_values:
        values = np.empty((replications, len(table)))
        for r in range(replications):
            sample = generate(generator, seed=np.random.default_rng([seed, int(m), r]), M=int(m))
            values[r] = [fn(sample) for fn in table.values()]
        means = values.mean(axis=0)
        ses = values.std(axis=0, ddof=1) / math.sqrt(replications)
        for k, name in enumerate(table):
            rows.append(SweepRow(int(m), name, float(means[k]), float(ses[k]), replications))
    return rows
