"""Within-cluster resampling (WCR) and cluster bootstrap.

Replicate ``b`` always draws from its own generator
``numpy.random.default_rng([seed, b])``, so results do not depend on how
replicates are scheduled across workers.
"""

from __future__ import annotations

import warnings
from collections.abc import Callable, Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from icsmarginal.dataset import ClusteredSample
from icsmarginal.errors import DegenerateTestError, ICSError
from icsmarginal.iid import IidStatistic, get_statistic

__all__ = [
    "ClampedVarianceWarning",
    "WcrConfig",
    "WcrOutput",
    "cluster_bootstrap_variance",
    "enumerate_draws",
    "monte_carlo_variance",
    "n_combinations",
    "replicate_draws",
    "replicate_rng",
    "wcr_draw",
    "wcr_estimate",
    "wcr_indices",
    "wcr_variance",
]

_CHUNK = 1 << 16


class ClampedVarianceWarning(RuntimeWarning):
    """The Monte Carlo variance formula went negative and was set to zero."""


@dataclass(frozen=True)
class WcrConfig:
    B: int = 1000
    seed: int = 0
    exact_enumeration_cap: int = 10**6
    workers: int = 1

    def __post_init__(self) -> None:
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if self.exact_enumeration_cap < 1:
            raise ValueError("exact_enumeration_cap must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


@dataclass(frozen=True)
class WcrOutput:
    """Result of averaging an i.i.d. statistic over one-per-cluster draws.

    On the exact path ``replicate_values`` holds every combination and
    ``replicate_weights`` the product weights ``prod_i 1/N_i``.
    """

    point: float
    replicate_values: np.ndarray
    replicate_variances: np.ndarray | None
    exact: bool
    replicate_weights: np.ndarray | None = None

    @property
    def B(self) -> int:
        return int(self.replicate_values.size)


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for replicate ``index`` of a run seeded with ``seed``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and replicate index must be nonnegative")
    return np.random.default_rng([int(seed), int(index)])


def wcr_indices(sample: ClusteredSample, rng: np.random.Generator) -> np.ndarray:
    """Flat observation indices, one uniformly chosen per cluster, in cluster order."""
    return sample.offsets + rng.integers(0, sample.sizes)


def wcr_draw(
    sample: ClusteredSample, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray | None]:
    """One observation per cluster: ``(outcomes, covariate rows or None)``."""
    idx = wcr_indices(sample, rng)
    y = sample.y[idx]
    if sample.outcome_dim == 1:
        y = y[:, 0]
    return y, None if sample.x is None else sample.x[idx]


def _draw_rows(sample: ClusteredSample, seed: int, indices: range) -> np.ndarray:
    out = np.empty((len(indices), sample.n_clusters), dtype=np.int64)
    for row, b in enumerate(indices):
        out[row] = wcr_indices(sample, replicate_rng(seed, b))
    return out


def _in_chunks(n: int, workers: int) -> list[range]:
    if workers <= 1 or n < 2 * workers:
        return [range(n)]
    step = -(-n // workers)
    return [range(k, min(k + step, n)) for k in range(0, n, step)]


def replicate_draws(sample: ClusteredSample, B: int, seed: int, workers: int = 1) -> np.ndarray:
    """(B, M) matrix of flat indices; row ``b`` comes from ``replicate_rng(seed, b)``."""
    chunks = _in_chunks(B, workers)
    if len(chunks) == 1:
        return _draw_rows(sample, seed, chunks[0])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda r: _draw_rows(sample, seed, r), chunks))
    return np.vstack(parts)


def n_combinations(sample: ClusteredSample, cap: int | None = None) -> int:
    """``prod_i N_i``; stops early (returning a value > cap) once ``cap`` is exceeded."""
    total = 1
    for n in sample.sizes.tolist():
        total *= n
        if cap is not None and total > cap:
            return total
    return total


def enumerate_draws(sample: ClusteredSample, chunk: int = _CHUNK) -> Iterator[np.ndarray]:
    """Yield (R, M) blocks of flat indices covering every one-per-cluster draw."""
    sizes = sample.sizes
    total = n_combinations(sample)
    for start in range(0, total, chunk):
        k = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = np.empty((k.size, sizes.size), dtype=np.int64)
        for i in range(sizes.size - 1, -1, -1):
            k, digits[:, i] = np.divmod(k, sizes[i])
        yield sample.offsets + digits


def _evaluate(stat: IidStatistic, draws: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    values = stat.value(draws)
    variances = None if stat.variance is None else stat.variance(draws)
    return values, variances


def wcr_estimate(
    sample: ClusteredSample,
    statistic: str | IidStatistic,
    config: WcrConfig | None = None,
) -> WcrOutput:
    """Average an i.i.d. statistic over one-observation-per-cluster draws.

    When ``prod_i N_i <= config.exact_enumeration_cap`` every draw is
    enumerated and weighted by ``prod_i 1/N_i`` (the exact conditional
    expectation); otherwise ``config.B`` random draws are averaged.
    """
    config = config or WcrConfig()
    stat = get_statistic(statistic)
    y = sample.univariate()
    total = n_combinations(sample, cap=config.exact_enumeration_cap)
    if total <= config.exact_enumeration_cap:
        vals, vars_ = [], []
        for block in enumerate_draws(sample):
            v, s2 = _evaluate(stat, y[block])
            vals.append(v)
            vars_.append(s2)
        values = np.concatenate(vals)
        variances = None if stat.variance is None else np.concatenate(vars_)
        weights = np.full(values.size, float(np.prod(1.0 / sample.sizes)))
        if np.isnan(values).any():
            raise DegenerateTestError(f"statistic {stat.name!r} undefined on some draws")
        point = float(np.sum(weights * values) / np.sum(weights))
        return WcrOutput(point, values, variances, True, weights)

    draws = replicate_draws(sample, config.B, config.seed, config.workers)
    values, variances = _evaluate(stat, y[draws])
    if np.isnan(values).any():
        raise DegenerateTestError(f"statistic {stat.name!r} undefined on some draws")
    return WcrOutput(float(values.mean()), values, variances, False)


def monte_carlo_variance(
    values: np.ndarray,
    variances: np.ndarray,
    weights: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Average within-replicate variance minus between-replicate spread.

    ``values`` has shape (B,) or (B, p); ``variances`` (B,) or (B, p, p).
    With ``weights`` (exact enumeration) the spread is the exact weighted
    variance, otherwise the ``B - 1`` denominator is used.  Returns the
    estimate with negative diagonal entries set to zero, and a boolean mask
    of the clamped coordinates.
    """
    values = np.asarray(values, dtype=float)
    variances = np.asarray(variances, dtype=float)
    b = values.shape[0]
    if weights is None:
        if b < 2:
            raise ValueError("the Monte Carlo variance formula needs B >= 2")
        centre = values.mean(axis=0)
        dev = values - centre
        mean_var = variances.mean(axis=0)
        spread = np.einsum("b...,b...->...", dev, dev) if values.ndim == 1 else dev.T @ dev
        spread = spread / (b - 1)
    else:
        w = np.asarray(weights, dtype=float) / np.sum(weights)
        centre = np.tensordot(w, values, axes=1)
        dev = values - centre
        mean_var = np.tensordot(w, variances, axes=1)
        spread = np.sum(w * dev * dev) if values.ndim == 1 else (dev * w[:, None]).T @ dev
    est = np.atleast_1d(mean_var - spread).astype(float)
    if est.ndim == 1:
        clamped = est < 0
        est = np.where(clamped, 0.0, est)
    else:
        diag = np.diag(est)
        clamped = diag < 0
        if clamped.any():
            est = est.copy()
            est[clamped, :] = 0.0
            est[:, clamped] = 0.0
    return est, clamped


def wcr_variance(output: WcrOutput) -> float:
    """Monte Carlo variance formula for the resampling estimate.

    ``mean_b Var(T*_b) - sum_b (T*_b - T)^2 / (B - 1)``.  A negative result
    is replaced by 0 and a :class:`ClampedVarianceWarning` is issued.
    """
    value, clamped = _wcr_variance(output)
    if clamped:
        warnings.warn(
            "Monte Carlo variance estimate was negative; clamped to 0",
            ClampedVarianceWarning,
            stacklevel=2,
        )
    return value


def _wcr_variance(output: WcrOutput) -> tuple[float, bool]:
    if output.replicate_variances is None:
        raise ICSError("the statistic has no variance formula; use another variance method")
    if np.isnan(output.replicate_variances).any():
        raise ICSError("replicate variances are undefined (need at least two clusters)")
    weights = output.replicate_weights if output.exact else None
    if weights is None and output.B < 2:
        raise ValueError("the Monte Carlo variance formula needs B >= 2")
    est, clamped = monte_carlo_variance(output.replicate_values, output.replicate_variances, weights)
    return float(est[0]), bool(clamped[0])


def cluster_bootstrap_variance(
    sample: ClusteredSample,
    statistic: Callable[[ClusteredSample], float],
    B: int,
    seed: int,
    workers: int = 1,
) -> float:
    """Variance (denominator ``B - 1``) of ``statistic`` over whole-cluster bootstrap samples.

    Clusters are put in id order before drawing so the result does not depend
    on the order in which clusters were supplied.
    """
    if B < 2:
        raise ValueError("the cluster bootstrap needs B >= 2")
    m = sample.n_clusters
    canonical = np.array(sorted(range(m), key=lambda i: sample.ids[i]), dtype=np.int64)

    def run(indices: range) -> list[float]:
        out = []
        for b in indices:
            pick = replicate_rng(seed, b).integers(0, m, size=m)
            out.append(float(statistic(sample.take(canonical[pick]))))
        return out

    chunks = _in_chunks(B, workers)
    if len(chunks) == 1:
        values = run(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = [v for part in pool.map(run, chunks) for v in part]
    arr = np.asarray(values)
    if m == 1:
        return 0.0
    return float(arr.var(ddof=1))
