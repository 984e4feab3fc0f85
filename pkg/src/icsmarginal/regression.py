"""Marginal linear regression for clustered data with informative cluster size.

All estimating equations weight cluster ``i`` by ``1/N_i``; covariance
matrices use the sandwich ``A^-1 B A^-1`` with ``B`` built from per-cluster
score sums, so no within-cluster correlation model is needed.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from icsmarginal.dataset import ClusteredSample
from icsmarginal.errors import (
    ConvergenceError,
    DegenerateScaleError,
    ICSError,
    RankError,
)
from icsmarginal.functionals import weighted_quantile
from icsmarginal.resampling import (
    enumerate_draws,
    monte_carlo_variance,
    n_combinations,
    replicate_rng,
    wcr_indices,
)

__all__ = [
    "DesignedCluster",
    "HuberConfig",
    "RegressionFit",
    "huber_icw_fit",
    "huber_weights",
    "icswls_fit",
    "ols_fit",
    "wcr_regression",
]

MAX_CONDITION = 1e12
# Median absolute residual of a standard normal.
_MAD_CONSTANT = 0.6745


@dataclass(frozen=True)
class DesignedCluster:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self) -> None:
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if X.shape[0] != Y.shape[0]:
            raise ICSError("X and Y row counts differ")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ICSError("design and outcome must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)


@dataclass(frozen=True)
class HuberConfig:
    c: float = 1.5
    d: float = 1.0
    tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self) -> None:
        if min(self.c, self.d, self.tol) <= 0 or self.max_iter < 1:
            raise ValueError("Huber tuning constants, tolerance and max_iter must be positive")


@dataclass(frozen=True)
class RegressionFit:
    beta: np.ndarray
    covariance: np.ndarray
    method: str
    n_clusters: int
    names: tuple[str, ...] = ()
    residuals: np.ndarray | None = field(default=None, repr=False)
    scale: float | None = None
    iterations: int = 0
    converged: bool = True
    B: int | None = None
    warnings: tuple[str, ...] = ()
    replicate_sd: np.ndarray | None = None

    @property
    def mc_std_errors(self) -> np.ndarray | None:
        """Monte Carlo error of a resampling average (None for direct fits)."""
        if self.replicate_sd is None or not self.B:
            return None
        return self.replicate_sd / math.sqrt(self.B)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def table(self) -> list[dict]:
        return [
            {"parameter": n, "estimate": float(b), "std_error": float(s)}
            for n, b, s in zip(self.names, self.beta, self.std_errors)
        ]


def _as_sample(data: ClusteredSample | Sequence[DesignedCluster]) -> ClusteredSample:
    if isinstance(data, ClusteredSample):
        if data.x is None:
            raise ICSError("sample has no covariates; supply --x-col and/or --intercept")
        data.univariate()
        return data
    clusters = list(data)
    if not clusters:
        raise ICSError("no clusters supplied")
    p = {c.X.shape[1] for c in clusters}
    if len(p) != 1:
        raise ICSError("all clusters need the same number of covariates")
    return ClusteredSample(
        y=np.concatenate([c.Y for c in clusters]),
        sizes=np.array([c.Y.size for c in clusters]),
        x=np.vstack([c.X for c in clusters]),
    )


def _inverse(a: np.ndarray, what: str) -> np.ndarray:
    """Inverse via SVD, refusing matrices with condition number above 1e12."""
    u, s, vt = np.linalg.svd(a)
    if s[-1] <= 0.0 or s[0] / s[-1] > MAX_CONDITION:
        cond = math.inf if s[-1] <= 0.0 else s[0] / s[-1]
        raise RankError(f"{what} is singular or ill-conditioned (condition number {cond:.3g})")
    return (vt.T / s) @ u.T


def _sandwich(a_inv: np.ndarray, scores: np.ndarray) -> np.ndarray:
    cov = a_inv @ (scores.T @ scores) @ a_inv
    return (cov + cov.T) / 2.0


def icswls_fit(data: ClusteredSample | Sequence[DesignedCluster]) -> RegressionFit:
    """Inverse-cluster-size weighted least squares with sandwich covariance.

    ``beta = [sum_i X_i'X_i / N_i]^-1 [sum_i X_i'Y_i / N_i]``; the bread is
    ``A = sum_i X_i'X_i / N_i`` and the meat ``B = sum_i u_i u_i'`` with
    ``u_i = X_i'R_i / N_i``.
    """
    sample = _as_sample(data)
    x, y = sample.x, sample.univariate()
    m, p = sample.n_clusters, x.shape[1]
    if m < p:
        raise RankError(f"need at least as many clusters ({m}) as coefficients ({p})")
    w = 1.0 / sample.sizes[sample.codes]
    xw = x * w[:, None]
    a_inv = _inverse(xw.T @ x, "weighted cross-product matrix")
    beta = a_inv @ (xw.T @ y)
    resid = y - x @ beta
    scores = sample.cluster_sums(xw * resid[:, None])
    return RegressionFit(
        beta=beta,
        covariance=_sandwich(a_inv, scores),
        method="icswls",
        n_clusters=m,
        names=sample.x_names,
        residuals=resid,
    )


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, p = x.shape
    xtx_inv = _inverse(x.T @ x, "X'X")
    beta = xtx_inv @ (x.T @ y)
    resid = y - x @ beta
    dof = n - p
    sigma2 = float(resid @ resid) / dof if dof > 0 else math.nan
    return beta, sigma2 * xtx_inv, resid


def ols_fit(data: ClusteredSample | Sequence[DesignedCluster]) -> RegressionFit:
    """Pooled OLS ignoring clustering, with the i.i.d. covariance ``s^2 (X'X)^-1``.

    Under informative cluster size this estimates no population quantity;
    it is here for comparison.
    """
    sample = _as_sample(data)
    beta, cov, resid = _ols(sample.x, sample.univariate())
    notes = ("pooled OLS has no corresponding functional under informative cluster size",)
    if not np.all(np.isfinite(cov)):
        notes += ("residual degrees of freedom are zero; covariance undefined",)
    return RegressionFit(
        beta=beta,
        covariance=cov,
        method="ols",
        n_clusters=sample.n_clusters,
        names=sample.x_names,
        residuals=resid,
        warnings=notes,
    )


def huber_weights(r: np.ndarray, c: float, d: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Huber's ``w1 = min(1, c/|r|)``, ``w2 = d min(1, c^2/r^2)``, ``w3 = 1``."""
    a = np.abs(r)
    with np.errstate(divide="ignore"):
        w1 = np.where(a > c, c / a, 1.0)
        w2 = d * np.where(a > c, (c / a) ** 2, 1.0)
    return w1, w2, np.ones_like(r)


def huber_icw_fit(
    data: ClusteredSample | Sequence[DesignedCluster],
    config: HuberConfig | None = None,
) -> RegressionFit:
    """Inverse-cluster-size weighted Huber regression.

    Starts from the weighted least-squares fit and the weighted median
    absolute residual divided by 0.6745, then repeats: standardise residuals,
    form the Huber weights, refit ``beta`` by weighted least squares with
    weights ``w1/N_i`` and rescale ``sigma^2`` by the ratio of the weighted
    means of ``w2 r^2`` and ``w3``.  Stops when every coordinate of
    ``(beta, sigma)`` moves by less than ``tol * (1 + |value|)``.

    The sandwich uses ``A = sum_i X_i'W1_i X_i / N_i`` and scores
    ``X_i'W1_i R_i / N_i`` with raw (unstandardised) residuals ``R_i``.
    """
    config = config or HuberConfig()
    sample = _as_sample(data)
    start = icswls_fit(sample)
    x, y = sample.x, sample.univariate()
    inv_n = 1.0 / sample.sizes[sample.codes]
    m = sample.n_clusters

    beta = start.beta.copy()
    sigma = weighted_quantile(np.abs(start.residuals), inv_n, 0.5) / _MAD_CONSTANT
    floor = 1e-12 * max(1.0, float(np.max(np.abs(y))))
    if not sigma > floor:
        raise DegenerateScaleError("initial residual scale is zero (exact fit)")

    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        r = (y - x @ beta) / sigma
        w1, w2, w3 = huber_weights(r, config.c, config.d)
        xw = x * (w1 * inv_n)[:, None]
        new_beta = _inverse(xw.T @ x, "Huber-weighted cross-product matrix") @ (xw.T @ y)
        ratio = np.sum(inv_n * w2 * r * r) / np.sum(inv_n * w3)
        new_sigma = sigma * math.sqrt(ratio)
        if not new_sigma > floor:
            raise DegenerateScaleError("residual scale collapsed to zero")
        change = max(
            float(np.max(np.abs(new_beta - beta) / (1.0 + np.abs(new_beta)))),
            abs(new_sigma - sigma) / (1.0 + new_sigma),
        )
        beta, sigma = new_beta, new_sigma
        if change < config.tol:
            converged = True
            break

    resid = y - x @ beta
    w1, _, _ = huber_weights(resid / sigma, config.c, config.d)
    xw = x * (w1 * inv_n)[:, None]
    a_inv = _inverse(xw.T @ x, "Huber-weighted cross-product matrix")
    scores = sample.cluster_sums(xw * resid[:, None])
    fit = RegressionFit(
        beta=beta,
        covariance=_sandwich(a_inv, scores),
        method="huber",
        n_clusters=m,
        names=sample.x_names,
        residuals=resid,
        scale=sigma,
        iterations=it,
        converged=converged,
    )
    if not converged:
        raise ConvergenceError(f"Huber iteration did not converge in {config.max_iter} steps", last=fit)
    return fit


def _batch_ols(xb: np.ndarray, yb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """OLS on each replicate; returns (beta, covariance, ok-mask)."""
    r, m, p = xb.shape
    xtx = np.einsum("rmi,rmj->rij", xb, xb)
    s = np.linalg.svd(xtx, compute_uv=False)
    ok = (s[:, -1] > 0) & (s[:, 0] <= MAX_CONDITION * np.where(s[:, -1] > 0, s[:, -1], 1.0))
    beta = np.zeros((r, p))
    cov = np.zeros((r, p, p))
    if ok.any():
        inv = np.linalg.inv(xtx[ok])
        b = np.einsum("rij,rj->ri", inv, np.einsum("rmi,rm->ri", xb[ok], yb[ok]))
        resid = yb[ok] - np.einsum("rmi,ri->rm", xb[ok], b)
        sigma2 = np.einsum("rm,rm->r", resid, resid) / (m - p)
        beta[ok] = b
        cov[ok] = sigma2[:, None, None] * inv
    return beta, cov, ok


def wcr_regression(
    data: ClusteredSample | Sequence[DesignedCluster],
    B: int = 1000,
    seed: int = 0,
    exact_enumeration_cap: int = 0,
    max_attempts: int = 100,
) -> RegressionFit:
    """Within-cluster resampling regression.

    Each replicate draws one observation per cluster and fits OLS; the
    estimate is the replicate average and the covariance follows the Monte
    Carlo variance formula with the OLS covariance as the within-replicate
    term (negative diagonal entries are clamped to 0 with a warning).
    Rank-deficient draws are redrawn; more than ``B/2`` rejections is an
    error.  With ``exact_enumeration_cap > 0`` and few enough combinations,
    every draw is enumerated instead (singular ones are dropped).
    """
    sample = _as_sample(data)
    x, y = sample.x, sample.univariate()
    m, p = sample.n_clusters, x.shape[1]
    if m <= p:
        raise RankError(f"need more clusters ({m}) than coefficients ({p}) for per-draw OLS")
    notes: list[str] = []

    total = n_combinations(sample, cap=exact_enumeration_cap)
    if exact_enumeration_cap > 0 and total <= exact_enumeration_cap:
        betas, covs = [], []
        for block in enumerate_draws(sample):
            b, v, ok = _batch_ols(x[block], y[block])
            betas.append(b[ok])
            covs.append(v[ok])
        betas_arr, covs_arr = np.concatenate(betas), np.concatenate(covs)
        dropped = total - betas_arr.shape[0]
        if dropped * 2 > total:
            raise RankError(f"{dropped} of {total} enumerated draws are rank deficient")
        if dropped:
            notes.append(f"{dropped} rank-deficient enumerated draws dropped")
        weights = np.ones(betas_arr.shape[0])
        beta = betas_arr.mean(axis=0)
        cov, clamped = monte_carlo_variance(betas_arr, covs_arr, weights)
        exact, used = True, betas_arr.shape[0]
    else:
        if B < 2:
            raise ValueError("wcr_regression needs B >= 2")
        rngs = [replicate_rng(seed, b) for b in range(B)]
        draws = np.stack([wcr_indices(sample, g) for g in rngs])
        betas_arr, covs_arr, ok = _batch_ols(x[draws], y[draws])
        rejected = 0
        for b in np.flatnonzero(~ok):
            for _ in range(max_attempts):
                rejected += 1
                if rejected * 2 > B:
                    raise RankError(f"more than half of {B} resamples were rank deficient")
                idx = wcr_indices(sample, rngs[b])
                bb, vv, good = _batch_ols(x[idx][None], y[idx][None])
                if good[0]:
                    betas_arr[b], covs_arr[b] = bb[0], vv[0]
                    break
            else:
                raise RankError(f"resample {b} stayed rank deficient after {max_attempts} draws")
        if rejected:
            notes.append(f"{rejected} rank-deficient resamples redrawn")
        beta = betas_arr.mean(axis=0)
        cov, clamped = monte_carlo_variance(betas_arr, covs_arr)
        exact, used = False, B

    if clamped.any():
        names = ", ".join(sample.x_names[k] for k in np.flatnonzero(clamped))
        notes.append(f"negative Monte Carlo variance clamped to 0 for: {names}")
    cov = (cov + cov.T) / 2.0
    return RegressionFit(
        beta=beta,
        covariance=cov,
        method="wcr (exact)" if exact else "wcr",
        n_clusters=m,
        names=sample.x_names,
        residuals=y - x @ beta,
        B=used,
        warnings=tuple(notes),
        replicate_sd=betas_arr.std(axis=0, ddof=1) if betas_arr.shape[0] > 1 else np.zeros(p),
    )
