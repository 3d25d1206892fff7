"""Exact GP regression with squared-exponential and overlap kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

JITTERS = (0.0, 1e-8, 1e-6, 1e-4)


class GPError(np.linalg.LinAlgError):
    pass


def se_kernel(a: np.ndarray, b: np.ndarray, lengthscale: float, outputscale: float = 1.0) -> np.ndarray:
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    sq = np.sum(a**2, 1)[:, None] + np.sum(b**2, 1)[None, :] - 2 * a @ b.T
    return outputscale * np.exp(-0.5 * np.maximum(sq, 0.0) / lengthscale**2)


def overlap_kernel(a, b, theta) -> float:
    """exp(mean_i theta_i * [a_i == b_i]) for two categorical designs."""
    a, b, theta = np.asarray(a), np.asarray(b), np.asarray(theta, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"arity mismatch: {a.shape} vs {b.shape}")
    if theta.shape not in ((), a.shape):
        raise ValueError("theta needs one scale per position")
    if np.any(theta < 0):
        raise ValueError("theta must be non-negative")
    return float(np.exp(np.mean(np.broadcast_to(theta, a.shape) * (a == b))))


def overlap_matrix(a: np.ndarray, b: np.ndarray, theta, outputscale: float = 1.0) -> np.ndarray:
    """Gram matrix of the overlap kernel rescaled so that k(x, x) = outputscale."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (a.shape[1],))
    match = (a[:, None, :] == b[None, :, :]).astype(float)
    expo = match @ theta / a.shape[1]
    return outputscale * np.exp(expo - theta.mean())


@dataclass
class GPModel:
    x: np.ndarray
    y: np.ndarray
    kind: str  # "se" | "overlap"
    scale: float | np.ndarray  # lengthscale (se) or theta (overlap)
    outputscale: float = 1.0
    noise: float = 0.01
    mean: float = 0.0
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None
    jitter: float = 0.0

    def kernel(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.kind == "se":
            return se_kernel(a, b, float(self.scale), self.outputscale)
        if self.kind == "overlap":
            return overlap_matrix(a, b, self.scale, self.outputscale)
        raise ValueError(f"unknown kernel {self.kind!r}")

    def batch_kernel(self, batches: np.ndarray) -> np.ndarray:
        """Within-batch Gram matrices (n, q, q) for batches shaped (n, q, d)."""
        if self.kind == "se":
            sq = np.sum((batches[:, :, None, :] - batches[:, None, :, :]) ** 2, axis=-1)
            return self.outputscale * np.exp(-0.5 * sq / float(self.scale) ** 2)
        theta = np.broadcast_to(np.asarray(self.scale, dtype=float), (batches.shape[-1],))
        match = (batches[:, :, None, :] == batches[:, None, :, :]).astype(float)
        return self.outputscale * np.exp(match @ theta / batches.shape[-1] - theta.mean())

    def prior_var(self, n: int) -> np.ndarray:
        return np.full(n, self.outputscale)


def fit_gp(
    x: np.ndarray,
    y: np.ndarray,
    kind: str = "se",
    scale: float | np.ndarray = 0.2,
    outputscale: float = 1.0,
    noise: float = 0.01,
    mean: float = 0.0,
) -> GPModel:
    """Factorize K + noise*I, adding jitter on failure."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(x) != len(y) or len(y) == 0:
        raise ValueError("need matching, non-empty inputs and scores")
    gp = GPModel(x, y, kind, scale, outputscale, noise, mean)
    k = gp.kernel(x, x)
    for jitter in JITTERS:
        try:
            chol = np.linalg.cholesky(k + (noise + jitter) * np.eye(len(x)))
        except np.linalg.LinAlgError:
            continue
        gp.chol, gp.jitter = chol, jitter
        gp.alpha = cho_solve((chol, True), y - mean)
        return gp
    raise GPError("covariance factorization failed at maximum jitter")


def log_marginal_likelihood(gp: GPModel) -> float:
    r = gp.y - gp.mean
    return float(-0.5 * r @ gp.alpha - np.log(np.diag(gp.chol)).sum() - 0.5 * len(r) * np.log(2 * np.pi))


def fit_gp_grid(x, y, kind: str, grid, noise: float = 0.01) -> GPModel:
    """Fit on standardized-by-caller scores, choosing the kernel scale by marginal likelihood."""
    best, best_ll = None, -np.inf
    for scale in grid:
        gp = fit_gp(x, y, kind, scale, noise=noise)
        ll = log_marginal_likelihood(gp)
        if ll > best_ll:
            best, best_ll = gp, ll
    return best


def gp_posterior(gp: GPModel, query: np.ndarray, full_cov: bool = False):
    """Posterior mean and variance (or covariance) of the latent function."""
    if gp.chol is None:
        raise GPError("GP is not fitted")
    query = np.atleast_2d(np.asarray(query, dtype=float))
    ks = gp.kernel(gp.x, query)
    mean = gp.mean + ks.T @ gp.alpha
    v = solve_triangular(gp.chol, ks, lower=True)
    if full_cov:
        return mean, gp.kernel(query, query) - v.T @ v
    var = gp.prior_var(len(query)) - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def batch_posterior(gp: GPModel, batches: np.ndarray):
    """Joint posteriors of many q-batches at once: means (n, q), covariances (n, q, q)."""
    n, q, d = batches.shape
    flat = batches.reshape(n * q, d)
    ks = gp.kernel(gp.x, flat)
    mean = (gp.mean + ks.T @ gp.alpha).reshape(n, q)
    v = solve_triangular(gp.chol, ks, lower=True).reshape(-1, n, q)
    cov = gp.batch_kernel(batches) - np.einsum("kni,knj->nij", v, v)
    return mean, cov
