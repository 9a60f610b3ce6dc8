"""Gaussian-process regression with a Matern-5/2 kernel and Expected Improvement."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import ndtr

JITTERS = (1e-6, 1e-5, 1e-4, 1e-3)
LENGTH_SCALES = (0.1, 0.2, 0.5)


class GpNumericalError(ArithmeticError):
    """Covariance matrix stayed non positive definite after jitter escalation."""


def matern52(A: np.ndarray, B: np.ndarray, length_scale: float) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    r = np.sqrt(np.maximum(d2, 0.0)) / length_scale
    s5r = math.sqrt(5.0) * r
    return (1.0 + s5r + 5.0 / 3.0 * r * r) * np.exp(-s5r)


@dataclass(frozen=True)
class GpModel:
    """Fitted GP on unit-cube inputs.

    Targets are standardised internally (``y_mean``, ``y_scale``); the prior
    has zero mean and unit signal variance in standardised units.
    """
    X: np.ndarray
    y: np.ndarray
    length_scale: float
    noise_variance: float
    jitter: float
    y_mean: float
    y_scale: float
    chol: np.ndarray
    alpha: np.ndarray
    log_marginal_likelihood: float


def _factor(X, z, length_scale, noise_variance):
    K = matern52(X, X, length_scale)
    n = len(X)
    for jitter in JITTERS:
        try:
            L = cholesky(K + (noise_variance + jitter) * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve((L, True), z)
        lml = -0.5 * z @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
        return L, alpha, jitter, float(lml)
    raise GpNumericalError(f"Cholesky failed up to jitter {JITTERS[-1]}")


def gp_fit(X, y, noise_variance: float = 0.01, length_scales=LENGTH_SCALES) -> GpModel:
    """Fit on inputs already normalised to the unit cube.

    The length scale is the candidate with the highest log marginal likelihood.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 1:
        raise ValueError("GP needs at least one training point")
    y_mean = float(y.mean())
    y_scale = float(y.std())
    if not y_scale > 0:
        y_scale = 1.0
    z = (y - y_mean) / y_scale
    best = None
    for ls in length_scales:
        L, alpha, jitter, lml = _factor(X, z, ls, noise_variance)
        if best is None or lml > best[-1]:
            best = (ls, L, alpha, jitter, lml)
    ls, L, alpha, jitter, lml = best
    return GpModel(X, y, ls, noise_variance, jitter, y_mean, y_scale, L, alpha, lml)


def gp_posterior(model: GpModel, Xq):
    """Posterior mean and variance of the latent function at ``Xq``."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    Ks = matern52(Xq, model.X, model.length_scale)
    mean = Ks @ model.alpha
    v = solve_triangular(model.chol, Ks.T, lower=True)
    var = np.maximum(1.0 - (v * v).sum(0), 0.0)
    return model.y_mean + model.y_scale * mean, var * model.y_scale ** 2


def expected_improvement(mean, variance, best_observed):
    """Expected Improvement for minimisation; vectorised over ``mean``/``variance``."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    gain = best_observed - mean
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sigma > 0, gain / np.where(sigma > 0, sigma, 1.0), 0.0)
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        ei = gain * ndtr(z) + sigma * pdf
    # E[max(0, X)] >= max(0, E[X]); clamp away rounding in the far tail
    ei = np.maximum(np.where(sigma > 0, ei, 0.0), np.maximum(gain, 0.0))
    return ei if ei.ndim else float(ei)
