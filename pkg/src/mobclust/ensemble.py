"""Checkpoint-ensemble assignment and per-instance reliability.

All functions take a posterior stack ``Q`` of shape (E, N, K): one row-
stochastic N x K matrix per post-convergence epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS_DIV = 1e-8
DEFAULT_BOUNDARY_QUANTILE = 0.15


def _check_stack(Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim == 2:
        Q = Q[None]
    if Q.ndim != 3 or Q.shape[0] < 1:
        raise ValueError(f"posterior stack must have shape (epochs, N, K), got {Q.shape}")
    return Q


def ensemble_predict(Q) -> tuple[np.ndarray, np.ndarray]:
    """(memberships, mean posterior); ties resolve to the lowest cluster id."""
    Q = _check_stack(Q)
    # sorting over epochs first makes the sums independent of epoch order, bit for bit
    q_bar = np.sort(Q, axis=0).mean(axis=0)
    return q_bar.argmax(axis=1), q_bar


def _picked(Q: np.ndarray, y_star) -> np.ndarray:
    y_star = np.asarray(y_star, dtype=np.int64)
    if y_star.shape != (Q.shape[1],):
        raise ValueError(f"expected {Q.shape[1]} memberships, got shape {y_star.shape}")
    return np.sort(Q[:, np.arange(Q.shape[1]), y_star], axis=0)  # (E, N), epoch-order free


def confidence(Q, y_star) -> np.ndarray:
    return _picked(_check_stack(Q), y_star).mean(axis=0)


def variability(Q, y_star, mu_hat=None) -> np.ndarray:
    """Population standard deviation over epochs of q_e(y*|x)."""
    p = _picked(_check_stack(Q), y_star)
    mu = p.mean(axis=0) if mu_hat is None else np.asarray(mu_hat)
    return np.sqrt(((p - mu) ** 2).mean(axis=0))


def reliability(mu_hat, sigma_hat, eps: float = EPS_DIV) -> np.ndarray:
    return np.asarray(mu_hat) / (np.asarray(sigma_hat) + eps)


def flag_boundary(r, quantile: float = DEFAULT_BOUNDARY_QUANTILE) -> tuple[np.ndarray, float]:
    """Flag the ``ceil(quantile * N)`` least reliable instances.

    Returns the boolean flags and the threshold (the smallest unflagged
    reliability, so flagged exactly means ``r < threshold`` when values are
    distinct).  Ties are broken by instance order.
    """
    r = np.asarray(r, dtype=np.float64)
    if not 0.0 <= quantile <= 1.0:
        raise ValueError("quantile must lie in [0, 1]")
    n = len(r)
    m = min(n, math.ceil(quantile * n - 1e-12))
    order = np.argsort(r, kind="stable")
    flags = np.zeros(n, dtype=bool)
    flags[order[:m]] = True
    threshold = float(r[order[m]]) if m < n else math.inf
    return flags, threshold


@dataclass
class EnsembleResult:
    membership: np.ndarray
    confidence: np.ndarray
    variability: np.ndarray
    reliability: np.ndarray
    q_bar: np.ndarray
    boundary: np.ndarray
    threshold: float


def interpret(Q, quantile: float = DEFAULT_BOUNDARY_QUANTILE) -> EnsembleResult:
    Q = _check_stack(Q)
    y, q_bar = ensemble_predict(Q)
    mu = confidence(Q, y)
    sigma = variability(Q, y, mu)
    r = reliability(mu, sigma)
    flags, thr = flag_boundary(r, quantile)
    return EnsembleResult(y, mu, sigma, r, q_bar, flags, thr)
