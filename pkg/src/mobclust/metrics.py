"""External clustering scores and elbow-based choice of K."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .baselines import _sq_dists, kmeans, lloyd

log = logging.getLogger(__name__)


def _dense(labels) -> np.ndarray:
    labels = np.asarray(labels)
    _, dense = np.unique(labels, return_inverse=True)
    return dense.ravel()


def contingency(pred, truth) -> np.ndarray:
    """(K_pred, K_truth) count matrix over densified labels."""
    pred, truth = np.asarray(pred).ravel(), np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"label length mismatch: predicted {pred.size}, truth {truth.size}")
    p, t = _dense(pred), _dense(truth)
    table = np.zeros((p.max() + 1 if p.size else 0, t.max() + 1 if t.size else 0), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


@dataclass
class Matching:
    accuracy: float
    pairs: list[tuple[int, int]]   # (predicted cluster, true class), original ids
    table: np.ndarray              # rows/cols follow the sorted distinct ids


def best_matching(pred, truth) -> Matching:
    """Optimal one-to-one cluster->class matching on the contingency table."""
    table = contingency(pred, truth)
    if table.size == 0:
        return Matching(0.0, [], table)
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(padded, maximize=True)
    kept = [(r, c) for r, c in zip(rows, cols) if r < table.shape[0] and c < table.shape[1]]
    hits = sum(table[r, c] for r, c in kept)
    p_ids, t_ids = np.unique(np.asarray(pred)), np.unique(np.asarray(truth))
    pairs = [(p_ids[r].item(), t_ids[c].item()) for r, c in kept]
    return Matching(float(hits / table.sum()), pairs, table)


def clustering_accuracy(pred, truth) -> float:
    return best_matching(pred, truth).accuracy


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Mutual information normalised by the arithmetic mean of the two entropies."""
    table = contingency(pred, truth).astype(np.float64)
    n = table.sum()
    if n == 0:
        return 0.0
    h_p = _entropy(table.sum(axis=1))
    h_t = _entropy(table.sum(axis=0))
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    if h_p == 0.0 or h_t == 0.0:
        return 0.0  # a single-cluster side carries no information
    denom = 0.5 * (h_p + h_t)
    return float(np.clip(max(mi, 0.0) / denom, 0.0, 1.0))


@dataclass
class ElbowResult:
    k: int
    ks: list[int]
    sse: list[float]
    curvature: dict[int, float]
    flat: bool


def elbow_curve(X, ks, restarts: int = 10, seed: int = 0) -> list[float]:
    """Within-cluster SSE per k, forced non-increasing via nested best-of restarts.

    The k-solution is also seeded from the (k-1)-solution's centers plus the
    worst-served point, so SSE(k) <= SSE(k-1) always holds.
    """
    X = np.asarray(X, dtype=np.float64)
    out = []
    prev = None
    for k in ks:
        res = kmeans(X, k, restarts=restarts, seed=seed + k)
        if prev is not None and prev.centers.shape[0] == k - 1:
            # adding a center never raises the cost and Lloyd never raises it either
            d = _sq_dists(X, prev.centers).min(axis=1)
            grown = lloyd(X, np.vstack([prev.centers, X[int(d.argmax())]]))
            if grown.inertia < res.inertia:
                res = grown
        out.append(res.inertia)
        prev = res
    return out


def elbow_select(X, k_range, restarts: int = 10, seed: int = 0,
                 flat_tol: float = 0.05) -> ElbowResult:
    """Pick the k with the largest second difference of the SSE curve.

    SSE is also evaluated at ``min(k_range) - 1`` (when >= 1) and
    ``max(k_range) + 1`` so every candidate has a second difference.  When
    the largest second difference is below ``flat_tol`` times the SSE at the
    smallest evaluated k, the curve has no elbow and the smallest candidate
    is returned.
    """
    ks = sorted(int(k) for k in k_range)
    if not ks or ks[0] < 1:
        raise ValueError("k_range must be non-empty with every k >= 1")
    X = np.asarray(X, dtype=np.float64)
    lo = max(1, ks[0] - 1)
    hi = min(len(X), ks[-1] + 1)
    grid = list(range(lo, hi + 1))
    sse = elbow_curve(X, grid, restarts=restarts, seed=seed)
    by_k = dict(zip(grid, sse))
    curvature = {}
    for k in ks:
        if k - 1 in by_k and k + 1 in by_k:
            curvature[k] = by_k[k - 1] - 2.0 * by_k[k] + by_k[k + 1]
    if not curvature:
        log.warning("elbow: no candidate has both neighbours; returning smallest k")
        return ElbowResult(ks[0], grid, sse, curvature, True)
    best = max(curvature, key=lambda k: (curvature[k], -k))
    scale = by_k[grid[0]]
    flat = scale <= 0 or curvature[best] < flat_tol * scale
    if flat:
        log.warning("elbow: SSE curve has no pronounced elbow; returning smallest k")
        best = ks[0]
    return ElbowResult(best, grid, sse, curvature, flat)
