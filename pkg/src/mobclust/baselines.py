"""Comparison methods: K-means on sum vectors and K-medoids over DTW distances."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_LLOYD_ITER = 300


@dataclass
class KMeansResult:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int
    inertia_history: list[float] = field(default_factory=list)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        # all points coincide with chosen centers: fall back to a uniform pick
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = MAX_LLOYD_ITER) -> KMeansResult:
    """Lloyd iterations until the assignment stops changing.

    An emptied cluster is re-seeded at the point farthest from its current
    center.
    """
    C = centers.astype(np.float64).copy()
    k = len(C)
    assign = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, C)
        new = d.argmin(axis=1)
        history.append(float(d[np.arange(len(X)), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = assign == j
            if members.any():
                C[j] = X[members].mean(axis=0)
            else:
                far = int(d[np.arange(len(X)), assign].argmax())
                C[j] = X[far]
                assign[far] = j
                d[far] = 0.0
    d = _sq_dists(X, C)
    assign = d.argmin(axis=1)
    inertia = float(d[np.arange(len(X)), assign].sum())
    return KMeansResult(C, assign, inertia, it, history)


def kmeans(X, k: int, restarts: int = 10, seed: int = 0,
           max_iter: int = MAX_LLOYD_ITER) -> KMeansResult:
    """Best-of-``restarts`` Lloyd from k-means++ seeds, by inertia."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if not 1 <= k <= len(X):
        raise ValueError(f"need 1 <= K <= N, got K={k}, N={len(X)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        res = lloyd(X, kmeans_plus_plus(X, k, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


# -- DTW ----------------------------------------------------------------------

def _as_seq(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or len(a) == 0:
        raise ValueError("DTW needs non-empty (t, D) sequences")
    return a


def dtw(a, b) -> float:
    """Unconstrained DTW with Euclidean step cost; 1-D input is read as scalar steps."""
    a, b = _as_seq(a), _as_seq(b)
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    return float(_dtw_batch(cost[None])[0])


def _dtw_batch(cost: np.ndarray) -> np.ndarray:
    """Accumulated DTW cost for a stack of (P, n, m) step-cost grids."""
    _, n, m = cost.shape
    acc = np.full((cost.shape[0], n + 1, m + 1), np.inf)
    acc[:, 0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            prev = np.minimum(np.minimum(acc[:, i - 1, j], acc[:, i, j - 1]), acc[:, i - 1, j - 1])
            acc[:, i, j] = cost[:, i - 1, j - 1] + prev
    return acc[:, n, m]


def dtw_matrix(sequences: Sequence) -> np.ndarray:
    """Symmetric (N, N) DTW matrix; pairs are batched by length combination."""
    seqs = [_as_seq(s) for s in sequences]
    n = len(seqs)
    by_len = defaultdict(list)
    for i, s in enumerate(seqs):
        by_len[len(s)].append(i)
    lengths = sorted(by_len)
    out = np.zeros((n, n))
    for la in lengths:
        A = np.stack([seqs[i] for i in by_len[la]])
        for lb in lengths:
            if lb < la:
                continue
            B = np.stack([seqs[i] for i in by_len[lb]])
            ia = np.array(by_len[la])
            ib = np.array(by_len[lb])
            cost = np.sqrt(((A[:, None, :, None, :] - B[None, :, None, :, :]) ** 2).sum(axis=-1))
            vals = _dtw_batch(cost.reshape(-1, la, lb)).reshape(len(ia), len(ib))
            out[np.ix_(ia, ib)] = vals
            out[np.ix_(ib, ia)] = vals.T
    np.fill_diagonal(out, 0.0)
    return out


# -- K-medoids ----------------------------------------------------------------

@dataclass
class KMedoidsResult:
    medoids: np.ndarray
    assignments: np.ndarray
    cost: float
    cost_history: list[float]


def _kmedoids_init(D: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    n = len(D)
    medoids = [int(rng.integers(n))]
    near = D[medoids[0]].copy()
    for _ in range(1, k):
        w = near ** 2
        w[medoids] = 0.0
        if w.sum() > 0:
            idx = int(rng.choice(n, p=w / w.sum()))
        else:
            idx = int(rng.choice([i for i in range(n) if i not in medoids]))
        medoids.append(idx)
        near = np.minimum(near, D[idx])
    return medoids


def pam(D: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 200) -> KMedoidsResult:
    """Best-improvement swap descent from a k-medoids++ start."""
    n = len(D)
    medoids = _kmedoids_init(D, k, rng)
    history = []
    for _ in range(max_iter):
        Dm = D[:, medoids]
        order = np.argsort(Dm, axis=1, kind="stable")
        nearest = Dm[np.arange(n), order[:, 0]]
        cost = float(nearest.sum())
        history.append(cost)
        if k == n:
            break
        second = Dm[np.arange(n), order[:, 1]] if k > 1 else np.full(n, np.inf)
        best_gain, best_swap = 1e-12 * max(cost, 1.0), None
        is_medoid = np.zeros(n, dtype=bool)
        is_medoid[medoids] = True
        for pos in range(k):
            without = np.where(order[:, 0] == pos, second, nearest)
            new_cost = np.minimum(D, without[:, None]).sum(axis=0)
            new_cost[is_medoid] = np.inf
            o = int(new_cost.argmin())
            gain = cost - new_cost[o]
            if gain > best_gain:
                best_gain, best_swap = gain, (pos, o)
        if best_swap is None:
            break
        medoids[best_swap[0]] = best_swap[1]
    Dm = D[:, medoids]
    assign = Dm.argmin(axis=1)
    return KMedoidsResult(np.array(medoids), assign, float(Dm[np.arange(n), assign].sum()), history)


def kmedoids(D: np.ndarray, k: int, seed: int = 0, restarts: int = 5) -> KMedoidsResult:
    D = np.asarray(D, dtype=np.float64)
    if not 1 <= k <= len(D):
        raise ValueError(f"need 1 <= K <= N, got K={k}, N={len(D)}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        res = pam(D, k, rng)
        if best is None or res.cost < best.cost:
            best = res
    return best


def km_dtw(sequences: Sequence, k: int, seed: int = 0, restarts: int = 5,
           distances: np.ndarray | None = None) -> KMedoidsResult:
    """K-medoids over the pairwise DTW matrix (K-means needs a vector space)."""
    D = dtw_matrix(sequences) if distances is None else distances
    return kmedoids(D, k, seed=seed, restarts=restarts)
