"""Training losses: reconstruction ELBO terms and the two clustering terms.

The total minimised per batch is

    |x - x'|^2 + KL_cat + KL_gauss
      + lambda1 * (|x_c - x|^2 - sum_pairs min(|x_c_i - x_c_j|^2, m))
      + lambda2 * (|z - z_c|^2 - sum_pairs min(|z_c_i - z_c_j|^2, m))

with every per-instance squared norm batch-meaned and each unordered center
pair counted once.  The cap ``m`` bounds the otherwise unbounded-below
repulsion between centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor

DEFAULT_MARGIN = 10.0


class LossTermError(FloatingPointError):
    def __init__(self, term: str, op: str):
        self.term = term
        self.op = op
        super().__init__(f"non-finite value in loss term {term!r} (op {op})")


@dataclass
class LossBreakdown:
    mse_recon: float
    kl_categorical: float
    kl_gaussian: float
    loss_original: float
    loss_latent: float
    total: float
    lambda1: float
    lambda2: float
    total_tensor: Tensor | None = None

    FIELDS = ("mse_recon", "kl_categorical", "kl_gaussian", "loss_original", "loss_latent", "total")

    @property
    def reconstruction(self) -> float:
        return self.mse_recon + self.kl_categorical + self.kl_gaussian

    def as_row(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.FIELDS}


def kl_categorical(q_y) -> Tensor:
    """Batch mean of ``log K - H(q)``; zero iff every row is uniform."""
    q_y = q_y if isinstance(q_y, Tensor) else Tensor(q_y)
    n, k = q_y.shape
    neg_entropy = ad.scale(ad.reduce_sum(ad.xlogx(q_y)), 1.0 / n)
    return ad.add(neg_entropy, Tensor(math.log(k)))


def kl_gaussian(mu, log_var) -> Tensor:
    """Batch mean of ``sum_dims(mu^2 + var - log var)``.

    This is the divergence as printed in the method (no ``-1`` per dim), so a
    standard-normal posterior scores ``latent_dim`` rather than zero.
    """
    mu = mu if isinstance(mu, Tensor) else Tensor(mu)
    log_var = log_var if isinstance(log_var, Tensor) else Tensor(log_var)
    if mu.shape != log_var.shape:
        raise ad.ShapeError("kl_gaussian", mu.shape, log_var.shape)
    per = ad.sub(ad.add(ad.square(mu), ad.exp(log_var)), log_var)
    return ad.scale(ad.reduce_sum(per), 1.0 / mu.shape[0])


def reconstruction_error(x, x_rec) -> Tensor:
    """Batch mean of the per-instance squared error ``|x - x'|^2``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    x_rec = x_rec if isinstance(x_rec, Tensor) else Tensor(x_rec)
    if x.shape != x_rec.shape:
        raise ad.ShapeError("reconstruction_error", x.shape, x_rec.shape)
    return ad.scale(ad.reduce_sum(ad.square(ad.sub(x, x_rec))), 1.0 / x.shape[0])


def reconstruction_loss(x, x_rec, q_y, mu, log_var) -> Tensor:
    return ad.add(ad.add(reconstruction_error(x, x_rec), kl_categorical(q_y)),
                  kl_gaussian(mu, log_var))


def pair_matrix(k: int) -> np.ndarray:
    """(K(K-1)/2, K) matrix whose rows are e_i - e_j for i < j."""
    rows = []
    for i in range(k):
        for j in range(i + 1, k):
            r = np.zeros(k)
            r[i], r[j] = 1.0, -1.0
            rows.append(r)
    return np.array(rows).reshape(-1, k)


def inter_center_term(centers, margin: float | None = DEFAULT_MARGIN) -> Tensor:
    """Sum over unordered center pairs of squared distance, each capped at ``margin``.

    ``margin=None`` disables the cap.
    """
    centers = centers if isinstance(centers, Tensor) else Tensor(centers)
    k = centers.shape[0]
    if k < 2:
        return Tensor(0.0)
    d2 = ad.reduce_sum(ad.square(ad.matmul(Tensor(pair_matrix(k)), centers)), axis=1)
    if margin is not None:
        d2 = ad.clip(d2, 0.0, margin)
    return ad.reduce_sum(d2)


def _intra(points, assigned) -> Tensor:
    points = points if isinstance(points, Tensor) else Tensor(points)
    assigned = assigned if isinstance(assigned, Tensor) else Tensor(assigned)
    if points.shape != assigned.shape:
        raise ad.ShapeError("clustering_loss", points.shape, assigned.shape)
    return ad.scale(ad.reduce_sum(ad.square(ad.sub(assigned, points))), 1.0 / points.shape[0])


def clustering_loss_original(x, x_c, centers, margin: float | None = DEFAULT_MARGIN) -> Tensor:
    """Batch-mean ``|x_c - x|^2`` minus the capped inter-center sum.

    ``x_c`` holds each instance's assigned decoded center (one row per
    instance); ``centers`` holds all K decoded centers.
    """
    return ad.sub(_intra(x, x_c), inter_center_term(centers, margin))


def clustering_loss_latent(z, z_c, W, margin: float | None = DEFAULT_MARGIN) -> Tensor:
    return ad.sub(_intra(z, z_c), inter_center_term(W, margin))


def _term(name, fn, *args):
    try:
        return fn(*args)
    except NonFiniteError as exc:
        raise LossTermError(name, getattr(exc, "op", "?")) from None


def total_loss(x, fp, center_x, center_z, lambda1: float = 0.1, lambda2: float = 0.1,
               margin: float | None = DEFAULT_MARGIN) -> LossBreakdown:
    """Evaluate every term for one forward pass; ``total_tensor`` is differentiable."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be nonnegative")
    x = x if isinstance(x, Tensor) else Tensor(x)
    mse = _term("mse_recon", reconstruction_error, x, fp.x_rec)
    klc = _term("kl_categorical", kl_categorical, fp.q_y)
    klg = _term("kl_gaussian", kl_gaussian, fp.mu, fp.log_var)
    total = ad.add(ad.add(mse, klc), klg)
    l_orig = l_lat = Tensor(0.0)
    if lambda1 > 0:
        l_orig = _term("loss_original", clustering_loss_original, x, fp.x_c, center_x, margin)
        total = ad.add(total, ad.scale(l_orig, lambda1))
    if lambda2 > 0:
        l_lat = _term("loss_latent", clustering_loss_latent, fp.z, fp.z_c, center_z, margin)
        total = ad.add(total, ad.scale(l_lat, lambda2))
    return LossBreakdown(
        mse_recon=mse.item(), kl_categorical=klc.item(), kl_gaussian=klg.item(),
        loss_original=l_orig.item(), loss_latent=l_lat.item(), total=total.item(),
        lambda1=lambda1, lambda2=lambda2, total_tensor=total,
    )
