"""Dual-path VAE over sum vectors.

x -> h (MLP encoder) splits into
  * a cluster head: logits -> q(y|x); Gumbel-softmax y; z_c = y @ W
  * Gaussian heads: mu(h), log-variance(h); z_d by reparameterisation
and one decoder maps both z = z_c + z_d (to x') and z_c alone (to x_c).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0

_ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    n_clusters: int
    hidden_dim: int = 64
    latent_dim: int = 32
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("input_dim", "n_clusters", "hidden_dim", "latent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams:
    """All learnable tensors, keyed by name."""

    # name -> (rows, cols) as functions of the config
    LAYOUT = {
        "enc_w1": lambda c: (c.input_dim, c.hidden_dim),
        "enc_b1": lambda c: (1, c.hidden_dim),
        "enc_w2": lambda c: (c.hidden_dim, c.hidden_dim),
        "enc_b2": lambda c: (1, c.hidden_dim),
        "cls_w": lambda c: (c.hidden_dim, c.n_clusters),
        "cls_b": lambda c: (1, c.n_clusters),
        "W": lambda c: (c.n_clusters, c.latent_dim),
        "mu_w": lambda c: (c.hidden_dim, c.latent_dim),
        "mu_b": lambda c: (1, c.latent_dim),
        "lv_w": lambda c: (c.hidden_dim, c.latent_dim),
        "lv_b": lambda c: (1, c.latent_dim),
        "dec_w1": lambda c: (c.latent_dim, c.hidden_dim),
        "dec_b1": lambda c: (1, c.hidden_dim),
        "dec_w2": lambda c: (c.hidden_dim, c.input_dim),
        "dec_b2": lambda c: (1, c.input_dim),
    }

    def __init__(self, config: ModelConfig, arrays: dict[str, np.ndarray]):
        self.config = config
        missing = set(self.LAYOUT) - set(arrays)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        self.tensors: dict[str, Tensor] = {}
        for name, shape_of in self.LAYOUT.items():
            arr = np.array(arrays[name], dtype=np.float64)
            if arr.shape != shape_of(config):
                raise ad.ShapeError("ModelParams", arr.shape, shape_of(config), detail=name)
            self.tensors[name] = Tensor(arr, requires_grad=True, name=name)

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        """Glorot-uniform weights, zero biases, unit-normal cluster embeddings."""
        arrays = {}
        for name, shape_of in cls.LAYOUT.items():
            rows, cols = shape_of(config)
            if name == "W":
                arrays[name] = rng.standard_normal((rows, cols))
            elif "_b" in name:
                arrays[name] = np.zeros((rows, cols))
            else:
                bound = np.sqrt(6.0 / (rows + cols))
                arrays[name] = rng.uniform(-bound, bound, (rows, cols))
        return cls(config, arrays)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def arrays(self) -> dict[str, np.ndarray]:
        """Live views of the parameter values (mutated in place by Adam)."""
        return {k: t.value for k, t in self.tensors.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.tensors.items()}


@dataclass
class ForwardPass:
    h: Tensor
    logits: Tensor
    q_y: Tensor
    y: Tensor
    z_c: Tensor
    mu: Tensor
    log_var: Tensor
    z_d: Tensor
    z: Tensor
    x_rec: Tensor
    x_c: Tensor


def _check_input(x: Tensor, params: ModelParams) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[1] != params.config.input_dim:
        raise ad.ShapeError("encode", x.shape, (x.shape[0], params.config.input_dim),
                            detail="input dimension mismatch")
    return x


def encode(x, params: ModelParams) -> Tensor:
    x = _check_input(x, params)
    act = _ACTIVATIONS[params.config.activation]
    h = act(ad.add(ad.matmul(x, params["enc_w1"]), params["enc_b1"]))
    return act(ad.add(ad.matmul(h, params["enc_w2"]), params["enc_b2"]))


def cluster_logits(h: Tensor, params: ModelParams) -> Tensor:
    return ad.add(ad.matmul(h, params["cls_w"]), params["cls_b"])


def cluster_posterior(h: Tensor, params: ModelParams) -> Tensor:
    return ad.row_softmax(cluster_logits(h, params))


def assign_relaxed(logits: Tensor, tau: float, rng: np.random.Generator | None = None,
                   noise: np.ndarray | None = None) -> Tensor:
    """Gumbel-softmax relaxation of y ~ q(y|x); only used while training."""
    return ad.sample_gumbel_softmax(logits, tau, rng, noise)


def cluster_latent(y: Tensor, W: Tensor) -> Tensor:
    if y.shape[1] != W.shape[0]:
        raise ad.ShapeError("cluster_latent", y.shape, W.shape)
    return ad.matmul(y, W)


def individual_latent(h: Tensor, params: ModelParams, rng: np.random.Generator | None = None,
                      eps: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor]:
    mu = ad.add(ad.matmul(h, params["mu_w"]), params["mu_b"])
    log_var = ad.clip(ad.add(ad.matmul(h, params["lv_w"]), params["lv_b"]), LOGVAR_MIN, LOGVAR_MAX)
    return mu, log_var, ad.sample_gaussian_reparam(mu, log_var, rng, eps)


def decode(z, params: ModelParams) -> Tensor:
    z = z if isinstance(z, Tensor) else Tensor(z)
    if z.shape[1] != params.config.latent_dim:
        raise ad.ShapeError("decode", z.shape, (z.shape[0], params.config.latent_dim))
    act = _ACTIVATIONS[params.config.activation]
    g = act(ad.add(ad.matmul(z, params["dec_w1"]), params["dec_b1"]))
    return ad.add(ad.matmul(g, params["dec_w2"]), params["dec_b2"])


def forward(x, params: ModelParams, tau: float,
            rng_gumbel: np.random.Generator | None = None,
            rng_gauss: np.random.Generator | None = None,
            gumbel_noise: np.ndarray | None = None,
            gauss_eps: np.ndarray | None = None) -> ForwardPass:
    """Full training-time pass; noise may be supplied explicitly for checks."""
    h = encode(x, params)
    logits = cluster_logits(h, params)
    q_y = ad.row_softmax(logits)
    y = assign_relaxed(logits, tau, rng_gumbel, gumbel_noise)
    z_c = cluster_latent(y, params["W"])
    mu, log_var, z_d = individual_latent(h, params, rng_gauss, gauss_eps)
    z = ad.add(z_c, z_d)
    return ForwardPass(h=h, logits=logits, q_y=q_y, y=y, z_c=z_c, mu=mu, log_var=log_var,
                       z_d=z_d, z=z, x_rec=decode(z, params), x_c=decode(z_c, params))


def centers(params: ModelParams) -> tuple[Tensor, Tensor]:
    """(original-space centers decode(W), latent centers W)."""
    W = params["W"]
    return decode(W, params), W


def posterior(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """Noise-free q(y|x) for a batch, as a plain array."""
    return cluster_posterior(encode(Tensor(x), params), params).value.copy()


def latent_embedding(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """Encoder output h, for external visualisation."""
    return encode(Tensor(x), params).value.copy()
