"""Minibatch training with convergence detection and per-epoch posteriors."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, ModelParams, centers, forward, posterior
from .objective import DEFAULT_MARGIN, LossBreakdown, LossTermError, total_loss

log = logging.getLogger(__name__)

SCALINGS = ("global", "per-dim")
LOG_FIELDS = ("epoch", "mse", "kl_cat", "kl_gauss", "l_orig", "l_latent", "total", "tau")


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, term: str, detail: str = ""):
        self.epoch = epoch
        self.term = term
        super().__init__(f"epoch {epoch}: non-finite loss in {term}" + (f" ({detail})" if detail else ""))


@dataclass
class TrainConfig:
    epochs_max: int = 1000
    extra_epochs: int = 150
    batch_size: int = 64
    seed: int = 0
    lambda1: float = 0.1
    lambda2: float = 0.1
    margin: float = DEFAULT_MARGIN
    tau_start: float = 1.0
    tau_decay: float = 0.997
    tau_min: float = 0.3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    window: int = 20
    tolerance: float = 0.005
    converge_epoch: int | None = None   # user-supplied n overrides detection
    scaling: str = "global"             # "global": one scale for all dims; "per-dim"

    def __post_init__(self):
        for name in ("epochs_max", "batch_size", "window", "tau_start", "tau_min", "lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.extra_epochs < 0 or self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("extra_epochs, lambda1 and lambda2 must be nonnegative")
        if not 0 < self.tau_decay <= 1:
            raise ValueError("tau_decay must lie in (0, 1]")
        if self.scaling not in SCALINGS:
            raise ValueError(f"scaling must be one of {SCALINGS}")
        if self.converge_epoch is not None and not 1 <= self.converge_epoch <= self.epochs_max:
            raise ValueError("converge_epoch must lie in [1, epochs_max]")

    def tau(self, epoch: int) -> float:
        """Gumbel temperature used during 1-based ``epoch``."""
        return max(self.tau_min, self.tau_start * self.tau_decay ** (epoch - 1))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochPredictions:
    epoch: int
    Q: np.ndarray


@dataclass
class TrainResult:
    params: ModelParams
    mean: np.ndarray
    scale: np.ndarray
    log: list[dict[str, float]]
    predictions: list[EpochPredictions]   # epochs n..max_epoch inclusive
    converge_epoch: int
    max_epoch: int
    converged: bool
    config: TrainConfig = field(repr=False, default=None)

    def stack(self) -> np.ndarray:
        return np.stack([p.Q for p in self.predictions])


def detect_convergence(history, window: int, tol: float) -> int | None:
    """First 1-based epoch ``e >= window`` whose trailing ``window`` losses
    span less than ``tol * |mean|``; ``None`` if there is none yet."""
    h = np.asarray(history, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    for e in range(window, len(h) + 1):
        w = h[e - window:e]
        if w.max() - w.min() < tol * abs(w.mean()) or (w.max() == w.min()):
            return e
    return None


def standardize_fit(X: np.ndarray, scaling: str = "global") -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension centering plus either one shared scale (keeps Euclidean
    geometry up to a constant) or per-dimension unit variance."""
    mean = X.mean(axis=0)
    if scaling == "per-dim":
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        # total variance spread evenly: mean squared norm of centered rows == D
        s = float(np.sqrt(((X - mean) ** 2).sum(axis=1).mean() / X.shape[1]))
        scale = np.full(X.shape[1], s if s > 0 else 1.0)
    return mean, scale


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for init, shuffling, Gumbel and Gaussian noise."""
    names = ("init", "shuffle", "gumbel", "gauss")
    return {k: np.random.default_rng(s)
            for k, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


def train_step(xb: np.ndarray, params: ModelParams, cfg: TrainConfig, tau: float,
               rngs: dict, adam: ad.AdamState) -> LossBreakdown:
    with ad.Tape() as tape:
        fp = forward(xb, params, tau, rngs["gumbel"], rngs["gauss"])
        cx, cz = centers(params) if (cfg.lambda1 > 0 or cfg.lambda2 > 0) else (None, None)
        br = total_loss(ad.Tensor(xb), fp, cx, cz, cfg.lambda1, cfg.lambda2, cfg.margin)
    leaves = list(params.tensors.values())
    grads = tape.backward(br.total_tensor, wrt=leaves)
    ad.adam_step(params.arrays(), {t.name: grads[t] for t in leaves}, adam)
    return br


def train(X, cfg: TrainConfig, model_cfg: ModelConfig) -> TrainResult:
    """Train until convergence plus ``extra_epochs``; keep q(y|x) per epoch.

    Posteriors for epoch ``e`` are computed from the parameters as they
    stand at the end of epoch ``e``, without Gumbel noise.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training data must be a non-empty (N, D) matrix")
    if X.shape[1] != model_cfg.input_dim:
        raise ValueError(f"data dimension {X.shape[1]} != model input_dim {model_cfg.input_dim}")
    mean, scale = standardize_fit(X, cfg.scaling)
    Xs = (X - mean) / scale
    n = len(Xs)

    rngs = rng_streams(cfg.seed)
    params = ModelParams.init(model_cfg, rngs["init"])
    adam = ad.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)

    history: list[float] = []
    rows: list[dict[str, float]] = []
    Qs: list[np.ndarray] = []
    n_conv = cfg.converge_epoch
    stop = cfg.epochs_max if n_conv is None else min(cfg.epochs_max, n_conv + cfg.extra_epochs)
    epoch = 0
    while epoch < stop:
        epoch += 1
        tau = cfg.tau(epoch)
        order = rngs["shuffle"].permutation(n)
        sums = dict.fromkeys(LossBreakdown.FIELDS, 0.0)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                br = train_step(Xs[idx], params, cfg, tau, rngs, adam)
            except LossTermError as exc:
                raise TrainingError(epoch, exc.term, exc.op) from None
            except ad.NonFiniteError as exc:
                raise TrainingError(epoch, "forward", exc.op) from None
            for k in LossBreakdown.FIELDS:
                sums[k] += getattr(br, k) * len(idx)
        row = {"epoch": epoch, "mse": sums["mse_recon"] / n, "kl_cat": sums["kl_categorical"] / n,
               "kl_gauss": sums["kl_gaussian"] / n, "l_orig": sums["loss_original"] / n,
               "l_latent": sums["loss_latent"] / n, "total": sums["total"] / n, "tau": tau}
        if not np.isfinite(row["total"]):
            raise TrainingError(epoch, "total")
        rows.append(row)
        history.append(row["total"])
        Qs.append(posterior(Xs, params))

        if n_conv is None and len(history) >= cfg.window:
            # only the newest window can newly qualify
            w = np.asarray(history[-cfg.window:])
            if detect_convergence(w, cfg.window, cfg.tolerance) is not None:
                n_conv = epoch
                stop = min(cfg.epochs_max, n_conv + cfg.extra_epochs)
                log.info("converged at epoch %d; training through epoch %d", n_conv, stop)

    converged = n_conv is not None
    if not converged:
        n_conv = max(1, cfg.epochs_max - cfg.extra_epochs)
        log.warning("loss did not converge within %d epochs; ensembling epochs %d..%d",
                    cfg.epochs_max, n_conv, epoch)
    preds = [EpochPredictions(e, Qs[e - 1]) for e in range(n_conv, epoch + 1)]
    return TrainResult(params=params, mean=mean, scale=scale, log=rows, predictions=preds,
                       converge_epoch=n_conv, max_epoch=epoch, converged=converged, config=cfg)


def predict_posterior(X, result: TrainResult) -> np.ndarray:
    return posterior((np.asarray(X, dtype=np.float64) - result.mean) / result.scale, result.params)
