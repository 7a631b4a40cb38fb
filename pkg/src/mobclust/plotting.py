"""Report figures rendered off-screen (Agg) next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so reruns produce identical bytes
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_loss(rows, path, converge_epoch: int | None = None) -> Path:
    """Total loss and its reconstruction share per epoch."""
    ep = np.array([r["epoch"] for r in rows])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ep, [r["total"] for r in rows], label="total", lw=1.2)
    ax.plot(ep, [r["mse"] for r in rows], label="reconstruction", lw=1.0)
    if converge_epoch is not None:
        ax.axvline(converge_epoch, color="0.4", ls="--", lw=0.8, label="ensemble start")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_elbow(result, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(result.ks, result.sse, "o-", lw=1.2)
    ax.axvline(result.k, color="C3", ls="--", lw=0.8, label=f"chosen K={result.k}")
    ax.set_xlabel("K")
    ax.set_ylabel("within-cluster SSE")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_reliability(confidence, variability, boundary, path, correct=None) -> Path:
    """Confidence against variability; flagged instances are outlined."""
    confidence, variability = np.asarray(confidence), np.asarray(variability)
    boundary = np.asarray(boundary, dtype=bool)
    fig, ax = plt.subplots(figsize=(5, 4))
    if correct is None:
        ax.scatter(variability, confidence, s=8, c="C0", label="instances")
    else:
        correct = np.asarray(correct, dtype=bool)
        ax.scatter(variability[correct], confidence[correct], s=8, c="C0", label="correct")
        ax.scatter(variability[~correct], confidence[~correct], s=10, c="C3", marker="x",
                   label="misassigned")
    ax.scatter(variability[boundary], confidence[boundary], s=30, facecolors="none",
               edgecolors="0.3", lw=0.6, label="boundary flag")
    ax.set_xlabel("variability")
    ax.set_ylabel("confidence")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
