"""Figures written next to the delimited/binary report files."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import CLASSES  # noqa: E402

_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_METADATA)
    plt.close(fig)


def spectrogram_pair(real, generated, path, title=None):
    """Side-by-side log-mel panels (frames x bins inputs, frequency upward)."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2), sharey=True)
    lo = min(real.min(), generated.min())
    hi = max(real.max(), generated.max())
    for ax, mat, name in zip(axes, (real, generated), ("real", "generated")):
        im = ax.imshow(mat.T, origin="lower", aspect="auto", vmin=lo, vmax=hi, cmap="magma")
        ax.set_title(name)
        ax.set_xlabel("frame")
    axes[0].set_ylabel("mel bin")
    fig.colorbar(im, ax=axes, shrink=0.85, label="log mel")
    if title:
        fig.suptitle(title)
    _save(fig, path)


def confusion_matrix(cm, path, title=None):
    cm = np.asarray(cm)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    rows = cm.sum(axis=1, keepdims=True)
    frac = np.divide(cm, rows, out=np.zeros(cm.shape), where=rows > 0)
    ax.imshow(frac, cmap="Blues", vmin=0, vmax=1)
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            color = "white" if frac[i, j] > 0.5 else "black"
            ax.text(j, i, str(int(cm[i, j])), ha="center", va="center", color=color, fontsize=9)
    ax.set_xticks(range(len(CLASSES)), CLASSES, rotation=30)
    ax.set_yticks(range(len(CLASSES)), CLASSES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def training_curves(history, path, title=None):
    epochs = [r["epoch"] for r in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(epochs, [r["l_ce"] for r in history], label="L_CE")
    ax1.plot(epochs, [r["l_dis"] for r in history], label="L_Dis")
    ax1.plot(epochs, [r["lambda"] for r in history], "--", label="lambda")
    ax1.set_xlabel("epoch")
    ax1.legend(frameon=False)
    scores = [r["score"] for r in history]
    if any(s is not None for s in scores):
        ax2.plot(epochs, [np.nan if s is None else s for s in scores], label="Score")
        ax2.plot(epochs, [np.nan if r["se"] is None else r["se"] for r in history], label="Se")
        ax2.plot(epochs, [np.nan if r["sp"] is None else r["sp"] for r in history], label="Sp")
        ax2.legend(frameon=False)
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("%")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def loss_curve(steps, losses, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(steps, losses)
    ax.set_xlabel("step")
    ax.set_ylabel("epsilon MSE")
    ax.set_yscale("log")
    fig.tight_layout()
    _save(fig, path)
