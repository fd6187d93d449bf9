"""Matplotlib figure rendering for the report paths.

Every CLI command that writes delimited output also renders the matching
figure here.  All figures go straight to files (Agg backend, no display).
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def save_confusion_figure(counts: np.ndarray, class_names: Sequence[str], path,
                          title: str = "Confusion matrix") -> None:
    n = counts.shape[0]
    fig, ax = plt.subplots(figsize=(0.9 * n + 2, 0.8 * n + 1.5))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(n), class_names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(n), class_names, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    thresh = counts.max() / 2 if counts.max() else 0.5
    for i in range(n):
        for j in range(n):
            ax.text(j, i, str(int(counts[i, j])), ha="center", va="center",
                    fontsize=8, color="white" if counts[i, j] > thresh else "black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_history_figure(history, path) -> None:
    epochs = [r.epoch for r in history.records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(epochs, [r.loss_total for r in history.records], label="total")
    for key, label in (("loss_task", "task"), ("loss_distil", "distil CE"),
                       ("loss_cosine", "cosine"), ("loss_mse", "mse"), ("loss_kl", "kl")):
        vals = [getattr(r, key) for r in history.records]
        if any(v != 0.0 for v in vals):
            ax1.plot(epochs, vals, label=label, alpha=0.7)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.set_title("training loss")
    ax1.legend(fontsize=8)

    ax2.plot(epochs, [r.train_acc for r in history.records], label="train acc")
    ev = [(r.epoch, r.eval_acc, r.eval_bma) for r in history.records if r.eval_acc is not None]
    if ev:
        ax2.plot([e for e, _, _ in ev], [a for _, a, _ in ev], "o-", label="eval acc")
        ax2.plot([e for e, _, _ in ev], [b for _, _, b in ev], "s-", label="eval BMA")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.set_title("accuracy")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_embedding_figure(coords: np.ndarray, labels: Sequence[int],
                          class_names: Sequence[str], path,
                          title: str = "2-D embedding projection") -> None:
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(7, 6))
    cmap = plt.get_cmap("tab10")
    for c in sorted(set(labels.tolist())):
        pts = coords[labels == c]
        name = class_names[c] if c < len(class_names) else str(c)
        ax.scatter(pts[:, 0], pts[:, 1], s=14, color=cmap(c % 10), label=name, alpha=0.8)
    ax.set_title(title)
    ax.legend(fontsize=7, markerscale=1.2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_attention_figure(image: np.ndarray, heat: np.ndarray, path,
                          title: str = "class-token attention") -> None:
    """Original image next to the attention-weighted overlay."""
    rgb = np.clip(image.transpose(1, 2, 0), 0, 1)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 3.6))
    ax1.imshow(rgb)
    ax1.set_title("image")
    ax1.axis("off")
    ax2.imshow(rgb)
    ax2.imshow(heat, cmap="inferno", alpha=0.55, vmin=0.0, vmax=1.0)
    ax2.set_title(title)
    ax2.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_cascade_figure(depths: Sequence[int], bmas: Sequence[float],
                        accuracies: Sequence[float], path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(depths, bmas, "o-", label="BMA")
    ax.plot(depths, accuracies, "s-", label="accuracy")
    ax.set_xlabel("transformer blocks")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.02)
    ax.invert_xaxis()
    ax.set_title("cascade: score vs depth")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bench_figure(names: Sequence[str], items_per_second: Sequence[float], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(names)), items_per_second, color="tab:blue")
    ax.set_xticks(range(len(names)), names, rotation=20, ha="right")
    ax.set_ylabel("items / second")
    ax.set_title("inference throughput")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
