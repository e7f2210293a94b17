"""Figure rendering for reports: loss curves, confusion matrices, IoU bars,
heatmap overlays, retrieval strips, and navigation timelines.

Every figure is written to a file next to its machine-readable counterpart;
nothing here opens a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import MetricsReport


def save_loss_curve(log_records: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    steps = [r["step"] for r in log_records if "loss" in r]
    losses = [r["loss"] for r in log_records if "loss" in r]
    h_steps = [r["step"] for r in log_records if "holdout_loss" in r]
    h_losses = [r["holdout_loss"] for r in log_records if "holdout_loss" in r]
    fig, ax = plt.subplots(figsize=(7, 4))
    if steps:
        ax.plot(steps, losses, lw=0.8, alpha=0.7, label="batch loss")
    if h_steps:
        ax.plot(h_steps, h_losses, "o-", color="crimson", label="held-out loss")
    ax.set_xlabel("step")
    ax.set_ylabel("triplet loss")
    ax.legend(loc="upper right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_confusion_matrix(report: MetricsReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cm = report.confusion
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(len(report.labels)), report.labels, rotation=45, ha="right")
    ax.set_yticks(range(len(report.labels)), report.labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"accuracy {report.accuracy:.3f}")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            if cm[i, j]:
                color = "white" if cm[i, j] > cm.max() / 2 else "black"
                ax.text(j, i, str(cm[i, j]), ha="center", va="center", color=color)
    fig.colorbar(im, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_iou_bars(seg_report: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = ["mean_accuracy", "mean_iou", "weighted_iou"]
    values = [seg_report[n] for n in names]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(names, values, color=["#4878d0", "#ee854a", "#6acc64"])
    ax.set_ylim(0, 1)
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center")
    ax.set_title("segmentation metrics")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_heatmap_overlay(image: np.ndarray, heat: np.ndarray, path: str | Path,
                         title: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 2, figsize=(10, 5))
    axes[0].imshow(image)
    axes[0].set_title("input")
    axes[1].imshow(image)
    hm = axes[1].imshow(heat, cmap="inferno", alpha=0.6, vmin=-1, vmax=1)
    axes[1].set_title(title or "similarity")
    for ax in axes:
        ax.axis("off")
    fig.colorbar(hm, ax=axes[1], shrink=0.7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_retrieval_strip(
    exemplar: np.ndarray,
    ranked_images: list[np.ndarray],
    ranked_sims: list[float],
    path: str | Path,
    ranks: tuple[int, ...] = (1, 3, 10, 30, 100),
) -> Path:
    """Exemplar on the left, then the patches at the requested ranks.

    Ranks beyond the pool size render as struck-out empty boxes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 1 + len(ranks)
    fig, axes = plt.subplots(1, n, figsize=(2.1 * n, 2.6))
    axes[0].imshow(exemplar)
    axes[0].set_title("exemplar")
    for ax, rank in zip(axes[1:], ranks):
        if rank <= len(ranked_images):
            ax.imshow(ranked_images[rank - 1])
            ax.set_title(f"#{rank}  {ranked_sims[rank - 1]:.2f}")
        else:
            ax.plot([0, 1], [0, 1], "k-", lw=1)
            ax.plot([0, 1], [1, 0], "k-", lw=1)
            ax.set_xlim(0, 1)
            ax.set_ylim(0, 1)
            ax.set_title(f"#{rank}  n/a")
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_mode_timeline(trace: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    modes = ["FOLLOW", "DETACHED_SEARCH", "CIRCLE_ALERT", "RESUME"]
    ts = [r["t"] for r in trace]
    ys = [modes.index(r["mode"]) for r in trace]
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.step(ts, ys, where="post")
    rolls = [(r["t"], r["command"]) for r in trace
             if r.get("command") and r["command"].get("type") == "roll"]
    if rolls:
        ax.scatter([t for t, _ in rolls], [0] * len(rolls), marker="v", color="crimson",
                   zorder=3, label="roll command")
        ax.legend(loc="upper left")
    ax.set_yticks(range(len(modes)), modes)
    ax.set_xlabel("time [s]")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
