"""Figures written alongside training histories and evaluation reports."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_history(history: Sequence[dict], path, title: Optional[str] = None) -> Path:
    """Train/validation MSE per epoch on a log axis, with the quantisation switch marked."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.semilogy(epochs, [h["train_mse"] for h in history], "o-", ms=3, label="train")
    if any("val_mse" in h for h in history):
        ax.semilogy(epochs, [h.get("val_mse", np.nan) for h in history], "s--", ms=3, label="validation")
    switch = next((h["epoch"] for h in history if h["mode"] != "float"), None)
    if switch is not None:
        ax.axvline(switch - 0.5, color="grey", lw=0.8, ls=":")
        ax.text(switch - 0.4, ax.get_ylim()[1], "ternary", va="top", fontsize=8, color="grey")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_title(title or "training history")
    ax.legend(frameon=False)
    return _finish(fig, path)


def plot_psnr(report, path) -> Path:
    """Per-image PSNR bars with the mean as a horizontal line."""
    names = [e["image"] for e in report.entries]
    values = [e["psnr"] if math.isfinite(e["psnr"]) else np.nan for e in report.entries]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names) + 2), 3.6))
    ax.bar(range(len(names)), values, color="0.55")
    if math.isfinite(report.mean_psnr):
        ax.axhline(report.mean_psnr, color="k", lw=1, label=f"mean {report.mean_psnr:.2f} dB")
        ax.legend(frameon=False, loc="lower right")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(f"MR = {report.mr:g}")
    return _finish(fig, path)


def plot_comparisons(pairs: Sequence[tuple], path, max_images: int = 11) -> Path:
    """Original (top) against reconstruction (bottom), one column per ``(name, original, reconstruction, psnr)``."""
    pairs = list(pairs)[:max_images]
    n = max(len(pairs), 1)
    fig, axes = plt.subplots(2, n, figsize=(2.2 * n, 4.6), squeeze=False)
    for col, (name, original, rec, value) in enumerate(pairs):
        axes[0, col].imshow(original, cmap="gray", vmin=0, vmax=255)
        axes[0, col].set_title(name, fontsize=7)
        axes[1, col].imshow(rec, cmap="gray", vmin=0, vmax=255)
        axes[1, col].set_title(f"{value:.2f} dB", fontsize=7)
    for ax in axes.ravel():
        ax.axis("off")
    return _finish(fig, path)
