"""Report figures written next to the text outputs of ``train``, ``infer`` and ``eval``."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def loss_curve(steps, losses, lrs, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(steps, losses, color="C0", lw=1.0)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("SILog loss")
        twin = ax.twinx()
        twin.plot(steps, lrs, color="C1", lw=0.8, ls="--")
        twin.set_ylabel("learning rate", color="C1")
        twin.tick_params(axis="y", colors="C1")
        return _save(fig, path)


def depth_preview(image: np.ndarray, depth: np.ndarray, path, gt: np.ndarray | None = None, vmax: float | None = None) -> Path:
    """Image, predicted depth and (optionally) ground truth side by side."""
    panels = [("image", image), ("prediction", depth)] + ([("ground truth", gt)] if gt is not None else [])
    vmax = vmax if vmax is not None else float(np.nanmax(depth))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(3.0 * len(panels), 3.0))
        for ax, (title, arr) in zip(axes, panels):
            if arr.ndim == 3:
                ax.imshow(np.clip(arr, 0, 1))
            else:
                im = ax.imshow(arr, cmap="magma_r", vmin=0.0, vmax=vmax)
            ax.set_title(title)
            ax.set_axis_off()
        fig.colorbar(im, ax=axes, fraction=0.025, label="depth [m]")
        return _save(fig, path)


def metric_bars(ids, abs_rel, delta1, path) -> Path:
    with plt.rc_context(STYLE):
        fig, (a, b) = plt.subplots(1, 2, figsize=(max(5.0, 0.4 * len(ids) + 3), 3.0))
        x = np.arange(len(ids))
        a.bar(x, abs_rel, color="C0")
        a.set_ylabel("Abs Rel")
        b.bar(x, delta1, color="C2")
        b.set_ylim(0, 1)
        b.set_ylabel(r"$\delta < 1.25$")
        for ax in (a, b):
            ax.set_xticks(x)
            ax.set_xticklabels(ids, rotation=60, ha="right")
        fig.tight_layout()
        return _save(fig, path)
