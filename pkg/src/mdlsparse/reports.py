"""Figure rendering for the CLI report path.

Each command can drop PNG figures next to its key=value report. Everything
renders through the Agg backend so the tool works headless.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import Dictionary


def save_learning_curve(history, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(1, len(history) + 1), history, marker="o", lw=1.2)
    ax.set_xlabel("coding pass")
    ax.set_ylabel("avg bits / patch")
    ax.set_title("training codelength")
    ax.grid(True, ls=":", alpha=0.5)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_dictionary_mosaic(dictionary: Dictionary, patch_side: int, path) -> None:
    p = dictionary.atom_count
    cols = int(math.ceil(math.sqrt(p)))
    rows = int(math.ceil(p / cols))
    tile = np.full((rows * (patch_side + 1) + 1, cols * (patch_side + 1) + 1), np.nan)
    for k in range(p):
        atom = dictionary.atoms[:, k].reshape(patch_side, patch_side, order="F")
        lo, hi = atom.min(), atom.max()
        img = (atom - lo) / (hi - lo) if hi > lo else np.full_like(atom, 0.5)
        r, c = divmod(k, cols)
        r0, c0 = 1 + r * (patch_side + 1), 1 + c * (patch_side + 1)
        tile[r0 : r0 + patch_side, c0 : c0 + patch_side] = img
    fig, ax = plt.subplots(figsize=(max(3, cols * 0.35), max(3, rows * 0.35)))
    ax.imshow(tile, cmap="gray", interpolation="nearest")
    ax.set_axis_off()
    ax.set_title(f"{p} atoms")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_image_panel(images, titles, path) -> None:
    fig, axes = plt.subplots(1, len(images), figsize=(3.2 * len(images), 3.4))
    if len(images) == 1:
        axes = [axes]
    for ax, img, title in zip(axes, images, titles):
        ax.imshow(np.asarray(img), cmap="gray", vmin=0, vmax=255, interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_label_map(labels, path, class_count=None) -> None:
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(labels, cmap="tab10", interpolation="nearest", vmin=0, vmax=9)
    ax.set_axis_off()
    ax.set_title("segmentation")
    fig.colorbar(im, ax=ax, shrink=0.75, ticks=range(class_count or int(labels.max()) + 1))
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_support_histogram(sizes, path) -> None:
    sizes = np.asarray(sizes, dtype=int)
    top = max(int(sizes.max()), 1) if sizes.size else 1
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(sizes, bins=np.arange(top + 2) - 0.5, rwidth=0.9)
    ax.set_xlabel("support size")
    ax.set_ylabel("patches")
    ax.set_title("support-size histogram")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
