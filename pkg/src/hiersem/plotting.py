"""Report figures written next to the CSV outputs.

Heat maps run from blue (0 %) to red (100 %).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# PNG metadata would otherwise carry the matplotlib version and break byte-identical reruns
_SAVE = dict(dpi=120, metadata={"Software": None})

# fixed palettes for class renders; index = class id
PALETTE_4 = np.array([[0, 0, 200], [230, 230, 0], [200, 0, 0], [0, 180, 0]], dtype=np.uint8)
PALETTE_14 = np.array(
    [
        [128, 64, 0],
        [255, 128, 0],
        [160, 160, 255],
        [220, 0, 220],
        [0, 0, 200],
        [200, 0, 0],
        [0, 180, 0],
        [255, 255, 0],
        [0, 200, 200],
        [128, 0, 255],
        [64, 64, 64],
        [230, 230, 230],
        [0, 100, 255],
        [128, 128, 0],
    ],
    dtype=np.uint8,
)


def _style():
    plt.rcParams.update(
        {
            "font.size": 9,
            "axes.titlesize": 10,
            "axes.labelsize": 9,
            "xtick.labelsize": 8,
            "ytick.labelsize": 8,
            "savefig.bbox": "tight",
        }
    )


def class_palette(K: int) -> np.ndarray:
    if K <= 4:
        return PALETTE_4[:K]
    if K <= 14:
        return PALETTE_14[:K]
    from .segmap import hash_colors

    return hash_colors(np.arange(K))


def colorize_classes(classes: np.ndarray, K: int) -> np.ndarray:
    pal = class_palette(K)
    out = np.zeros(classes.shape + (3,), dtype=np.uint8)
    m = classes >= 0
    out[m] = pal[classes[m]]
    return out


def _heatmap(ax, values, rows, cols, title):
    im = ax.imshow(values, cmap="jet", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(cols)))
    ax.set_xticklabels(cols, rotation=60, ha="right")
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(rows)
    ax.set_title(title)
    if values.size <= 300:
        for (i, j), v in np.ndenumerate(values):
            if np.isfinite(v):
                ax.text(j, i, f"{100 * v:.0f}", ha="center", va="center", fontsize=7, color="w")
    return im


def plot_confusion(cm: np.ndarray, names, path, title="Confusion (row-normalized)") -> None:
    """Row-normalized confusion heat map, truth on rows."""
    _style()
    cm = np.asarray(cm, dtype=float)
    rows = cm.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = np.where(rows > 0, cm / rows, np.nan)
    size = 1.2 + 0.45 * len(names)
    fig, ax = plt.subplots(figsize=(size + 1.0, size))
    im = _heatmap(ax, norm, list(names), list(names), title)
    ax.set_xlabel("predicted")
    ax.set_ylabel("truth")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_ablation(result, path, title="Accuracy per feature group") -> None:
    """Classes on rows, feature groups on columns (``all`` last)."""
    _style()
    rows = [result.names[c] if result.names else str(c) for c in result.classes]
    fig, ax = plt.subplots(figsize=(1.5 + 0.45 * len(result.groups), 1.5 + 0.4 * max(len(rows), 1)))
    im = _heatmap(ax, result.accuracy, rows, result.groups, title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def plot_panels(images, titles, path) -> None:
    """Side-by-side RGB panels, e.g. input, segments, classes."""
    _style()
    fig, axes = plt.subplots(1, len(images), figsize=(3.2 * len(images), 2.8))
    axes = np.atleast_1d(axes)
    for ax, im, t in zip(axes, images, titles):
        ax.imshow(im, interpolation="nearest")
        ax.set_title(t)
        ax.axis("off")
    fig.savefig(path, **_SAVE)
    plt.close(fig)
