"""Small SVG plotting helpers.

Every figure written by the CLI goes through these; the numbers always
live in a CSV next to the figure, the SVG is just the picture.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def line_plot(path, x, series: dict, xlabel: str, ylabel: str, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, ys in series.items():
        ax.plot(x, ys, marker="o", markersize=3, linewidth=1.2, label=str(label))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def heatmap(path, matrix, row_labels, col_labels, xlabel: str, ylabel: str, title: str = "") -> None:
    m = np.asarray(matrix, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(m, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(col_labels)), [str(c) for c in col_labels])
    ax.set_yticks(range(len(row_labels)), [str(r) for r in row_labels])
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, f"{m[i, j]:.0f}", ha="center", va="center", fontsize=8, color="w")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def histogram_plot(path, hists: dict, xlabel: str, title: str = "") -> None:
    """hists: label -> (counts, edges); drawn as step outlines."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, (counts, edges) in hists.items():
        ax.stairs(counts, edges, label=str(label), linewidth=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def image_plot(path, values, title: str = "") -> None:
    """One 2-D array as an annotated-free image with a colorbar."""
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(np.asarray(values, dtype=np.float64), cmap="RdBu_r")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
