"""Figure and table rendering for run reports.

Figures are written as SVG with a pinned hash salt and no embedded
date, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "gfnrom"

import numpy as np
from matplotlib import pyplot as plt

__all__ = [
    "save_figure",
    "loss_curve_figure",
    "error_map_figure",
    "format_table",
]


def save_figure(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def loss_curve_figure(histories: dict):
    """Training curves, one per run; histories map tag -> (E, 4) array."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for tag in sorted(histories):
        h = histories[tag]
        ax.semilogy(h[:, 0], h[:, 1], label=tag)
    ax.set_xlabel("epoch")
    ax.set_ylabel("weighted training loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def error_map_figure(test_mu, test_err, train_mu, title: str = ""):
    """Test error over parameter space; squares mark training parameters."""
    test_mu = np.atleast_2d(np.asarray(test_mu, dtype=np.float64))
    train_mu = np.atleast_2d(np.asarray(train_mu, dtype=np.float64))
    test_err = np.asarray(test_err, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.4, 4.2))
    if test_mu.shape[1] == 1:
        ax.plot(test_mu[:, 0], test_err, "o", ms=4)
        for x in train_mu[:, 0]:
            ax.axvline(x, color="k", lw=0.5, alpha=0.4)
        ax.set_xlabel("parameter")
        ax.set_ylabel("relative error (%)")
    else:
        sc = ax.scatter(test_mu[:, 0], test_mu[:, 1], c=test_err, s=36)
        ax.scatter(
            train_mu[:, 0],
            train_mu[:, 1],
            marker="s",
            s=70,
            facecolors="none",
            edgecolors="black",
            linewidths=1.0,
            label="training",
        )
        fig.colorbar(sc, ax=ax, label="relative error (%)")
        ax.set_xlabel("parameter 1")
        ax.set_ylabel("parameter 2")
        ax.legend(loc="upper right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig


def format_table(headers, rows) -> str:
    """Fixed-width text table; cells are stringified as given."""
    cells = [[str(c) for c in row] for row in rows]
    widths = [
        max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
        for i, h in enumerate(headers)
    ]
    def fmt(row):
        return "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in cells)
    return "\n".join(lines)
