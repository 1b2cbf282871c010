"""Figures for sweep reports, written next to the CSV they summarize."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import SweepGrid  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def plot_sweep(grid: SweepGrid, path: str | Path) -> Path:
    """Accuracy against relation width, one line per iteration count, plus a heatmap."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, (ax_line, ax_map) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        for n in grid.ns:
            ys = [grid.accuracy(k, n) for k in grid.ks]
            ax_line.plot(grid.ks, [float("nan") if y is None else y for y in ys], marker="o", label=f"N={n}")
        ax_line.set_xlabel("relation width K")
        ax_line.set_ylabel("Hits@1")
        ax_line.set_xticks(grid.ks)
        ax_line.set_ylim(-0.05, 1.05)
        ax_line.legend(frameon=False)

        matrix = [[grid.accuracy(k, n) or 0.0 for k in grid.ks] for n in grid.ns]
        im = ax_map.imshow(matrix, vmin=0.0, vmax=1.0, cmap="viridis", origin="lower", aspect="auto")
        ax_map.set_xticks(range(len(grid.ks)), [str(k) for k in grid.ks])
        ax_map.set_yticks(range(len(grid.ns)), [str(n) for n in grid.ns])
        ax_map.set_xlabel("relation width K")
        ax_map.set_ylabel("iterations N")
        for i, row in enumerate(matrix):
            for j, v in enumerate(row):
                ax_map.text(j, i, f"{v:.2f}", ha="center", va="center", color="w" if v < 0.6 else "k", fontsize=8)
        fig.colorbar(im, ax=ax_map, fraction=0.05)
        fig.tight_layout()
        path.parent.mkdir(parents=True, exist_ok=True)
        # fixed metadata keeps repeated renders byte-stable for the same grid
        metadata = {"Software": None} if path.suffix == ".png" else None
        fig.savefig(path, metadata=metadata)
        plt.close(fig)
    return path
