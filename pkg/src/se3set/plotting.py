"""Report figures: fragment statistics histograms and training curves.

Figures are built on a bare :class:`matplotlib.figure.Figure` with the Agg
canvas, so nothing touches pyplot's global state and worker threads may call
these functions.  PNG metadata is stripped so identical data gives identical
bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

PNG_METADATA = {"Software": None}


def _save(fig: Figure, path: Path) -> Path:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=100, metadata=PNG_METADATA)
    return path


def _bar_hist(ax, hist: Mapping[int, int], xlabel: str, ylabel: str) -> None:
    keys = sorted(int(k) for k in hist)
    counts = [hist[k] if k in hist else hist[str(k)] for k in keys]
    ax.bar(keys, counts, width=0.8, color="0.35", edgecolor="black", linewidth=0.5)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if keys:
        ax.set_xticks(keys if len(keys) <= 20 else keys[:: max(1, len(keys) // 10)])
    ax.spines[["top", "right"]].set_visible(False)


def plot_fragment_stats(stats: Mapping, out_dir: str | Path) -> list[Path]:
    """Two histograms: fragments per molecule and atoms per fragment."""
    out_dir = Path(out_dir)
    paths = []
    fig = Figure(figsize=(5, 3.5))
    _bar_hist(fig.add_subplot(), stats["fragment_count_histogram"], "fragments per molecule", "molecules")
    fig.tight_layout()
    paths.append(_save(fig, out_dir / "fragment_counts.png"))
    fig = Figure(figsize=(5, 3.5))
    _bar_hist(fig.add_subplot(), stats["fragment_size_histogram"], "atoms per fragment", "fragments")
    fig.tight_layout()
    paths.append(_save(fig, out_dir / "fragment_sizes.png"))
    return paths


def plot_training(step_losses: Sequence[float], epochs: Sequence[Mapping], out_path: str | Path, energy_unit: str = "") -> Path:
    """Per-step objective (left) and per-evaluation energy MAE (right, log scale)."""
    fig = Figure(figsize=(9, 3.5))
    ax = fig.add_subplot(1, 2, 1)
    steps = np.arange(1, len(step_losses) + 1)
    ax.plot(steps, step_losses, color="0.6", linewidth=0.8, label="batch")
    if len(step_losses) >= 5:
        k = max(2, len(step_losses) // 20)
        smooth = np.convolve(step_losses, np.ones(k) / k, mode="valid")
        ax.plot(steps[k - 1 :], smooth, color="black", linewidth=1.2, label=f"{k}-step mean")
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("objective (standardised)")
    ax.legend(frameon=False)
    ax.spines[["top", "right"]].set_visible(False)
    ax = fig.add_subplot(1, 2, 2)
    if epochs:
        x = [row["step"] for row in epochs]
        ax.plot(x, [row["train"]["energy_mae"] for row in epochs], "o-", color="black", label="train")
        if all("val" in row for row in epochs):
            ax.plot(x, [row["val"]["energy_mae"] for row in epochs], "s--", color="0.5", label="validation")
        ax.set_yscale("log")
        ax.legend(frameon=False)
    ax.set_xlabel("optimizer step")
    ax.set_ylabel(f"energy MAE ({energy_unit})" if energy_unit else "energy MAE")
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    return _save(fig, Path(out_path))
