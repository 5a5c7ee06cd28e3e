"""Figure rendering for the report TSVs.

The evaluation module stays plot-free on purpose; the CLI report path calls
into here to drop a PNG next to each delimited output.  All figures use the
Agg backend so they render headlessly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .evaluation import ComparisonRow, ConvergenceRow, SweepPoint, Trajectory  # noqa: E402


def plot_trajectory(
    trajectory: Trajectory,
    coefficient_indices: Sequence[int],
    out_path: str | Path,
    title: str = "streaming estimate vs. full-utterance reference",
) -> None:
    """One panel per chosen coefficient: running estimate and reference line."""
    n = len(coefficient_indices)
    ncols = 2 if n > 1 else 1
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(4.5 * ncols, 2.8 * nrows), squeeze=False, sharex=True
    )
    frames = np.arange(trajectory.num_frames)
    for panel, index in enumerate(coefficient_indices):
        ax = axes[panel // ncols][panel % ncols]
        ax.plot(frames, trajectory.estimates[:, index], lw=1.2, label="estimate")
        ax.axhline(
            trajectory.offline[index], color="k", ls="--", lw=1.0, label="reference"
        )
        ax.set_ylabel(f"coeff {index}")
        ax.grid(alpha=0.3)
    for panel in range(n, nrows * ncols):
        axes[panel // ncols][panel % ncols].set_visible(False)
    axes[0][0].legend(loc="best", fontsize=8)
    for ax in axes[-1]:
        ax.set_xlabel("frame")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_sweep(points: Sequence[SweepPoint], out_path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(
        [p.flip_probability for p in points],
        [p.mean_distance for p in points],
        marker="o",
        lw=1.2,
    )
    ax.set_xlabel("label flip probability")
    ax.set_ylabel("mean distance to clean vector")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_comparison(rows: Sequence[ComparisonRow], out_path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    x = np.arange(len(rows))
    width = 0.38
    ax.bar(x - width / 2, [r.mse_speech for r in rows], width, label="speech")
    ax.bar(x + width / 2, [r.mse_silence for r in rows], width, label="silence")
    ax.set_xticks(x)
    ax.set_xticklabels([r.method for r in rows], rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("MSE to true mean")
    ax.set_yscale("log")
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_convergence_summary(rows: Sequence[ConvergenceRow], out_path: str | Path) -> None:
    """Distance distribution at a tenth, half, and all frames across the corpus."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    data = [
        [r.distance_early for r in rows],
        [r.distance_mid for r in rows],
        [r.distance_final for r in rows],
    ]
    ax.boxplot(data)
    ax.set_xticks([1, 2, 3])
    ax.set_xticklabels(["T/10", "T/2", "T"])
    ax.set_xlabel("frames observed")
    ax.set_ylabel("distance to full-utterance vector")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
