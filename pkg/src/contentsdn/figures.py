"""Figure rendering for sweep reports.

Rendering is headless (Agg) and file-based: callers pass an output
path next to the CSV they just wrote.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .simeval import AlphaSummary, SweepCell


def render_sweep_figure(
    cells: Sequence[SweepCell], summaries: Sequence[AlphaSummary], out_path
) -> None:
    """Backlog gain of the size-aware policy versus alpha.

    Per-seed gains appear as faint points behind the per-alpha mean and
    max curves, so both the spread and the trend are visible.
    """
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    ax.scatter(
        [c.alpha for c in cells],
        [c.gain_pct for c in cells],
        s=12,
        color="tab:gray",
        alpha=0.35,
        label="single seed",
    )
    alphas = [s.alpha for s in summaries]
    ax.plot(
        alphas,
        [s.mean_gain_pct for s in summaries],
        marker="o",
        color="tab:blue",
        label="mean over seeds",
    )
    ax.plot(
        alphas,
        [s.max_gain_pct for s in summaries],
        marker="^",
        linestyle="--",
        color="tab:orange",
        label="max over seeds",
    )
    ax.axhline(0.0, color="black", linewidth=0.8)
    rho = summaries[0].rho if summaries else float("nan")
    ax.set_xlabel(r"Pareto shape $\alpha$")
    ax.set_ylabel("backlog reduction of size-aware policy (%)")
    ax.set_title(f"Two-link experiment, load {rho:g}")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
