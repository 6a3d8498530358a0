"""Figure rendering for run comparisons.

Uses the Agg backend so reports render in headless environments; figures
land next to the CSV the table command writes.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .server import EvalPoint  # noqa: E402


def render_ppl_curves(
    histories: Sequence[tuple[str, Sequence[EvalPoint]]], path
) -> None:
    """Held-out perplexity against round, one line per run."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, history in histories:
        ax.plot(
            [p.round for p in history],
            [p.heldout_ppl for p in history],
            marker="o",
            markersize=3,
            linewidth=1.2,
            label=label,
        )
    ax.set_xlabel("round")
    ax.set_ylabel("held-out perplexity")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_final_ppl_bars(rows: Sequence[tuple[str, float]], path) -> None:
    """Final perplexity per run as a bar chart."""
    labels = [r[0] for r in rows]
    values = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.bar(range(len(rows)), values, color="tab:blue", width=0.6)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("final held-out perplexity")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
