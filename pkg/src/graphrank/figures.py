"""Figure rendering for the report path.

The delimited files written by the evaluate/ablate/repair commands are the
canonical outputs; these helpers render the same data as PNGs next to them
so a run is inspectable without an external plotter.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = ["render_trc_curves", "render_distributions", "render_bars"]


def render_trc_curves(curves: dict, out_path) -> Path:
    """One line per method; x is the budget as a fraction of total failures."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for method, (fractions, values) in curves.items():
        ax.plot(fractions, [100.0 * v for v in values], marker="o", markersize=3,
                linewidth=1.5, label=method)
    ax.set_xlabel("budget / total failures")
    ax.set_ylabel("TRC (%)")
    ax.set_ylim(0, 105)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return Path(out_path)


def render_distributions(dist_rows: dict, out_path) -> Path:
    """Failure vs correct histograms, one panel per metric."""
    metrics = list(dist_rows)
    cols = min(3, len(metrics))
    rows = (len(metrics) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3 * rows), squeeze=False)
    for k, metric in enumerate(metrics):
        ax = axes[k // cols][k % cols]
        data = dist_rows[metric]
        centers = [(lo + hi) / 2.0 for lo, hi, _, _ in data]
        width = (data[0][1] - data[0][0]) * 0.42 if len(data) > 1 else 0.04
        ax.bar([c - width / 2 for c in centers], [r[2] for r in data], width=width,
               label="failure", alpha=0.8)
        ax.bar([c + width / 2 for c in centers], [r[3] for r in data], width=width,
               label="correct", alpha=0.8)
        ax.set_title(metric, fontsize=9)
        ax.set_ylabel("proportion")
        ax.legend(fontsize=7)
    for k in range(len(metrics), rows * cols):
        axes[k // cols][k % cols].axis("off")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return Path(out_path)


def render_bars(labels, values, ylabel: str, out_path, errors=None) -> Path:
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(labels)), 3.6))
    ax.bar(range(len(labels)), values, yerr=errors, capsize=3)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return Path(out_path)
