"""Figure and CSV rendering for CLI report paths.

matplotlib output goes through one savefig wrapper that strips the
Software metadata chunk, so repeated runs write identical PNG bytes.
"""
from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport

_SAVE_KW = dict(dpi=100, metadata={"Software": None})


def write_report_csv(report: MetricsReport, path: str) -> None:
    """Per-image metric rows as CSV, corpus order."""
    fields = ["path", "class", "score_original", "score_masked",
              "confidence_drop_pct", "increased", "fp_masked", "fp_total", "wall_ms"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for m in report.per_image:
            writer.writerow(m.as_dict())


def render_report_figure(report: MetricsReport, path: str) -> None:
    """Distribution of per-image confidence drops with aggregate callouts."""
    agg = report.aggregate()
    drops = [m.confidence_drop_pct for m in report.per_image]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    if drops:
        ax1.hist(drops, bins=min(20, max(5, len(drops))), color="#4878b0", edgecolor="black")
        ax1.axvline(agg["avg_confidence_drop_pct"], color="red", linestyle="--",
                    label=f"mean {agg['avg_confidence_drop_pct']:.2f}%")
        ax1.legend()
    ax1.set_xlabel("confidence drop (%)")
    ax1.set_ylabel("images")
    ax1.set_title(f"{report.method}: confidence drop")
    bars = [agg["avg_confidence_drop_pct"], agg["increase_number_pct"]]
    ax2.bar(["avg drop %", "increase %"], bars, color=["#4878b0", "#6aa84f"])
    for i, v in enumerate(bars):
        ax2.text(i, v, f"{v:.2f}", ha="center", va="bottom")
    ax2.set_title(f"n={agg['n_images']}  avg FP={agg['avg_fp']:.1f}")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_cluster_panel(original_rgb: np.ndarray,
                         masks: list[np.ndarray],
                         masked_images: list[np.ndarray],
                         scores: list[float],
                         base_index: int,
                         scissors_index: int,
                         path: str) -> None:
    """Two-row panel: representative-map masks on top, masked inputs with
    their scores below. Base and scissors columns get green/red frames."""
    q = len(masks)
    fig, axes = plt.subplots(2, q + 1, figsize=(2.2 * (q + 1), 4.8))
    if q + 1 == 1:
        axes = axes.reshape(2, 1)
    axes[0, 0].imshow(original_rgb)
    axes[0, 0].set_title("input", fontsize=9)
    axes[1, 0].axis("off")
    for qi in range(q):
        axes[0, qi + 1].imshow(masks[qi], cmap="viridis", vmin=0.0, vmax=1.0)
        axes[0, qi + 1].set_title(f"cluster {qi}", fontsize=9)
        axes[1, qi + 1].imshow(masked_images[qi])
        axes[1, qi + 1].set_title(f"score {scores[qi]:.4f}", fontsize=9)
        color = "green" if qi == base_index else "red" if qi == scissors_index else None
        if color:
            for ax in (axes[0, qi + 1], axes[1, qi + 1]):
                for spine in ax.spines.values():
                    spine.set_edgecolor(color)
                    spine.set_linewidth(3)
    for ax in axes.flat:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_sweep_grid(entries: list[tuple[str, np.ndarray]], title: str, path: str) -> None:
    """One overlay per swept value, labeled, in a single row grid."""
    n = len(entries)
    fig, axes = plt.subplots(1, n, figsize=(2.4 * n, 2.8))
    if n == 1:
        axes = [axes]
    for ax, (label, rgb) in zip(axes, entries):
        ax.imshow(rgb)
        ax.set_title(label, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
