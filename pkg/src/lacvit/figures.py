"""Matplotlib renderings written next to the delimited reports.

Headless (Agg) by construction; each helper takes already-computed report
data and a target path, so rendering never feeds back into the numbers.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import HIST_BINS, CosineReport, IsotropyReport


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def cosine_figure(report: CosineReport, path, title: str = "") -> Path:
    """Overlaid positive/negative cosine histograms (density-normalized)."""
    edges = np.linspace(-1.0, 1.0, HIST_BINS + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    fig, ax = plt.subplots(figsize=(6, 4))
    for hist, count, label, color in (
        (report.positive_hist, report.positive_count, "positive (same class)", "tab:blue"),
        (report.negative_hist, report.negative_count, "negative (cross class)", "tab:orange"),
    ):
        density = hist / max(1, count) / width
        ax.bar(centers, density, width=width, alpha=0.55, label=label, color=color)
    ax.axvline(report.positive_mean, color="tab:blue", linestyle="--", linewidth=1)
    ax.axvline(report.negative_mean, color="tab:orange", linestyle="--", linewidth=1)
    ax.set_xlabel("cosine similarity")
    ax.set_ylabel("density")
    ax.set_xlim(-1, 1)
    if title:
        ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def projection_figure(coords: np.ndarray, labels: np.ndarray, path, title: str = "") -> Path:
    """2-D scatter of projected embeddings colored by class."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for cls in np.unique(labels):
        pts = coords[labels == cls]
        ax.scatter(pts[:, 0], pts[:, 1], s=12, alpha=0.75, label=f"class {cls}")
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    return _save(fig, path)


def isotropy_figure(report: IsotropyReport, path, title: str = "") -> Path:
    """Sorted F(c) values over the candidate directions, log scale."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.sort(report.f_values)[::-1], marker="o", markersize=3, linewidth=1)
    ax.set_yscale("log")
    ax.set_xlabel("candidate direction (sorted)")
    ax.set_ylabel("F(c)")
    note = f"score = min/max = {report.score:.4f}"
    ax.set_title(f"{title}  {note}".strip())
    return _save(fig, path)


def loss_curve_figure(metrics_rows: list[dict], path, title: str = "") -> Path:
    """Per-epoch loss (and accuracy when present) from a metrics CSV."""
    fig, ax = plt.subplots(figsize=(6, 4))
    splits = sorted({row["split"] for row in metrics_rows})
    for split in splits:
        pts = [(int(r["epoch"]), float(r["loss"])) for r in metrics_rows if r["split"] == split]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"{split} loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    acc_rows = [r for r in metrics_rows if r.get("accuracy")]
    if acc_rows:
        ax2 = ax.twinx()
        for split in splits:
            pts = [
                (int(r["epoch"]), float(r["accuracy"]))
                for r in metrics_rows
                if r["split"] == split and r.get("accuracy")
            ]
            if pts:
                pts.sort()
                ax2.plot(
                    [p[0] for p in pts],
                    [p[1] for p in pts],
                    linestyle="--",
                    label=f"{split} accuracy",
                )
        ax2.set_ylabel("accuracy")
        ax2.set_ylim(0, 1.05)
    ax.legend(loc="upper right", fontsize="small")
    return _save(fig, path)
