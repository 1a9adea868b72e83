"""Figure emission: modification heatmaps, mean ROC curves, realism scatter.

Every plot is written as PNG and SVG, and the numeric data behind it as CSV,
so figures can be regenerated without rerunning experiments.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EMBED_COLORS = {"query": "tab:red", "target": "tab:green", "counterfactual": "tab:blue"}

ROC_GRID_POINTS = 101


def _save_figure(fig, out_base: Path) -> list[Path]:
    paths = []
    for suffix in (".png", ".svg"):
        path = out_base.with_suffix(suffix)
        fig.savefig(path, bbox_inches="tight", dpi=150)
        paths.append(path)
    plt.close(fig)
    return paths


def plot_heatmap(
    query: np.ndarray,
    residual: np.ndarray,
    out_base: str | Path,
    saliency: np.ndarray | None = None,
) -> dict:
    """Per-sample T x F grids: query, optional saliency, |modifications|.

    Features run along the x-axis and time along the y-axis. Zero residuals
    render white; darker cells mark larger |residual|.
    """
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    magnitude = np.abs(np.asarray(residual, dtype=np.float64))

    panels = [("query", np.asarray(query, dtype=np.float64), "viridis", None)]
    if saliency is not None:
        panels.append(("salient", np.asarray(saliency, dtype=np.float64), "Greys", (0.0, 1.0)))
    vmax = magnitude.max() if magnitude.max() > 0 else 1.0
    panels.append(("modifications", magnitude, "Greys", (0.0, vmax)))

    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 4))
    for ax, (title, grid, cmap, limits) in zip(np.atleast_1d(axes), panels):
        kwargs = {} if limits is None else {"vmin": limits[0], "vmax": limits[1]}
        image = ax.imshow(grid, aspect="auto", cmap=cmap, interpolation="nearest", **kwargs)
        ax.set_title(title)
        ax.set_xlabel("feature")
        ax.set_ylabel("time step")
        fig.colorbar(image, ax=ax, shrink=0.8)
    paths = _save_figure(fig, out_base)

    csv_path = out_base.with_suffix(".csv")
    np.savetxt(csv_path, magnitude, delimiter=",")
    return {"images": paths, "csv": csv_path, "magnitude": magnitude}


def mean_roc_curve(curves: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Interpolate repetition ROC curves onto a common grid; returns (fpr, mean, std)."""
    if not curves:
        raise ValueError("no ROC curves given")
    grid = np.linspace(0.0, 1.0, ROC_GRID_POINTS)
    interpolated = []
    for fpr, tpr in curves:
        fpr = np.asarray(fpr, dtype=np.float64)
        tpr = np.asarray(tpr, dtype=np.float64)
        if fpr[0] > 0.0:  # anchor at the origin unless the curve starts there
            fpr = np.concatenate([[0.0], fpr])
            tpr = np.concatenate([[0.0], tpr])
        interpolated.append(np.interp(grid, fpr, tpr))
    stacked = np.vstack(interpolated)
    return grid, stacked.mean(axis=0), stacked.std(axis=0)


def plot_roc(curves_by_label: dict, out_base: str | Path) -> dict:
    """Mean ROC per label with one-standard-deviation shading across repetitions."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 5))
    csv_rows = []
    for label, curves in curves_by_label.items():
        grid, mean, std = mean_roc_curve(curves)
        ax.plot(grid, mean, label=label)
        ax.fill_between(grid, np.clip(mean - std, 0, 1), np.clip(mean + std, 0, 1), alpha=0.25)
        for x, m, s in zip(grid, mean, std):
            csv_rows.append([label, x, m, s])
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right")
    paths = _save_figure(fig, out_base)

    csv_path = out_base.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "fpr", "tpr_mean", "tpr_std"])
        writer.writerows(csv_rows)
    return {"images": paths, "csv": csv_path}


def plot_embedding(
    points: np.ndarray, groups: list, out_base: str | Path
) -> dict:
    """Scatter of embedded queries, targets and counterfactuals in three colors."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    points = np.asarray(points, dtype=np.float64)
    groups = list(groups)
    if points.shape[0] != len(groups):
        raise ValueError("points and groups must have equal length")
    unknown = sorted(set(groups) - set(EMBED_COLORS))
    if unknown:
        raise ValueError(f"unknown embedding groups: {unknown}")

    fig, ax = plt.subplots(figsize=(5, 5))
    group_arr = np.asarray(groups)
    for name, color in EMBED_COLORS.items():
        sel = group_arr == name
        if sel.any():
            ax.scatter(points[sel, 0], points[sel, 1], s=12, alpha=0.7,
                       color=color, label=name)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    legend = ax.legend(loc="best")
    legend_labels = [t.get_text() for t in legend.get_texts()]
    paths = _save_figure(fig, out_base)

    csv_path = out_base.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "group"])
        for (x, y), group in zip(points, groups):
            writer.writerow([x, y, group])
    return {"images": paths, "csv": csv_path, "legend_labels": legend_labels}
