"""Run manifests and cross-run aggregation into mean/std result tables."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DATA_FILE, LABELS_FILE, META_FILE, SALIENCY_FILE
from .metrics import METRICS_FILE, MetricsReport

MANIFEST_FILE = "manifest.json"

SCALAR_METRICS = ("precision", "similarity", "sparsity", "smoothness")

# Lower is better for the four scalar metrics, higher for the saliency AUC.
HIGHER_IS_BETTER = {"saliency_auc"}


def dataset_hash(path: str | Path) -> str:
    """Content hash of a saved dataset directory (payloads plus metadata)."""
    path = Path(path)
    digest = hashlib.sha256()
    for name in (META_FILE, DATA_FILE, LABELS_FILE, SALIENCY_FILE):
        file_path = path / name
        if file_path.is_file():
            digest.update(name.encode())
            digest.update(file_path.read_bytes())
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Provenance record written into every run directory, even on failure."""

    run_id: str
    timestamp: str
    config: dict
    dataset_path: str
    dataset_hash: str
    seeds: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    status: str = "running"
    error: str | None = None

    @classmethod
    def create(cls, run_id: str, config: dict, dataset_path: str | Path,
               dataset_digest: str, seeds: list) -> "RunManifest":
        return cls(
            run_id=run_id,
            timestamp=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            config=config,
            dataset_path=str(dataset_path),
            dataset_hash=dataset_digest,
            seeds=list(seeds),
        )

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "timestamp": self.timestamp,
            "config": self.config,
            "dataset_path": self.dataset_path,
            "dataset_hash": self.dataset_hash,
            "seeds": self.seeds,
            "artifacts": self.artifacts,
            "status": self.status,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunManifest":
        return cls(**obj)

    def save(self, run_dir: str | Path) -> None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / MANIFEST_FILE).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunManifest":
        return cls.from_json(json.loads((Path(run_dir) / MANIFEST_FILE).read_text()))


def load_run(run_dir: str | Path) -> tuple[RunManifest, MetricsReport]:
    run_dir = Path(run_dir)
    manifest = RunManifest.load(run_dir)
    report = MetricsReport.load(run_dir / METRICS_FILE)
    return manifest, report


def aggregate_runs(run_dirs: list) -> dict:
    """Mean and std per metric per approach over completed runs.

    All runs must share the dataset (by content hash) and the target class;
    inconsistencies are reported in the raised error.
    """
    if not run_dirs:
        raise ValueError("no run directories given")
    loaded = [load_run(d) for d in run_dirs]

    mismatches = []
    ref_manifest, ref_report = loaded[0]
    for run_dir, (manifest, report) in zip(run_dirs, loaded):
        if manifest.dataset_hash != ref_manifest.dataset_hash:
            mismatches.append(f"{run_dir}: dataset hash {manifest.dataset_hash[:12]}... "
                              f"!= {ref_manifest.dataset_hash[:12]}...")
        if report.target_class != ref_report.target_class:
            mismatches.append(f"{run_dir}: target_class {report.target_class} "
                              f"!= {ref_report.target_class}")
    if mismatches:
        raise ValueError("inconsistent runs:\n" + "\n".join(mismatches))

    by_approach: dict[str, list[MetricsReport]] = {}
    for _, report in loaded:
        by_approach.setdefault(report.approach, []).append(report)

    table: dict[str, dict[str, tuple[float, float]]] = {}
    for approach, reports in by_approach.items():
        row = {}
        for metric in SCALAR_METRICS:
            values = np.array([getattr(r, metric) for r in reports], dtype=np.float64)
            row[metric] = (float(values.mean()), float(values.std()))
        aucs = [r.saliency_auc for r in reports if r.saliency_auc is not None]
        if aucs:
            values = np.array(aucs, dtype=np.float64)
            row["saliency_auc"] = (float(values.mean()), float(values.std()))
        table[approach] = row
    return table


def _best_approach(table: dict, metric: str) -> str | None:
    entries = {a: row[metric][0] for a, row in table.items() if metric in row}
    if not entries:
        return None
    chooser = max if metric in HIGHER_IS_BETTER else min
    return chooser(entries, key=entries.get)


def render_table(table: dict) -> str:
    """Aligned text table: one metric per row, one approach per column.

    The best value per metric is flagged with an asterisk.
    """
    approaches = list(table)
    metrics = [m for m in (*SCALAR_METRICS, "saliency_auc")
               if any(m in row for row in table.values())]
    width = max(12, *(len(a) + 1 for a in approaches))
    header = f"{'measure':<12}" + "".join(f"{a:>{width + 4}}" for a in approaches)
    lines = [header, "-" * len(header)]
    for metric in metrics:
        best = _best_approach(table, metric)
        cells = []
        for approach in approaches:
            if metric in table[approach]:
                mean, std = table[approach][metric]
                flag = "*" if approach == best else " "
                cells.append(f"{mean:.2f} +- {std:.2f}{flag}".rjust(width + 4))
            else:
                cells.append("-".rjust(width + 4))
        lines.append(f"{metric:<12}" + "".join(cells))
    return "\n".join(lines)


def write_table_csv(table: dict, path: str | Path) -> None:
    """Aggregate table as CSV rows: approach, metric, mean, std, best flag."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["approach", "metric", "mean", "std", "best"])
        metrics = [m for m in (*SCALAR_METRICS, "saliency_auc")
                   if any(m in row for row in table.values())]
        for metric in metrics:
            best = _best_approach(table, metric)
            for approach, row in table.items():
                if metric not in row:
                    continue
                mean, std = row[metric]
                writer.writerow([approach, metric, f"{mean:.6f}", f"{std:.6f}",
                                 int(approach == best)])
