"""Evaluation measures for generated counterfactuals.

Four scalar metrics (precision, similarity, sparsity, smoothness; lower is
better for all of them), a pooled ROC/AUC of |residual| against ground-truth
saliency masks, and a 2-D stochastic neighbor embedding used for realism
plots.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.manifold import TSNE

METRICS_FILE = "metrics.json"

DEFAULT_ZERO_TOL = 1e-8
DEFAULT_PERPLEXITY = 4.4
DEFAULT_EMBED_ITERATIONS = 300


@dataclass
class MetricsReport:
    """Scalar evaluation results for one run, serialized as metrics.json."""

    precision: float
    similarity: float
    sparsity: float
    smoothness: float
    saliency_auc: float | None
    n_samples: int
    T: int
    F: int
    F_mutable: int
    approach: str
    target_class: int
    seed: int

    def __post_init__(self):
        if self.precision < 0 or self.similarity < 0 or self.smoothness < 0:
            raise ValueError("precision, similarity and smoothness must be >= 0")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity must lie in [0, 1], got {self.sparsity}")
        if self.saliency_auc is not None and not 0.0 <= self.saliency_auc <= 1.0:
            raise ValueError(f"saliency_auc must lie in [0, 1], got {self.saliency_auc}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        auc = obj.get("saliency_auc")
        return cls(
            precision=float(obj["precision"]),
            similarity=float(obj["similarity"]),
            sparsity=float(obj["sparsity"]),
            smoothness=float(obj["smoothness"]),
            saliency_auc=None if auc is None else float(auc),
            n_samples=int(obj["n_samples"]),
            T=int(obj["T"]),
            F=int(obj["F"]),
            F_mutable=int(obj["F_mutable"]),
            approach=str(obj["approach"]),
            target_class=int(obj["target_class"]),
            seed=int(obj["seed"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        return cls.from_json(json.loads(Path(path).read_text()))


def precision_metric(classifier_probs: np.ndarray, target_class: int) -> float:
    """Mean L2 distance between predicted probabilities and the target one-hot."""
    probs = np.asarray(classifier_probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"classifier_probs must be N x C, got shape {probs.shape}")
    if not 0 <= target_class < probs.shape[1]:
        raise ValueError(f"target_class {target_class} outside [0, {probs.shape[1]})")
    onehot = np.zeros(probs.shape[1])
    onehot[target_class] = 1.0
    return float(np.linalg.norm(probs - onehot, axis=1).mean())


def similarity_metric(queries: np.ndarray, counterfactuals: np.ndarray) -> float:
    """Mean absolute modification, normalized by the number of cells."""
    q = np.asarray(queries, dtype=np.float64)
    cf = np.asarray(counterfactuals, dtype=np.float64)
    if q.shape != cf.shape:
        raise ValueError(f"shape mismatch: {q.shape} vs {cf.shape}")
    per_sample = np.abs(q - cf).reshape(q.shape[0], -1).sum(axis=1)
    return float(per_sample.mean() / (q.shape[1] * q.shape[2]))


def sparsity_metric(
    queries: np.ndarray,
    counterfactuals: np.ndarray,
    mutable_mask: np.ndarray,
    zero_tol: float = DEFAULT_ZERO_TOL,
) -> float:
    """Fraction of mutable cells modified beyond zero_tol, averaged over samples."""
    if zero_tol < 0:
        raise ValueError(f"zero_tol must be >= 0, got {zero_tol}")
    q = np.asarray(queries, dtype=np.float64)
    cf = np.asarray(counterfactuals, dtype=np.float64)
    if q.shape != cf.shape:
        raise ValueError(f"shape mismatch: {q.shape} vs {cf.shape}")
    mask = np.asarray(mutable_mask, dtype=bool)
    diff = np.abs(q[..., mask] - cf[..., mask])
    modified = (diff > zero_tol).reshape(q.shape[0], -1).mean(axis=1)
    return float(modified.mean())


def smoothness_metric(residuals: np.ndarray) -> float:
    """Summed per-step L2 of residual differences, normalized by cell count."""
    r = np.asarray(residuals, dtype=np.float64)
    if r.ndim != 3:
        raise ValueError(f"residuals must be N x T x F, got shape {r.shape}")
    n, t, f = r.shape
    if t < 2:
        raise ValueError("smoothness requires at least 2 time steps")
    step_norms = np.linalg.norm(r[:, 1:] - r[:, :-1], axis=2)
    return float(step_norms.sum(axis=1).mean() / (t * f))


def saliency_roc(
    residuals: np.ndarray, saliency_masks: np.ndarray
) -> tuple[np.ndarray, float]:
    """ROC of |residual| as a salient-cell score, pooled over all cells.

    Returns (points, auc) where points has one (threshold, fpr, tpr) row per
    distinct score, thresholds descending, and auc is the trapezoidal area.
    """
    scores = np.abs(np.asarray(residuals, dtype=np.float64)).ravel()
    masks = np.asarray(saliency_masks, dtype=bool).ravel()
    if scores.shape != masks.shape:
        raise ValueError(
            f"residuals and saliency masks disagree: {scores.size} vs {masks.size} cells"
        )
    n_pos = int(masks.sum())
    n_neg = masks.size - n_pos
    if n_pos == 0:
        raise ValueError("all-false saliency masks: true-positive rate undefined")
    if n_neg == 0:
        raise ValueError("all-true saliency masks: false-positive rate undefined")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = masks[order]

    # Collapse tied scores: keep cumulative counts at the end of each tie group.
    group_end = np.empty(sorted_scores.size, dtype=bool)
    group_end[:-1] = sorted_scores[1:] != sorted_scores[:-1]
    group_end[-1] = True
    tp = np.cumsum(sorted_pos)[group_end]
    fp = np.cumsum(~sorted_pos)[group_end]
    thresholds = sorted_scores[group_end]
    tpr = tp / n_pos
    fpr = fp / n_neg
    auc = float(np.trapezoid(np.concatenate([[0.0], tpr]), np.concatenate([[0.0], fpr])))
    points = np.column_stack([thresholds, fpr, tpr])
    return points, auc


def write_roc_csv(points: np.ndarray, path: str | Path) -> None:
    """ROC points as CSV with columns threshold, fpr, tpr."""
    header = "threshold,fpr,tpr"
    np.savetxt(path, points, delimiter=",", header=header, comments="")


def embed_2d(
    samples: np.ndarray,
    perplexity: float = DEFAULT_PERPLEXITY,
    iterations: int = DEFAULT_EMBED_ITERATIONS,
    seed: int = 0,
) -> np.ndarray:
    """2-D stochastic neighbor embedding of flattened samples.

    Deterministic for a fixed seed; used for the realism scatter of queries,
    targets and counterfactuals.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.reshape(arr.shape[0], -1)
    if arr.ndim != 2:
        raise ValueError(f"samples must be M x D or M x T x F, got shape {arr.shape}")
    m = arr.shape[0]
    if m < 5:
        raise ValueError(f"embedding requires at least 5 samples, got {m}")
    if np.all(arr == arr[0]):
        raise ValueError("degenerate input: all points are identical")
    if perplexity >= m:
        raise ValueError(f"perplexity {perplexity} must be < number of samples {m}")
    tsne = TSNE(
        n_components=2,
        perplexity=perplexity,
        max_iter=iterations,
        random_state=seed,
        init="pca",
    )
    points = tsne.fit_transform(arr).astype(np.float64)
    if not np.all(np.isfinite(points)):
        raise ValueError("embedding produced non-finite coordinates")
    return points
