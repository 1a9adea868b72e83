"""Multivariate time series dataset container and its on-disk format.

A dataset is a directory holding a self-describing ``meta.json`` next to raw
little-endian binary payloads:

* ``data.f32``      row-major N x T x F float32
* ``labels.i32``    N int32 class labels
* ``saliency.u8``   optional row-major N x T x F bytes (0/1)

The JSON metadata carries the shape, the mutable-feature mask and the
normalization record, so the payload can be read back bit-exactly from any
language.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DTYPE_TAG = "f32le"

META_FILE = "meta.json"
DATA_FILE = "data.f32"
LABELS_FILE = "labels.i32"
SALIENCY_FILE = "saliency.u8"
FEATURE_NAMES_FILE = "feature_names.json"

NORMALIZATION_KINDS = ("none", "minmax", "zscore")


class DatasetFormatError(ValueError):
    """Raised when an on-disk dataset is inconsistent with its metadata."""


@dataclass(frozen=True)
class Normalization:
    """Per-feature normalization record fitted on a training split.

    ``params`` maps parameter names to length-F lists: ``mean``/``std`` for
    zscore, ``min``/``max`` for minmax, empty for ``none``.
    """

    kind: str = "none"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in NORMALIZATION_KINDS:
            raise ValueError(f"unknown normalization kind {self.kind!r}")
        for name, values in self.params.items():
            arr = np.asarray(values, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"normalization parameter {name!r} has non-finite entries")

    def to_json(self) -> dict:
        return {"kind": self.kind, **{k: list(map(float, v)) for k, v in self.params.items()}}

    @classmethod
    def from_json(cls, obj: dict) -> "Normalization":
        obj = dict(obj)
        kind = obj.pop("kind", "none")
        return cls(kind=kind, params=obj)


@dataclass
class TimeSeriesDataset:
    """N x T x F real-valued sequences with integer class labels.

    ``mutable_mask`` marks the features a counterfactual may alter.
    ``saliency`` optionally marks the cells that carry class evidence.
    """

    data: np.ndarray
    labels: np.ndarray
    class_count: int
    mutable_mask: np.ndarray
    saliency: np.ndarray | None = None
    feature_names: list[str] | None = None
    normalization: Normalization = field(default_factory=Normalization)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        self.mutable_mask = np.ascontiguousarray(self.mutable_mask, dtype=bool)
        if self.saliency is not None:
            self.saliency = np.ascontiguousarray(self.saliency, dtype=bool)
        self._validate()

    def _validate(self):
        if self.data.ndim != 3:
            raise ValueError(f"data must be N x T x F, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("data contains non-finite values")
        n, _, f = self.data.shape
        if self.labels.shape != (n,):
            raise ValueError(f"labels must have shape ({n},), got {self.labels.shape}")
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(
                f"labels must lie in [0, {self.class_count}), "
                f"found range [{self.labels.min()}, {self.labels.max()}]"
            )
        if self.mutable_mask.shape != (f,):
            raise ValueError(f"mutable_mask must have shape ({f},), got {self.mutable_mask.shape}")
        if not self.mutable_mask.any():
            raise ValueError("mutable_mask must mark at least one feature mutable")
        if self.saliency is not None and self.saliency.shape != self.data.shape:
            raise ValueError(
                f"saliency shape {self.saliency.shape} does not match data shape {self.data.shape}"
            )
        if self.feature_names is not None and len(self.feature_names) != f:
            raise ValueError(f"feature_names must have length {f}")

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_timesteps(self) -> int:
        return self.data.shape[1]

    @property
    def n_features(self) -> int:
        return self.data.shape[2]

    def subset(self, indices: np.ndarray) -> "TimeSeriesDataset":
        """New dataset restricted to the given sample indices."""
        indices = np.asarray(indices, dtype=np.int64)
        return TimeSeriesDataset(
            data=self.data[indices].copy(),
            labels=self.labels[indices].copy(),
            class_count=self.class_count,
            mutable_mask=self.mutable_mask.copy(),
            saliency=None if self.saliency is None else self.saliency[indices].copy(),
            feature_names=None if self.feature_names is None else list(self.feature_names),
            normalization=self.normalization,
        )


@dataclass(frozen=True)
class DatasetMeta:
    """Sidecar metadata describing the binary payloads of a saved dataset."""

    n_samples: int
    n_timesteps: int
    n_features: int
    class_count: int
    dtype_tag: str
    mutable_mask: list
    has_saliency: bool
    normalization: Normalization

    def to_json(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_timesteps": self.n_timesteps,
            "n_features": self.n_features,
            "class_count": self.class_count,
            "dtype_tag": self.dtype_tag,
            "mutable_mask": [bool(b) for b in self.mutable_mask],
            "has_saliency": self.has_saliency,
            "normalization": self.normalization.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetMeta":
        return cls(
            n_samples=int(obj["n_samples"]),
            n_timesteps=int(obj["n_timesteps"]),
            n_features=int(obj["n_features"]),
            class_count=int(obj["class_count"]),
            dtype_tag=str(obj["dtype_tag"]),
            mutable_mask=[bool(b) for b in obj["mutable_mask"]],
            has_saliency=bool(obj["has_saliency"]),
            normalization=Normalization.from_json(obj["normalization"]),
        )

    @classmethod
    def for_dataset(cls, dataset: TimeSeriesDataset) -> "DatasetMeta":
        return cls(
            n_samples=dataset.n_samples,
            n_timesteps=dataset.n_timesteps,
            n_features=dataset.n_features,
            class_count=dataset.class_count,
            dtype_tag=DTYPE_TAG,
            mutable_mask=dataset.mutable_mask.tolist(),
            has_saliency=dataset.saliency is not None,
            normalization=dataset.normalization,
        )


def save_dataset(dataset: TimeSeriesDataset, path: str | Path) -> None:
    """Write the dataset directory; round-trips bit-exactly through load_dataset."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        meta = DatasetMeta.for_dataset(dataset)
        (path / META_FILE).write_text(json.dumps(meta.to_json(), indent=2))
        (path / DATA_FILE).write_bytes(np.ascontiguousarray(dataset.data, dtype="<f4").tobytes())
        (path / LABELS_FILE).write_bytes(np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes())
        if dataset.saliency is not None:
            (path / SALIENCY_FILE).write_bytes(
                np.ascontiguousarray(dataset.saliency, dtype=np.uint8).tobytes()
            )
        if dataset.feature_names is not None:
            (path / FEATURE_NAMES_FILE).write_text(json.dumps(dataset.feature_names))
    except OSError as exc:
        raise OSError(f"failed to save dataset to {path}: {exc}") from exc


def load_dataset(path: str | Path) -> TimeSeriesDataset:
    """Read a dataset directory written by save_dataset."""
    path = Path(path)
    meta_path = path / META_FILE
    if not meta_path.is_file():
        raise DatasetFormatError(f"{meta_path} not found")
    meta = DatasetMeta.from_json(json.loads(meta_path.read_text()))
    if meta.dtype_tag != DTYPE_TAG:
        raise DatasetFormatError(f"unsupported dtype_tag {meta.dtype_tag!r} in {meta_path}")

    n, t, f = meta.n_samples, meta.n_timesteps, meta.n_features
    data_path = path / DATA_FILE
    if not data_path.is_file():
        raise DatasetFormatError(f"{data_path} not found")
    raw = np.frombuffer(data_path.read_bytes(), dtype="<f4")
    if raw.size != n * t * f:
        raise DatasetFormatError(
            f"{data_path}: expected {n * t * f} float32 values for shape "
            f"{n}x{t}x{f}, found {raw.size}"
        )
    data = raw.reshape(n, t, f).copy()

    labels_raw = np.frombuffer((path / LABELS_FILE).read_bytes(), dtype="<i4")
    if labels_raw.size != n:
        raise DatasetFormatError(
            f"{path / LABELS_FILE}: expected {n} labels, found {labels_raw.size}"
        )

    saliency = None
    if meta.has_saliency:
        sal_path = path / SALIENCY_FILE
        if not sal_path.is_file():
            raise DatasetFormatError(f"meta declares saliency but {sal_path} is missing")
        sal_raw = np.frombuffer(sal_path.read_bytes(), dtype=np.uint8)
        if sal_raw.size != n * t * f:
            raise DatasetFormatError(
                f"{sal_path}: expected {n * t * f} bytes, found {sal_raw.size}"
            )
        if sal_raw.size and sal_raw.max() > 1:
            raise DatasetFormatError(f"{sal_path}: saliency bytes must be 0 or 1")
        saliency = sal_raw.reshape(n, t, f).astype(bool)

    feature_names = None
    names_path = path / FEATURE_NAMES_FILE
    if names_path.is_file():
        feature_names = [str(s) for s in json.loads(names_path.read_text())]

    try:
        return TimeSeriesDataset(
            data=data,
            labels=labels_raw.copy(),
            class_count=meta.class_count,
            mutable_mask=np.asarray(meta.mutable_mask, dtype=bool),
            saliency=saliency,
            feature_names=feature_names,
            normalization=meta.normalization,
        )
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc


def split(
    dataset: TimeSeriesDataset, test_fraction: float, seed: int
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Deterministic train/test partition with test size round(N * test_fraction)."""
    if dataset.n_samples < 2:
        raise ValueError("split requires at least 2 samples")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.n_samples)
    n_test = int(round(dataset.n_samples * test_fraction))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.subset(train_idx), dataset.subset(test_idx)


def partition_by_target(
    dataset: TimeSeriesDataset, target_class: int
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Split into (queries, targets): targets carry the target label, queries the rest."""
    if not 0 <= target_class < dataset.class_count:
        raise ValueError(
            f"target_class {target_class} outside [0, {dataset.class_count})"
        )
    is_target = dataset.labels == target_class
    if not is_target.any():
        raise ValueError(f"no samples labeled with target class {target_class}")
    if is_target.all():
        raise ValueError(f"all samples labeled with target class {target_class}; no queries left")
    queries = dataset.subset(np.flatnonzero(~is_target))
    targets = dataset.subset(np.flatnonzero(is_target))
    return queries, targets


def _feature_label(dataset: TimeSeriesDataset, index: int) -> str:
    if dataset.feature_names is not None:
        return f"{index} ({dataset.feature_names[index]})"
    return str(index)


def fit_normalizer(train: TimeSeriesDataset, kind: str = "zscore") -> Normalization:
    """Fit per-feature normalization parameters on the training split only."""
    if kind not in NORMALIZATION_KINDS:
        raise ValueError(f"unknown normalization kind {kind!r}")
    if kind == "none":
        return Normalization("none")
    values = train.data.reshape(-1, train.n_features).astype(np.float64)
    if kind == "zscore":
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        flat = np.flatnonzero(std == 0.0)
        if flat.size:
            raise ValueError(
                f"zscore undefined for constant feature {_feature_label(train, int(flat[0]))}"
            )
        return Normalization("zscore", {"mean": mean.tolist(), "std": std.tolist()})
    lo = values.min(axis=0)
    hi = values.max(axis=0)
    flat = np.flatnonzero(hi == lo)
    if flat.size:
        raise ValueError(
            f"minmax undefined for constant feature {_feature_label(train, int(flat[0]))}"
        )
    return Normalization("minmax", {"min": lo.tolist(), "max": hi.tolist()})


def apply_normalizer(dataset: TimeSeriesDataset, record: Normalization) -> TimeSeriesDataset:
    """Apply a fitted normalization record; returns a new dataset."""
    if record.kind == "none":
        return replace(dataset, data=dataset.data.copy(), normalization=record)
    if record.kind == "zscore":
        mean = np.asarray(record.params["mean"], dtype=np.float64)
        std = np.asarray(record.params["std"], dtype=np.float64)
        transformed = (dataset.data.astype(np.float64) - mean) / std
    else:
        lo = np.asarray(record.params["min"], dtype=np.float64)
        hi = np.asarray(record.params["max"], dtype=np.float64)
        transformed = (dataset.data.astype(np.float64) - lo) / (hi - lo)
    return replace(dataset, data=transformed.astype(np.float32), normalization=record)
