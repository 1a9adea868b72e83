"""Synthetic moving-box benchmark with known ground-truth saliency.

Each sample is a T x F background process with one axis-aligned rectangle of
cells (the "box") whose mean is shifted up for class 1 and down for class 0.
The box position and extent vary per sample, so a classifier has to localize
the evidence, and the rectangle doubles as a ground-truth saliency mask for
evaluating which cells a counterfactual method modifies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TimeSeriesDataset

BACKGROUND_PROCESSES = ("iid_gaussian", "ar1")

# Class-conditional mean shift inside the box. Calibrated by sweeping
# {0.5, 1.0, 2.0}: 0.5 leaves the recurrent classifier short of the 95%
# accuracy gate at N=2000 while 1.0 clears it with margin.
DEFAULT_SIGNAL_SHIFT = 1.0


def _default_span_range(extent: int) -> tuple[int, int]:
    # 10% to 40% of the axis; (5, 20) at the standard extent of 50
    return max(1, extent // 10), max(1, (2 * extent) // 5)


@dataclass(frozen=True)
class MovingBoxConfig:
    """Generation settings for the synthetic benchmark.

    Box ranges give (min, max) salient-span lengths; when omitted they default
    to 10%-40% of the corresponding axis.
    """

    n_samples: int
    n_timesteps: int = 50
    n_features: int = 50
    box_time_range: tuple[int, int] | None = None
    box_feature_range: tuple[int, int] | None = None
    signal_shift: float = DEFAULT_SIGNAL_SHIFT
    background_process: str = "iid_gaussian"
    ar_coefficient: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2 so both classes are realizable")
        if self.n_timesteps < 1 or self.n_features < 1:
            raise ValueError("n_timesteps and n_features must be positive")
        if self.box_time_range is None:
            object.__setattr__(self, "box_time_range", _default_span_range(self.n_timesteps))
        if self.box_feature_range is None:
            object.__setattr__(self, "box_feature_range", _default_span_range(self.n_features))
        for name, (lo, hi), limit in (
            ("box_time_range", self.box_time_range, self.n_timesteps),
            ("box_feature_range", self.box_feature_range, self.n_features),
        ):
            if not (1 <= lo <= hi <= limit):
                raise ValueError(
                    f"{name}=({lo}, {hi}) must satisfy 1 <= min <= max <= {limit}"
                )
        if self.signal_shift < 0 or not np.isfinite(self.signal_shift):
            raise ValueError("signal_shift must be finite and >= 0")
        if self.background_process not in BACKGROUND_PROCESSES:
            raise ValueError(f"unknown background_process {self.background_process!r}")
        if not -1.0 < self.ar_coefficient < 1.0:
            raise ValueError("ar_coefficient must lie in (-1, 1)")


def _background(config: MovingBoxConfig, rng: np.random.Generator) -> np.ndarray:
    n, t, f = config.n_samples, config.n_timesteps, config.n_features
    noise = rng.standard_normal((n, t, f))
    if config.background_process == "iid_gaussian":
        return noise
    # Stationary AR(1) per feature: unit marginal variance, zero mean.
    phi = config.ar_coefficient
    out = np.empty_like(noise)
    out[:, 0] = noise[:, 0]
    innovation_scale = np.sqrt(1.0 - phi * phi)
    for step in range(1, t):
        out[:, step] = phi * out[:, step - 1] + innovation_scale * noise[:, step]
    return out


def generate(config: MovingBoxConfig) -> TimeSeriesDataset:
    """Generate a dataset with one salient rectangle per sample.

    Labels are drawn Bernoulli(0.5); inside the box class 1 receives a
    +signal_shift mean offset and class 0 receives -signal_shift. All features
    are mutable. Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(config.seed)
    n, t, f = config.n_samples, config.n_timesteps, config.n_features

    labels = rng.integers(0, 2, size=n)
    data = _background(config, rng)

    t_len = rng.integers(config.box_time_range[0], config.box_time_range[1] + 1, size=n)
    f_len = rng.integers(config.box_feature_range[0], config.box_feature_range[1] + 1, size=n)
    t_start = rng.integers(0, t - t_len + 1)
    f_start = rng.integers(0, f - f_len + 1)

    time_idx = np.arange(t)
    feat_idx = np.arange(f)
    in_time = (time_idx[None, :] >= t_start[:, None]) & (time_idx[None, :] < (t_start + t_len)[:, None])
    in_feat = (feat_idx[None, :] >= f_start[:, None]) & (feat_idx[None, :] < (f_start + f_len)[:, None])
    saliency = in_time[:, :, None] & in_feat[:, None, :]

    shift = np.where(labels == 1, config.signal_shift, -config.signal_shift)
    data += saliency * shift[:, None, None]

    return TimeSeriesDataset(
        data=data.astype(np.float32),
        labels=labels.astype(np.int32),
        class_count=2,
        mutable_mask=np.ones(f, dtype=bool),
        saliency=saliency,
    )


def saliency_fraction(dataset: TimeSeriesDataset) -> float:
    """Mean fraction of salient cells per sample."""
    if dataset.saliency is None:
        raise ValueError("dataset has no saliency masks")
    per_sample = dataset.saliency.reshape(dataset.n_samples, -1).mean(axis=1)
    return float(per_sample.mean())
