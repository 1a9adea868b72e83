"""Sparse counterfactual explanations for multivariate time series classifiers."""

from .dataset import (
    Normalization,
    TimeSeriesDataset,
    apply_normalizer,
    fit_normalizer,
    load_dataset,
    partition_by_target,
    save_dataset,
    split,
)
from .losses import LossBreakdown, LossWeights
from .metrics import MetricsReport
from .movingbox import MovingBoxConfig, generate, saliency_fraction
from .nets import (
    ClassifierSpec,
    DiscriminatorSpec,
    GeneratorSpec,
    ResidualGenerator,
    SequenceClassifier,
    SequenceDiscriminator,
    apply_residuals,
    build_counterfactual_head,
    sparsity_layer,
)
from .training import (
    CounterfactualBatch,
    ICSConfig,
    OptimizerConfig,
    TrainConfig,
    generate_counterfactuals,
    ics_search,
    pretrain_classifier,
    train_counterfactual_gan,
)

__version__ = "0.1.0"

__all__ = [
    "ClassifierSpec",
    "CounterfactualBatch",
    "DiscriminatorSpec",
    "GeneratorSpec",
    "ICSConfig",
    "LossBreakdown",
    "LossWeights",
    "MetricsReport",
    "MovingBoxConfig",
    "Normalization",
    "OptimizerConfig",
    "ResidualGenerator",
    "SequenceClassifier",
    "SequenceDiscriminator",
    "TimeSeriesDataset",
    "TrainConfig",
    "apply_normalizer",
    "apply_residuals",
    "build_counterfactual_head",
    "fit_normalizer",
    "generate",
    "generate_counterfactuals",
    "ics_search",
    "load_dataset",
    "partition_by_target",
    "pretrain_classifier",
    "saliency_fraction",
    "save_dataset",
    "sparsity_layer",
    "split",
    "train_counterfactual_gan",
]
