"""Generator and discriminator loss terms for counterfactual training.

The generator objective combines five weighted terms: fooling the
discriminator, moving the classifier output to the target class, staying close
to the query (L1), modifying few cells (differentiable L0 surrogate), and
spreading modifications smoothly over time (jerk). All log arguments are
clamped to [EPS, 1 - EPS] so early-training saturation cannot produce
non-finite losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

EPS = 1e-7

DEFAULT_SPARSITY_BETA = 10.0


@dataclass(frozen=True)
class LossWeights:
    """Weights for the five generator loss terms; 0 switches a term off."""

    adversarial: float = 1.0
    classification: float = 1.0
    similarity: float = 1.0
    sparsity: float = 1.0
    jerk: float = 1.0

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"loss weight {name!r} must be finite and >= 0, got {value}")

    def as_dict(self) -> dict:
        return {
            "adversarial": self.adversarial,
            "classification": self.classification,
            "similarity": self.similarity,
            "sparsity": self.sparsity,
            "jerk": self.jerk,
        }

    @classmethod
    def for_approach(cls, approach: str) -> "LossWeights":
        """Per-approach defaults: gan/countergan use only the first three terms."""
        if approach in ("gan", "countergan"):
            return cls(1.0, 1.0, 1.0, 0.0, 0.0)
        if approach == "sparce":
            return cls(1.0, 1.0, 1.0, 1.0, 1.0)
        raise ValueError(f"no loss-weight defaults for approach {approach!r}")


@dataclass
class LossBreakdown:
    """Per-term generator loss values plus their weighted total."""

    adv: float
    cls: float
    sim: float
    sparse: float
    jerk: float
    total: float

    def detached(self) -> "LossBreakdown":
        """Plain-float copy, for logging from live tensors."""
        def as_float(value):
            return float(value.detach()) if torch.is_tensor(value) else float(value)

        return LossBreakdown(*(as_float(getattr(self, f)) for f in
                               ("adv", "cls", "sim", "sparse", "jerk", "total")))


def _clamped_log(p: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(p, EPS, 1.0 - EPS))


def adversarial_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Mean of -log D(counterfactual): low when the discriminator is fooled."""
    return (-_clamped_log(d_fake)).mean()


def classification_loss(class_probs: torch.Tensor, target_class: int) -> torch.Tensor:
    """Mean cross-entropy against the target class, from probabilities."""
    if not 0 <= target_class < class_probs.shape[1]:
        raise ValueError(
            f"target_class {target_class} outside [0, {class_probs.shape[1]})"
        )
    return (-_clamped_log(class_probs[:, target_class])).mean()


def similarity_loss(query: torch.Tensor, counterfactual: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of the summed absolute modification (L1, unnormalized)."""
    if query.shape != counterfactual.shape:
        raise ValueError(
            f"shape mismatch: query {tuple(query.shape)} vs "
            f"counterfactual {tuple(counterfactual.shape)}"
        )
    diff = (query - counterfactual).abs()
    return diff.reshape(diff.shape[0], -1).sum(dim=1).mean()


def sparsity_loss(
    query: torch.Tensor,
    counterfactual: torch.Tensor,
    surrogate_scale: float = DEFAULT_SPARSITY_BETA,
) -> torch.Tensor:
    """Differentiable surrogate of the modified-cell count.

    Each cell contributes tanh(beta * |diff|), which approaches the exact 0/1
    indicator as beta grows and never exceeds it.
    """
    if surrogate_scale <= 0:
        raise ValueError(f"surrogate_scale must be > 0, got {surrogate_scale}")
    if query.shape != counterfactual.shape:
        raise ValueError(
            f"shape mismatch: query {tuple(query.shape)} vs "
            f"counterfactual {tuple(counterfactual.shape)}"
        )
    soft_count = torch.tanh(surrogate_scale * (query - counterfactual).abs())
    return soft_count.reshape(soft_count.shape[0], -1).sum(dim=1).mean()


def jerk_loss(residuals: torch.Tensor) -> torch.Tensor:
    """Sum over time of the per-step Euclidean norm of residual differences."""
    if residuals.ndim != 3:
        raise ValueError(f"residuals must be N x T x F, got shape {tuple(residuals.shape)}")
    if residuals.shape[1] < 2:
        raise ValueError("jerk requires at least 2 time steps")
    step_diff = residuals[:, 1:] - residuals[:, :-1]
    per_step = torch.linalg.vector_norm(step_diff, dim=2)
    return per_step.sum(dim=1).mean()


def generator_loss(
    adv: torch.Tensor | float,
    cls: torch.Tensor | float,
    sim: torch.Tensor | float,
    sparse: torch.Tensor | float,
    jerk: torch.Tensor | float,
    weights: LossWeights,
) -> LossBreakdown:
    """Weighted combination of the five terms; raises on non-finite components."""
    components = {"adv": adv, "cls": cls, "sim": sim, "sparse": sparse, "jerk": jerk}
    for name, value in components.items():
        scalar = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not math.isfinite(scalar):
            raise ValueError(f"generator loss component {name!r} is non-finite: {scalar}")
    total = (
        weights.adversarial * adv
        + weights.classification * cls
        + weights.similarity * sim
        + weights.sparsity * sparse
        + weights.jerk * jerk
    )
    return LossBreakdown(adv=adv, cls=cls, sim=sim, sparse=sparse, jerk=jerk, total=total)


def discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """Symmetric real/fake discrimination loss.

    Real samples are drawn from the target class; fakes are generated
    counterfactuals detached from the generator.
    """
    real_term = (-_clamped_log(d_real)).mean()
    fake_term = (-torch.log(torch.clamp(1.0 - d_fake, EPS, 1.0 - EPS))).mean()
    return 0.5 * (real_term + fake_term)
