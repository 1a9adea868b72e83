"""Recurrent architectures: sequence classifier, residual generator, discriminator.

The generator is a many-to-many bidirectional LSTM whose output head comes in
three variants:

* ``tanh_full``          the head output is the counterfactual itself
* ``tanh_residual``      the head output is an additive residual, tanh-bounded
* ``dual_relu_residual`` residual = relu(pos) - relu(neg), so any cell can be
                         exactly zero

Checkpoints are directories holding ``arch.json`` (the spec fields) plus a
``weights.pt`` blob.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

APPROACHES = ("ics", "gan", "countergan", "sparce")
HEAD_VARIANTS = ("tanh_full", "tanh_residual", "dual_relu_residual")

ARCH_FILE = "arch.json"
WEIGHTS_FILE = "weights.pt"


@dataclass(frozen=True)
class ClassifierSpec:
    """Many-to-one recurrent classifier with a C-way probability head."""

    n_features: int
    class_count: int
    hidden_size: int = 64
    n_layers: int = 1
    bidirectional: bool = True
    dropout: float = 0.2


@dataclass(frozen=True)
class GeneratorSpec:
    """Many-to-many recurrent generator; output covers the mutable features."""

    n_features: int
    output_features: int
    head_variant: str
    hidden_size: int = 256
    n_layers: int = 2
    bidirectional: bool = True
    dropout: float = 0.4

    def __post_init__(self):
        if self.head_variant not in HEAD_VARIANTS:
            raise ValueError(f"unknown head_variant {self.head_variant!r}")
        if not 1 <= self.output_features <= self.n_features:
            raise ValueError("output_features must lie in [1, n_features]")


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Many-to-one recurrent discriminator with scalar sigmoid output."""

    n_features: int
    hidden_size: int = 16
    n_layers: int = 1
    bidirectional: bool = True
    dropout: float = 0.4


def sparsity_layer(pos: torch.Tensor, neg: torch.Tensor) -> torch.Tensor:
    """Subtractive dual ReLU: relu(pos) - relu(neg), exactly 0 where both <= 0."""
    if pos.shape != neg.shape:
        raise ValueError(f"shape mismatch: pos {tuple(pos.shape)} vs neg {tuple(neg.shape)}")
    return torch.relu(pos) - torch.relu(neg)


def apply_residuals(query, residuals, mutable_mask):
    """Add residuals onto the mutable features of a query batch.

    Immutable features of the result are bit-exact copies of the query.
    Works on torch tensors (differentiable w.r.t. residuals) and numpy arrays.
    """
    is_torch = torch.is_tensor(query)
    if is_torch:
        mask = torch.as_tensor(np.asarray(mutable_mask, dtype=bool), device=query.device)
    else:
        mask = np.asarray(mutable_mask, dtype=bool)
    if mask.ndim != 1 or mask.shape[0] != query.shape[-1]:
        raise ValueError(
            f"mutable_mask length {mask.shape} does not match feature count {query.shape[-1]}"
        )
    n_mutable = int(mask.sum())
    if residuals.shape[:-1] != query.shape[:-1] or residuals.shape[-1] != n_mutable:
        raise ValueError(
            f"residuals shape {tuple(residuals.shape)} incompatible with query "
            f"{tuple(query.shape)} and {n_mutable} mutable features"
        )
    counterfactual = query.clone() if is_torch else query.copy()
    counterfactual[..., mask] = query[..., mask] + residuals
    return counterfactual


def _pooled_final_state(hidden: torch.Tensor, bidirectional: bool) -> torch.Tensor:
    # hidden: (n_layers * n_directions, N, H); concatenate the last layer's directions.
    if bidirectional:
        return torch.cat([hidden[-2], hidden[-1]], dim=1)
    return hidden[-1]


class SequenceClassifier(nn.Module):
    """Many-to-one LSTM classifier returning N x C probabilities."""

    def __init__(self, spec: ClassifierSpec):
        super().__init__()
        self.spec = spec
        self.lstm = nn.LSTM(
            spec.n_features,
            spec.hidden_size,
            num_layers=spec.n_layers,
            bidirectional=spec.bidirectional,
            batch_first=True,
            dropout=spec.dropout if spec.n_layers > 1 else 0.0,
        )
        self.dropout = nn.Dropout(spec.dropout)
        out_width = spec.hidden_size * (2 if spec.bidirectional else 1)
        n_logits = 1 if spec.class_count == 2 else spec.class_count
        self.head = nn.Linear(out_width, n_logits)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        _, (hidden, _) = self.lstm(x)
        pooled = self.dropout(_pooled_final_state(hidden, self.spec.bidirectional))
        return self.head(pooled)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        logits = self.logits(x)
        if self.spec.class_count == 2:
            p1 = torch.sigmoid(logits.squeeze(-1))
            return torch.stack([1.0 - p1, p1], dim=1)
        return torch.softmax(logits, dim=1)


class ResidualGenerator(nn.Module):
    """Many-to-many LSTM generator producing N x T x output_features."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.lstm = nn.LSTM(
            spec.n_features,
            spec.hidden_size,
            num_layers=spec.n_layers,
            bidirectional=spec.bidirectional,
            batch_first=True,
            dropout=spec.dropout if spec.n_layers > 1 else 0.0,
        )
        self.dropout = nn.Dropout(spec.dropout)
        out_width = spec.hidden_size * (2 if spec.bidirectional else 1)
        head_width = spec.output_features
        if spec.head_variant == "dual_relu_residual":
            head_width = 2 * spec.output_features
        self.head = nn.Linear(out_width, head_width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        seq, _ = self.lstm(x)
        out = self.head(self.dropout(seq))
        if self.spec.head_variant == "dual_relu_residual":
            pos, neg = out.chunk(2, dim=-1)
            return sparsity_layer(pos, neg)
        return torch.tanh(out)


class SequenceDiscriminator(nn.Module):
    """Many-to-one LSTM discriminator returning N probabilities in (0, 1)."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        self.lstm = nn.LSTM(
            spec.n_features,
            spec.hidden_size,
            num_layers=spec.n_layers,
            bidirectional=spec.bidirectional,
            batch_first=True,
            dropout=spec.dropout if spec.n_layers > 1 else 0.0,
        )
        self.dropout = nn.Dropout(spec.dropout)
        out_width = spec.hidden_size * (2 if spec.bidirectional else 1)
        self.head = nn.Linear(out_width, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _, (hidden, _) = self.lstm(x)
        pooled = self.dropout(_pooled_final_state(hidden, self.spec.bidirectional))
        return torch.sigmoid(self.head(pooled)).squeeze(-1)


def build_counterfactual_head(
    approach: str, n_features: int, output_features: int
) -> GeneratorSpec:
    """Generator spec for one of the adversarial approaches.

    ``gan`` emits complete counterfactuals through a tanh head, ``countergan``
    emits tanh-bounded residuals, ``sparce`` emits dual-ReLU residuals.
    """
    heads = {
        "gan": "tanh_full",
        "countergan": "tanh_residual",
        "sparce": "dual_relu_residual",
    }
    if approach not in heads:
        raise ValueError(f"unknown approach {approach!r}; expected one of {sorted(heads)}")
    return GeneratorSpec(
        n_features=n_features,
        output_features=output_features,
        head_variant=heads[approach],
    )


_SPEC_KINDS = {
    "classifier": (ClassifierSpec, SequenceClassifier),
    "generator": (GeneratorSpec, ResidualGenerator),
    "discriminator": (DiscriminatorSpec, SequenceDiscriminator),
}


def _kind_of(module: nn.Module) -> str:
    for kind, (_, module_cls) in _SPEC_KINDS.items():
        if isinstance(module, module_cls):
            return kind
    raise TypeError(f"unsupported module type {type(module).__name__}")


def save_checkpoint(module: nn.Module, path: str | Path) -> None:
    """Persist arch.json + weights.pt into a checkpoint directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    kind = _kind_of(module)
    arch = {"kind": kind, **asdict(module.spec)}
    (path / ARCH_FILE).write_text(json.dumps(arch, indent=2))
    torch.save(module.state_dict(), path / WEIGHTS_FILE)


def load_checkpoint(path: str | Path) -> nn.Module:
    """Rebuild a module from a checkpoint directory written by save_checkpoint."""
    path = Path(path)
    arch = json.loads((path / ARCH_FILE).read_text())
    kind = arch.pop("kind")
    if kind not in _SPEC_KINDS:
        raise ValueError(f"unknown checkpoint kind {kind!r} in {path}")
    spec_cls, module_cls = _SPEC_KINDS[kind]
    spec = spec_cls(**arch)
    module = module_cls(spec)
    state = torch.load(path / WEIGHTS_FILE, map_location="cpu", weights_only=True)
    module.load_state_dict(state)
    module.eval()
    return module
