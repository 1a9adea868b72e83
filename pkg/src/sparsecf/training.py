"""Classifier pretraining, adversarial counterfactual training, iterative search.

The adversarial loop is shared by the gan, countergan and sparce approaches:
queries flow through the generator, the frozen pretrained classifier scores
the resulting counterfactuals, and a discriminator compares them against real
target-class samples. One discriminator step is followed by one generator
step per batch. The ics baseline needs no training; it optimizes each
counterfactual directly against the classifier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import nets
from .dataset import TimeSeriesDataset, partition_by_target, save_dataset, load_dataset
from .losses import (
    DEFAULT_SPARSITY_BETA,
    LossWeights,
    adversarial_loss,
    classification_loss,
    discriminator_loss,
    generator_loss,
    jerk_loss,
    similarity_loss,
    sparsity_loss,
)

TRAIN_LOG_FILE = "train_log.jsonl"
GENERATOR_DIR = "generator"
DISCRIMINATOR_DIR = "discriminator"

BATCH_DIR_QUERIES = "queries"
BATCH_DIR_TARGETS = "targets"
BATCH_DIR_COUNTERFACTUALS = "counterfactuals"
BATCH_DIR_RESIDUALS = "residuals"
BATCH_PROBS_FILE = "probs.f32"
BATCH_META_FILE = "batch.json"


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "adam"
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999

    def __post_init__(self):
        if self.algorithm != "adam":
            raise ValueError(f"unsupported optimizer {self.algorithm!r}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")

    def build(self, params) -> torch.optim.Adam:
        return torch.optim.Adam(params, lr=self.lr, betas=(self.beta1, self.beta2))


GAN_OPTIMIZER = OptimizerConfig(lr=2e-4, beta1=0.5, beta2=0.999)
CLASSIFIER_OPTIMIZER = OptimizerConfig(lr=1e-3, beta1=0.9, beta2=0.999)
ICS_OPTIMIZER = OptimizerConfig(lr=0.4, beta1=0.9, beta2=0.999)


@dataclass(frozen=True)
class TrainConfig:
    """Shared settings for classifier pretraining and adversarial training."""

    epochs: int = 100
    batch_size: int = 32
    optimizer: OptimizerConfig = GAN_OPTIMIZER
    seed: int = 0
    target_class: int = 1
    approach: str = "sparce"
    loss_weights: LossWeights | None = None
    sparsity_beta: float = DEFAULT_SPARSITY_BETA

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.approach not in nets.APPROACHES:
            raise ValueError(f"unknown approach {self.approach!r}")
        if self.target_class < 0:
            raise ValueError("target_class must be >= 0")
        if self.sparsity_beta <= 0:
            raise ValueError("sparsity_beta must be > 0")
        if self.loss_weights is None and self.approach != "ics":
            object.__setattr__(self, "loss_weights", LossWeights.for_approach(self.approach))


@dataclass(frozen=True)
class ICSConfig:
    """Iterative counterfactual search schedule."""

    n_steps: int = 100
    lambda_init: float = 1.0
    max_lambda_steps: int = 10
    lambda_growth: float = 2.0
    optimizer: OptimizerConfig = ICS_OPTIMIZER

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.max_lambda_steps < 1:
            raise ValueError("max_lambda_steps must be >= 1")
        if self.n_steps % self.max_lambda_steps != 0:
            raise ValueError(
                f"n_steps ({self.n_steps}) must be divisible by "
                f"max_lambda_steps ({self.max_lambda_steps})"
            )
        if self.lambda_init <= 0 or self.lambda_growth <= 0:
            raise ValueError("lambda_init and lambda_growth must be > 0")


@dataclass
class CounterfactualBatch:
    """Queries with their residuals, counterfactuals and classifier outputs."""

    queries: np.ndarray
    residuals: np.ndarray
    counterfactuals: np.ndarray
    target_class: int
    classifier_probs: np.ndarray
    mutable_mask: np.ndarray

    def __post_init__(self):
        self.queries = np.ascontiguousarray(self.queries, dtype=np.float32)
        self.residuals = np.ascontiguousarray(self.residuals, dtype=np.float32)
        self.counterfactuals = np.ascontiguousarray(self.counterfactuals, dtype=np.float32)
        self.classifier_probs = np.ascontiguousarray(self.classifier_probs, dtype=np.float32)
        self.mutable_mask = np.ascontiguousarray(self.mutable_mask, dtype=bool)
        rebuilt = nets.apply_residuals(self.queries, self.residuals, self.mutable_mask)
        if not np.array_equal(rebuilt, self.counterfactuals):
            raise ValueError("counterfactuals != queries + residuals on mutable features")
        if self.classifier_probs.shape[0] != self.queries.shape[0]:
            raise ValueError("classifier_probs batch size mismatch")
        if not 0 <= self.target_class < self.classifier_probs.shape[1]:
            raise ValueError("target_class outside classifier output range")

    @property
    def n_samples(self) -> int:
        return self.queries.shape[0]


def _forward_probs(
    classifier: torch.nn.Module, data: np.ndarray, batch_size: int = 256
) -> np.ndarray:
    classifier.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, data.shape[0], batch_size):
            x = torch.from_numpy(np.ascontiguousarray(data[start : start + batch_size]))
            chunks.append(classifier(x).numpy())
    return np.concatenate(chunks, axis=0)


def classifier_accuracy(classifier: torch.nn.Module, dataset: TimeSeriesDataset) -> float:
    probs = _forward_probs(classifier, dataset.data)
    return float((probs.argmax(axis=1) == dataset.labels).mean())


def pretrain_classifier(
    train: TimeSeriesDataset,
    test: TimeSeriesDataset,
    config: TrainConfig,
    hidden_size: int = 64,
    augment_noise: float = 0.0,
    out_dir: str | Path | None = None,
) -> tuple[nets.SequenceClassifier, float]:
    """Train the sequence classifier; returns (model, held-out accuracy).

    With augment_noise > 0, Gaussian noise of that scale (in units of the
    per-feature training standard deviation) is added to each training batch.
    That keeps the decision function tied to the class evidence instead of
    brittle directions, which matters downstream: the counterfactual
    generators follow this classifier's gradients, and a non-robust classifier
    lets them flip predictions with off-evidence noise. Held-out accuracy is
    always measured on clean inputs. The checkpoint is persisted to out_dir
    when given. Aborts with the failing epoch index if the loss turns
    non-finite.
    """
    if train.class_count < 2:
        raise ValueError("classifier needs at least 2 classes")
    if augment_noise < 0:
        raise ValueError("augment_noise must be >= 0")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    spec = nets.ClassifierSpec(
        n_features=train.n_features,
        class_count=train.class_count,
        hidden_size=hidden_size,
    )
    model = nets.SequenceClassifier(spec)
    optimizer = config.optimizer.build(model.parameters())

    data = torch.from_numpy(train.data)
    labels = torch.from_numpy(train.labels.astype(np.int64))
    binary = train.class_count == 2
    noise_scale = None
    if augment_noise > 0:
        feature_std = train.data.reshape(-1, train.n_features).std(axis=0)
        noise_scale = torch.from_numpy(
            (augment_noise * feature_std).astype(np.float32)
        )

    model.train()
    for epoch in range(config.epochs):
        perm = rng.permutation(train.n_samples)
        for start in range(0, train.n_samples, config.batch_size):
            idx = torch.from_numpy(perm[start : start + config.batch_size])
            batch = data[idx]
            if noise_scale is not None:
                batch = batch + noise_scale * torch.randn_like(batch)
            logits = model.logits(batch)
            if binary:
                loss = torch.nn.functional.binary_cross_entropy_with_logits(
                    logits.squeeze(-1), labels[idx].float()
                )
            else:
                loss = torch.nn.functional.cross_entropy(logits, labels[idx])
            if not torch.isfinite(loss):
                raise RuntimeError(f"classifier training diverged at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

    model.eval()
    accuracy = classifier_accuracy(model, test)
    if out_dir is not None:
        nets.save_checkpoint(model, out_dir)
    return model, accuracy


def _freeze(module: torch.nn.Module) -> None:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)


class _TargetSampler:
    """Cycles through shuffled target indices, reshuffling per pass."""

    def __init__(self, n_targets: int, rng: np.random.Generator):
        self._n = n_targets
        self._rng = rng
        self._pool = rng.permutation(n_targets)
        self._pos = 0

    def draw(self, count: int) -> np.ndarray:
        out = []
        while count > 0:
            if self._pos >= self._n:
                self._pool = self._rng.permutation(self._n)
                self._pos = 0
            take = min(count, self._n - self._pos)
            out.append(self._pool[self._pos : self._pos + take])
            self._pos += take
            count -= take
        return np.concatenate(out)


def train_counterfactual_gan(
    classifier: nets.SequenceClassifier,
    train: TimeSeriesDataset,
    config: TrainConfig,
    out_dir: str | Path | None = None,
) -> tuple[nets.ResidualGenerator, nets.SequenceDiscriminator, list[dict]]:
    """Adversarial training shared by the gan, countergan and sparce approaches.

    Returns (generator, discriminator, per-epoch log records). The classifier
    is frozen throughout. Checkpoints and the JSON-lines training log are
    persisted under out_dir when given.
    """
    if config.approach == "ics":
        raise ValueError("ics is a search baseline, not an adversarial approach")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    queries_ds, targets_ds = partition_by_target(train, config.target_class)
    mask = train.mutable_mask
    n_mutable = int(mask.sum())
    all_mutable = bool(mask.all())
    mask_t = torch.from_numpy(mask)

    gen_spec = nets.build_counterfactual_head(config.approach, train.n_features, n_mutable)
    generator = nets.ResidualGenerator(gen_spec)
    discriminator = nets.SequenceDiscriminator(nets.DiscriminatorSpec(train.n_features))
    _freeze(classifier)

    opt_g = config.optimizer.build(generator.parameters())
    opt_d = config.optimizer.build(discriminator.parameters())
    weights = config.loss_weights

    qx = torch.from_numpy(queries_ds.data)
    tx = torch.from_numpy(targets_ds.data)
    target_sampler = _TargetSampler(targets_ds.n_samples, rng)

    log_records: list[dict] = []
    global_step = 0
    generator.train()
    discriminator.train()

    for epoch in range(config.epochs):
        perm = rng.permutation(queries_ds.n_samples)
        sums = {k: 0.0 for k in ("adv", "cls", "sim", "sparse", "jerk", "total", "d_loss", "d_acc")}
        n_batches = 0

        for start in range(0, queries_ds.n_samples, config.batch_size):
            idx = torch.from_numpy(perm[start : start + config.batch_size])
            xq = qx[idx]
            out = generator(xq)
            if gen_spec.head_variant == "tanh_full":
                if all_mutable:
                    xcf = out
                    residuals = out - xq
                else:
                    xcf = xq.clone()
                    xcf[..., mask_t] = out
                    residuals = out - xq[..., mask_t]
            else:
                residuals = out
                xcf = xq + out if all_mutable else nets.apply_residuals(xq, out, mask)

            tb = tx[torch.from_numpy(target_sampler.draw(len(idx)))]
            d_real = discriminator(tb)
            d_fake = discriminator(xcf.detach())
            d_loss = discriminator_loss(d_real, d_fake)
            if not torch.isfinite(d_loss):
                raise RuntimeError(f"discriminator loss non-finite at epoch {epoch}")
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            with torch.no_grad():
                d_acc = 0.5 * ((d_real > 0.5).float().mean() + (d_fake < 0.5).float().mean())

            adv = adversarial_loss(discriminator(xcf))
            cls = classification_loss(classifier(xcf), config.target_class)
            sim = similarity_loss(xq, xcf)
            sparse = sparsity_loss(xq, xcf, config.sparsity_beta)
            jerk = jerk_loss(residuals)
            try:
                breakdown = generator_loss(adv, cls, sim, sparse, jerk, weights)
            except ValueError as exc:
                raise RuntimeError(f"generator aborted at epoch {epoch}: {exc}") from exc
            opt_g.zero_grad()
            breakdown.total.backward()
            opt_g.step()

            detached = breakdown.detached()
            for key, value in (
                ("adv", detached.adv), ("cls", detached.cls), ("sim", detached.sim),
                ("sparse", detached.sparse), ("jerk", detached.jerk), ("total", detached.total),
                ("d_loss", float(d_loss.detach())), ("d_acc", float(d_acc)),
            ):
                sums[key] += value
            n_batches += 1
            global_step += 1

        record = {"epoch": epoch, "step": global_step}
        record.update({k: sums[k] / n_batches for k in sums})
        log_records.append(record)

    generator.eval()
    discriminator.eval()

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        nets.save_checkpoint(generator, out_dir / GENERATOR_DIR)
        nets.save_checkpoint(discriminator, out_dir / DISCRIMINATOR_DIR)
        with open(out_dir / TRAIN_LOG_FILE, "w") as fh:
            for record in log_records:
                fh.write(json.dumps(record) + "\n")

    return generator, discriminator, log_records


def make_batch(
    queries: np.ndarray,
    residuals: np.ndarray,
    mutable_mask: np.ndarray,
    target_class: int,
    classifier: nets.SequenceClassifier,
) -> CounterfactualBatch:
    """Assemble a CounterfactualBatch whose invariants hold by construction."""
    queries = np.ascontiguousarray(queries, dtype=np.float32)
    residuals = np.ascontiguousarray(residuals, dtype=np.float32)
    counterfactuals = nets.apply_residuals(queries, residuals, mutable_mask)
    probs = _forward_probs(classifier, counterfactuals)
    return CounterfactualBatch(
        queries=queries,
        residuals=residuals,
        counterfactuals=counterfactuals,
        target_class=target_class,
        classifier_probs=probs,
        mutable_mask=np.asarray(mutable_mask, dtype=bool),
    )


def generate_counterfactuals(
    generator: nets.ResidualGenerator,
    classifier: nets.SequenceClassifier,
    queries: np.ndarray,
    mutable_mask: np.ndarray,
    target_class: int,
    batch_size: int = 256,
) -> CounterfactualBatch:
    """Deterministic inference pass producing a full CounterfactualBatch."""
    mask = np.asarray(mutable_mask, dtype=bool)
    n_mutable = int(mask.sum())
    if generator.spec.output_features != n_mutable:
        raise ValueError(
            f"generator emits {generator.spec.output_features} features but the "
            f"mask marks {n_mutable} mutable"
        )
    generator.eval()
    queries = np.ascontiguousarray(queries, dtype=np.float32)
    residual_chunks = []
    with torch.no_grad():
        for start in range(0, queries.shape[0], batch_size):
            xq = torch.from_numpy(queries[start : start + batch_size])
            out = generator(xq)
            if generator.spec.head_variant == "tanh_full":
                out = out - xq[..., torch.from_numpy(mask)]
            residual_chunks.append(out.numpy())
    residuals = np.concatenate(residual_chunks, axis=0)
    return make_batch(queries, residuals, mask, target_class, classifier)


def ics_search(
    classifier: nets.SequenceClassifier,
    queries: np.ndarray,
    target_class: int,
    config: ICSConfig,
    mutable_mask: np.ndarray,
    seed: int = 0,
) -> CounterfactualBatch:
    """Per-sample gradient search for counterfactuals with a growing class weight.

    Each counterfactual starts from per-sample uniform noise between the
    query's min and max, then Adam minimizes
    lambda * ||C(x_cf) - onehot||_2^2 + ||x_q - x_cf||_1 directly over x_cf.
    lambda doubles at evenly spaced checkpoints while the prediction has not
    flipped. Immutable features are re-clamped to the query after every step.
    """
    torch.manual_seed(seed)
    _freeze(classifier)
    mask = np.asarray(mutable_mask, dtype=bool)
    immutable_t = torch.from_numpy(~mask)
    has_immutable = bool((~mask).any())

    xq = torch.from_numpy(np.ascontiguousarray(queries, dtype=np.float32))
    n = xq.shape[0]
    lo = xq.reshape(n, -1).min(dim=1).values.view(n, 1, 1)
    hi = xq.reshape(n, -1).max(dim=1).values.view(n, 1, 1)
    xcf = lo + torch.rand_like(xq) * (hi - lo)
    if has_immutable:
        xcf[..., immutable_t] = xq[..., immutable_t]
    xcf.requires_grad_(True)

    optimizer = config.optimizer.build([xcf])
    class_count = classifier.spec.class_count
    onehot = torch.zeros(class_count)
    onehot[target_class] = 1.0
    lam = torch.full((n,), float(config.lambda_init))

    if config.n_steps > 0:
        segment = config.n_steps // config.max_lambda_steps
        for _ in range(config.max_lambda_steps):
            for _ in range(segment):
                probs = classifier(xcf)
                cls_term = ((probs - onehot) ** 2).sum(dim=1)
                sim_term = (xq - xcf).abs().reshape(n, -1).sum(dim=1)
                loss = (lam * cls_term + sim_term).sum()
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                if has_immutable:
                    with torch.no_grad():
                        xcf[..., immutable_t] = xq[..., immutable_t]
            with torch.no_grad():
                not_flipped = classifier(xcf).argmax(dim=1) != target_class
                lam[not_flipped] *= config.lambda_growth

    final = xcf.detach().numpy()
    residuals = (final - queries)[..., mask]
    return make_batch(queries, residuals, mask, target_class, classifier)


def save_counterfactual_batch(
    batch: CounterfactualBatch,
    path: str | Path,
    query_labels: np.ndarray,
    class_count: int,
    query_saliency: np.ndarray | None = None,
    targets: TimeSeriesDataset | None = None,
) -> None:
    """Persist a batch as dataset-format directories plus the probability grid."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    query_labels = np.asarray(query_labels, dtype=np.int32)
    save_dataset(
        TimeSeriesDataset(
            data=batch.queries,
            labels=query_labels,
            class_count=class_count,
            mutable_mask=batch.mutable_mask,
            saliency=query_saliency,
        ),
        path / BATCH_DIR_QUERIES,
    )
    save_dataset(
        TimeSeriesDataset(
            data=batch.counterfactuals,
            labels=batch.classifier_probs.argmax(axis=1).astype(np.int32),
            class_count=class_count,
            mutable_mask=batch.mutable_mask,
        ),
        path / BATCH_DIR_COUNTERFACTUALS,
    )
    save_dataset(
        TimeSeriesDataset(
            data=batch.residuals,
            labels=query_labels,
            class_count=class_count,
            mutable_mask=np.ones(batch.residuals.shape[2], dtype=bool),
        ),
        path / BATCH_DIR_RESIDUALS,
    )
    if targets is not None:
        save_dataset(targets, path / BATCH_DIR_TARGETS)
    (path / BATCH_PROBS_FILE).write_bytes(
        np.ascontiguousarray(batch.classifier_probs, dtype="<f4").tobytes()
    )
    (path / BATCH_META_FILE).write_text(
        json.dumps(
            {
                "target_class": int(batch.target_class),
                "class_count": int(class_count),
                "n_samples": int(batch.n_samples),
            },
            indent=2,
        )
    )


def load_counterfactual_batch(path: str | Path) -> tuple[CounterfactualBatch, TimeSeriesDataset]:
    """Load a saved batch; returns (batch, queries dataset with labels/saliency)."""
    path = Path(path)
    meta = json.loads((path / BATCH_META_FILE).read_text())
    queries_ds = load_dataset(path / BATCH_DIR_QUERIES)
    counterfactuals_ds = load_dataset(path / BATCH_DIR_COUNTERFACTUALS)
    residuals_ds = load_dataset(path / BATCH_DIR_RESIDUALS)
    probs = np.frombuffer((path / BATCH_PROBS_FILE).read_bytes(), dtype="<f4").reshape(
        meta["n_samples"], meta["class_count"]
    )
    batch = CounterfactualBatch(
        queries=queries_ds.data,
        residuals=residuals_ds.data,
        counterfactuals=counterfactuals_ds.data,
        target_class=meta["target_class"],
        classifier_probs=probs.copy(),
        mutable_mask=queries_ds.mutable_mask,
    )
    return batch, queries_ds
