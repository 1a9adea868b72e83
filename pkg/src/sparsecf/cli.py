"""Command-line entry point: synthesize, train-classifier, explain, evaluate, plot.

Settings come from an optional YAML config file (one section per concern)
overridden by CLI flags; flags win. Exit codes: 0 success, 1 configuration
error, 2 runtime failure. When --out is omitted, outputs land under the
directory named by the SPARSECF_RUN_ROOT environment variable (default
./runs).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import movingbox, nets, plots, report
from .dataset import (
    Normalization,
    apply_normalizer,
    fit_normalizer,
    load_dataset,
    partition_by_target,
    save_dataset,
    split,
)
from .losses import LossWeights
from .metrics import (
    METRICS_FILE,
    MetricsReport,
    embed_2d,
    precision_metric,
    saliency_roc,
    similarity_metric,
    smoothness_metric,
    sparsity_metric,
    write_roc_csv,
)
from .training import (
    BATCH_DIR_TARGETS,
    CLASSIFIER_OPTIMIZER,
    GAN_OPTIMIZER,
    ICSConfig,
    OptimizerConfig,
    TrainConfig,
    generate_counterfactuals,
    ics_search,
    load_counterfactual_batch,
    pretrain_classifier,
    save_counterfactual_batch,
    train_counterfactual_gan,
)

RUN_ROOT_ENV = "SPARSECF_RUN_ROOT"
NORM_FILE = "norm.json"
ROC_FILE = "roc.csv"
BATCH_SUBDIR = "batch"


class ConfigError(Exception):
    """Invalid configuration or usage; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigError(f"config file not found: {file_path}")
    loaded = yaml.safe_load(file_path.read_text())
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {file_path} must hold a mapping of sections")
    return loaded


def _section(config: dict, name: str) -> dict:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return dict(section)


def _merge(section: dict, flag_values: dict) -> dict:
    merged = dict(section)
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    return merged


def _out_dir(args, default_name: str) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get(RUN_ROOT_ENV, "runs")) / default_name


def _print(line: str) -> None:
    print(line, flush=True)


# ---------------------------------------------------------------------------
# synthesize
# ---------------------------------------------------------------------------

def cmd_synthesize(args) -> int:
    section = _section(_load_config(args.config), "dataset")
    merged = _merge(section, {
        "n_samples": args.n_samples,
        "n_timesteps": args.n_timesteps,
        "n_features": args.n_features,
        "signal_shift": args.signal_shift,
        "background_process": args.background_process,
        "ar_coefficient": args.ar_coefficient,
        "seed": args.seed,
    })
    if "box_time_range" in merged:
        merged["box_time_range"] = tuple(merged["box_time_range"])
    if "box_feature_range" in merged:
        merged["box_feature_range"] = tuple(merged["box_feature_range"])
    try:
        config = movingbox.MovingBoxConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"invalid dataset config: {exc}") from exc

    dataset = movingbox.generate(config)
    out = _out_dir(args, "movingbox")
    save_dataset(dataset, out)
    balance = float((dataset.labels == 1).mean())
    _print(f"dataset written to {out}")
    _print(
        f"n_samples={dataset.n_samples} n_timesteps={dataset.n_timesteps} "
        f"n_features={dataset.n_features} class_balance={balance:.3f} "
        f"saliency_fraction={movingbox.saliency_fraction(dataset):.4f}"
    )
    _print(f"dataset_hash={report.dataset_hash(out)}")
    return 0


# ---------------------------------------------------------------------------
# train-classifier
# ---------------------------------------------------------------------------

def _split_settings(config: dict, args) -> tuple[float, int]:
    section = _section(config, "split")
    merged = _merge(section, {
        "test_fraction": args.test_fraction,
        "seed": args.split_seed,
    })
    return float(merged.get("test_fraction", 0.2)), int(merged.get("seed", 0))


def cmd_train_classifier(args) -> int:
    config = _load_config(args.config)
    section = _section(config, "classifier")
    merged = _merge(section, {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "seed": args.seed,
        "hidden_size": args.hidden_size,
        "augment_noise": args.augment_noise,
    })
    test_fraction, split_seed = _split_settings(config, args)
    norm_kind = args.normalization or config.get("normalization", "zscore")

    dataset_dir = Path(args.dataset)
    dataset = load_dataset(dataset_dir)
    digest = report.dataset_hash(dataset_dir)
    train, test = split(dataset, test_fraction, split_seed)
    record = fit_normalizer(train, norm_kind)
    train = apply_normalizer(train, record)
    test = apply_normalizer(test, record)

    train_config = TrainConfig(
        epochs=int(merged.get("epochs", 50)),
        batch_size=int(merged.get("batch_size", 32)),
        optimizer=OptimizerConfig(
            lr=float(merged.get("lr", CLASSIFIER_OPTIMIZER.lr)),
            beta1=float(merged.get("beta1", CLASSIFIER_OPTIMIZER.beta1)),
            beta2=float(merged.get("beta2", CLASSIFIER_OPTIMIZER.beta2)),
        ),
        seed=int(merged.get("seed", 0)),
        target_class=0,
        approach="sparce",
    )

    out = _out_dir(args, "classifier")
    manifest = report.RunManifest.create(
        run_id="classifier",
        config={
            "epochs": train_config.epochs,
            "batch_size": train_config.batch_size,
            "lr": train_config.optimizer.lr,
            "seed": train_config.seed,
            "hidden_size": int(merged.get("hidden_size", 64)),
            "augment_noise": float(merged.get("augment_noise", 1.0)),
            "test_fraction": test_fraction,
            "split_seed": split_seed,
            "normalization": norm_kind,
        },
        dataset_path=dataset_dir,
        dataset_digest=digest,
        seeds=[train_config.seed],
    )
    manifest.save(out)
    try:
        _, accuracy = pretrain_classifier(
            train, test, train_config,
            hidden_size=int(merged.get("hidden_size", 64)),
            augment_noise=float(merged.get("augment_noise", 1.0)),
            out_dir=out,
        )
        (out / NORM_FILE).write_text(json.dumps(record.to_json(), indent=2))
        manifest.status = "completed"
        manifest.artifacts = {
            "arch": str(out / nets.ARCH_FILE),
            "weights": str(out / nets.WEIGHTS_FILE),
            "normalization": str(out / NORM_FILE),
            "test_accuracy": accuracy,
        }
        manifest.save(out)
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = str(exc)
        manifest.save(out)
        raise
    _print(f"classifier written to {out}")
    _print(f"test_accuracy={accuracy:.4f}")
    return 0


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------

def _loss_weights(approach: str, args) -> LossWeights:
    base = LossWeights.for_approach(approach)
    overrides = {
        "adversarial": args.lambda1,
        "classification": args.lambda2,
        "similarity": args.lambda3,
        "sparsity": args.lambda4,
        "jerk": args.lambda5,
    }
    values = {k: (base.as_dict()[k] if v is None else float(v)) for k, v in overrides.items()}
    return LossWeights(**values)


def run_explain_repetition(
    classifier,
    train_ds,
    test_queries,
    test_targets,
    approach: str,
    target_class: int,
    seed: int,
    run_dir: Path,
    dataset_dir: Path,
    dataset_digest: str,
    train_config: TrainConfig | None = None,
    ics_config: ICSConfig | None = None,
) -> MetricsReport:
    """One seeded repetition: train/search, generate, measure, persist."""
    run_dir = Path(run_dir)
    mask = test_queries.mutable_mask
    config_snapshot = {
        "approach": approach,
        "target_class": target_class,
        "seed": seed,
    }
    if approach == "ics":
        ics_config = ics_config or ICSConfig()
        config_snapshot["ics"] = {
            "n_steps": ics_config.n_steps,
            "lambda_init": ics_config.lambda_init,
            "max_lambda_steps": ics_config.max_lambda_steps,
            "lambda_growth": ics_config.lambda_growth,
            "lr": ics_config.optimizer.lr,
        }
    else:
        assert train_config is not None
        config_snapshot["train"] = {
            "epochs": train_config.epochs,
            "batch_size": train_config.batch_size,
            "lr": train_config.optimizer.lr,
            "beta1": train_config.optimizer.beta1,
            "beta2": train_config.optimizer.beta2,
            "loss_weights": train_config.loss_weights.as_dict(),
            "sparsity_beta": train_config.sparsity_beta,
        }

    manifest = report.RunManifest.create(
        run_id=run_dir.name,
        config=config_snapshot,
        dataset_path=dataset_dir,
        dataset_digest=dataset_digest,
        seeds=[seed],
    )
    manifest.save(run_dir)
    try:
        if approach == "ics":
            batch = ics_search(
                classifier, test_queries.data, target_class, ics_config, mask, seed=seed
            )
        else:
            generator, _, _ = train_counterfactual_gan(
                classifier, train_ds, train_config, out_dir=run_dir
            )
            batch = generate_counterfactuals(
                generator, classifier, test_queries.data, mask, target_class
            )

        saliency_auc = None
        artifacts = {}
        if test_queries.saliency is not None:
            points, saliency_auc = saliency_roc(
                batch.residuals, test_queries.saliency[..., mask]
            )
            write_roc_csv(points, run_dir / ROC_FILE)
            artifacts["roc"] = str(run_dir / ROC_FILE)

        result = MetricsReport(
            precision=precision_metric(batch.classifier_probs, target_class),
            similarity=similarity_metric(batch.queries, batch.counterfactuals),
            sparsity=sparsity_metric(batch.queries, batch.counterfactuals, mask),
            smoothness=smoothness_metric(batch.residuals),
            saliency_auc=saliency_auc,
            n_samples=batch.n_samples,
            T=test_queries.n_timesteps,
            F=test_queries.n_features,
            F_mutable=int(mask.sum()),
            approach=approach,
            target_class=target_class,
            seed=seed,
        )
        result.save(run_dir / METRICS_FILE)
        save_counterfactual_batch(
            batch,
            run_dir / BATCH_SUBDIR,
            query_labels=test_queries.labels,
            class_count=test_queries.class_count,
            query_saliency=test_queries.saliency,
            targets=test_targets,
        )
        artifacts["metrics"] = str(run_dir / METRICS_FILE)
        artifacts["batch"] = str(run_dir / BATCH_SUBDIR)
        manifest.artifacts = artifacts
        manifest.status = "completed"
        manifest.save(run_dir)
        return result
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = str(exc)
        manifest.save(run_dir)
        raise


def cmd_explain(args) -> int:
    config = _load_config(args.config)
    approach = args.approach
    if approach not in nets.APPROACHES:
        raise ConfigError(f"unknown approach {approach!r}")

    dataset_dir = Path(args.dataset)
    dataset = load_dataset(dataset_dir)
    digest = report.dataset_hash(dataset_dir)
    target_class = args.target_class
    if not 0 <= target_class < dataset.class_count:
        raise ConfigError(
            f"target class {target_class} absent from dataset with "
            f"{dataset.class_count} classes"
        )

    classifier_dir = Path(args.classifier)
    classifier = nets.load_checkpoint(classifier_dir)
    norm_path = classifier_dir / NORM_FILE
    if not norm_path.is_file():
        raise ConfigError(f"classifier directory {classifier_dir} lacks {NORM_FILE}")
    record = Normalization.from_json(json.loads(norm_path.read_text()))

    clf_manifest_path = classifier_dir / report.MANIFEST_FILE
    clf_config = {}
    if clf_manifest_path.is_file():
        clf_manifest = report.RunManifest.load(classifier_dir)
        clf_config = clf_manifest.config
        if clf_manifest.dataset_hash != digest:
            _print("warning: dataset hash differs from the one the classifier was trained on")

    test_fraction = args.test_fraction
    if test_fraction is None:
        test_fraction = clf_config.get("test_fraction", 0.2)
    split_seed = args.split_seed
    if split_seed is None:
        split_seed = clf_config.get("split_seed", 0)

    train_ds, test_ds = split(dataset, float(test_fraction), int(split_seed))
    train_ds = apply_normalizer(train_ds, record)
    test_ds = apply_normalizer(test_ds, record)
    test_queries, test_targets = partition_by_target(test_ds, target_class)

    section = _section(config, "train")
    ics_section = _section(config, "ics")

    seeds = [args.seed + i for i in range(args.reps)]
    out = _out_dir(args, f"{approach}-t{target_class}")
    results = []
    for seed in seeds:
        run_dir = Path(out) / f"{approach}-t{target_class}-s{seed}"
        train_config = None
        ics_config = None
        if approach == "ics":
            ics_config = ICSConfig(
                n_steps=int(args.ics_steps if args.ics_steps is not None
                            else ics_section.get("n_steps", 100)),
                lambda_init=float(ics_section.get("lambda_init", 1.0)),
                max_lambda_steps=int(ics_section.get("max_lambda_steps", 10)),
                lambda_growth=float(ics_section.get("lambda_growth", 2.0)),
            )
        else:
            train_config = TrainConfig(
                epochs=int(args.epochs if args.epochs is not None
                           else section.get("epochs", 100)),
                batch_size=int(args.batch_size if args.batch_size is not None
                               else section.get("batch_size", 32)),
                optimizer=OptimizerConfig(
                    lr=float(section.get("lr", GAN_OPTIMIZER.lr)),
                    beta1=float(section.get("beta1", GAN_OPTIMIZER.beta1)),
                    beta2=float(section.get("beta2", GAN_OPTIMIZER.beta2)),
                ),
                seed=seed,
                target_class=target_class,
                approach=approach,
                loss_weights=_loss_weights(approach, args),
                sparsity_beta=float(args.sparsity_beta if args.sparsity_beta is not None
                                    else section.get("sparsity_beta", 10.0)),
            )
        result = run_explain_repetition(
            classifier, train_ds, test_queries, test_targets,
            approach, target_class, seed, run_dir,
            dataset_dir, digest,
            train_config=train_config, ics_config=ics_config,
        )
        results.append(result)
        auc_text = "-" if result.saliency_auc is None else f"{result.saliency_auc:.3f}"
        _print(
            f"{run_dir.name}: precision={result.precision:.4f} "
            f"similarity={result.similarity:.4f} sparsity={result.sparsity:.4f} "
            f"smoothness={result.smoothness:.4f} saliency_auc={auc_text}"
        )

    for metric in ("precision", "similarity", "sparsity", "smoothness"):
        values = np.array([getattr(r, metric) for r in results])
        _print(f"mean {metric}: {values.mean():.4f} +- {values.std():.4f}")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    table = report.aggregate_runs([Path(d) for d in args.runs])
    text = report.render_table(table)
    _print(text)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.txt").write_text(text + "\n")
        report.write_table_csv(table, out / "table.csv")
        _print(f"aggregate table written to {out}")
    return 0


# ---------------------------------------------------------------------------
# plot
# ---------------------------------------------------------------------------

def _load_batch_dir(run_dir: Path):
    batch_path = run_dir / BATCH_SUBDIR
    if not batch_path.is_dir():
        raise ConfigError(f"{run_dir} holds no saved counterfactual batch")
    return load_counterfactual_batch(batch_path)


def cmd_plot(args) -> int:
    run_dirs = [Path(d) for d in args.runs]
    out = _out_dir(args, f"plots-{args.kind}")
    out.mkdir(parents=True, exist_ok=True)

    if args.kind == "heatmap":
        batch, queries_ds = _load_batch_dir(run_dirs[0])
        idx = args.sample_index
        if not 0 <= idx < batch.n_samples:
            raise ConfigError(f"sample index {idx} outside [0, {batch.n_samples})")
        full_residual = np.zeros_like(batch.queries[idx])
        full_residual[:, batch.mutable_mask] = batch.residuals[idx]
        saliency = None if queries_ds.saliency is None else queries_ds.saliency[idx]
        outcome = plots.plot_heatmap(
            batch.queries[idx], full_residual, out / f"heatmap_{idx}", saliency=saliency
        )
    elif args.kind == "roc":
        curves_by_label: dict[str, list] = {}
        for run_dir in run_dirs:
            roc_path = run_dir / ROC_FILE
            if not roc_path.is_file():
                raise ConfigError(
                    f"{run_dir} has no saliency ROC (dataset without saliency masks?)"
                )
            rows = np.loadtxt(roc_path, delimiter=",", skiprows=1, ndmin=2)
            result = MetricsReport.load(run_dir / METRICS_FILE)
            curves_by_label.setdefault(result.approach, []).append((rows[:, 1], rows[:, 2]))
        outcome = plots.plot_roc(curves_by_label, out / "roc")
    elif args.kind == "embedding":
        batch, _ = _load_batch_dir(run_dirs[0])
        targets_path = run_dirs[0] / BATCH_SUBDIR / BATCH_DIR_TARGETS
        if not targets_path.is_dir():
            raise ConfigError(f"{run_dirs[0]} stored no target samples for the embedding")
        targets_ds = load_dataset(targets_path)
        cap = args.max_points
        groups = []
        stacks = []
        for name, data in (
            ("query", batch.queries),
            ("target", targets_ds.data),
            ("counterfactual", batch.counterfactuals),
        ):
            take = min(cap, data.shape[0])
            stacks.append(data[:take])
            groups.extend([name] * take)
        points = embed_2d(
            np.concatenate(stacks, axis=0),
            perplexity=args.perplexity,
            iterations=args.iterations,
            seed=args.seed,
        )
        outcome = plots.plot_embedding(points, groups, out / "embedding")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown plot kind {args.kind!r}")

    for path in outcome["images"]:
        _print(f"wrote {path}")
    _print(f"wrote {outcome['csv']}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="sparsecf", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synthesize", help="generate the synthetic benchmark dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=None)
    p.add_argument("--n-timesteps", dest="n_timesteps", type=int, default=None)
    p.add_argument("--n-features", dest="n_features", type=int, default=None)
    p.add_argument("--signal-shift", dest="signal_shift", type=float, default=None)
    p.add_argument("--background-process", dest="background_process", default=None,
                   choices=movingbox.BACKGROUND_PROCESSES)
    p.add_argument("--ar-coefficient", dest="ar_coefficient", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_synthesize)

    p = sub.add_parser("train-classifier", help="pretrain the sequence classifier")
    p.add_argument("--config", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--hidden-size", dest="hidden_size", type=int, default=None)
    p.add_argument("--augment-noise", dest="augment_noise", type=float, default=None,
                   help="gaussian training noise scale; keeps classifier gradients "
                        "on the class evidence (default 1.0)")
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=None)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=None)
    p.add_argument("--normalization", default=None, choices=("none", "minmax", "zscore"))
    p.set_defaults(handler=cmd_train_classifier)

    p = sub.add_parser("explain", help="train or search counterfactuals and evaluate them")
    p.add_argument("--config", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--approach", required=True, choices=nets.APPROACHES)
    p.add_argument("--target-class", dest="target_class", type=int, default=1)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--sparsity-beta", dest="sparsity_beta", type=float, default=None)
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=None)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=None)
    p.add_argument("--ics-steps", dest="ics_steps", type=int, default=None)
    for i in range(1, 6):
        p.add_argument(f"--lambda{i}", type=float, default=None)
    p.set_defaults(handler=cmd_explain)

    p = sub.add_parser("evaluate", help="aggregate metrics across run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("plot", help="emit heatmap, roc or embedding figures")
    p.add_argument("--kind", required=True, choices=("heatmap", "roc", "embedding"))
    p.add_argument("--run", dest="runs", action="append", required=True,
                   help="run directory; repeat for multiple runs")
    p.add_argument("--out", default=None)
    p.add_argument("--sample-index", dest="sample_index", type=int, default=0)
    p.add_argument("--perplexity", type=float, default=4.4)
    p.add_argument("--iterations", type=int, default=300)
    p.add_argument("--max-points", dest="max_points", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = getattr(args, "handler", None)
        if handler is None:
            parser.print_help()
            return 1
        return handler(args)
    except SystemExit as exc:  # --help and friends
        code = exc.code
        return 0 if code in (0, None) else int(code)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps failures to exit 2
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
