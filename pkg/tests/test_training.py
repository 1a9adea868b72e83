import copy

import numpy as np
import pytest
import torch

from sparsecf.dataset import partition_by_target
from sparsecf.losses import LossWeights
from sparsecf.nets import build_counterfactual_head, ResidualGenerator
from sparsecf.training import (
    CounterfactualBatch,
    ICSConfig,
    OptimizerConfig,
    TrainConfig,
    generate_counterfactuals,
    ics_search,
    load_counterfactual_batch,
    make_batch,
    pretrain_classifier,
    save_counterfactual_batch,
    train_counterfactual_gan,
)


def gan_config(approach, seed=0, epochs=1, **overrides):
    return TrainConfig(
        epochs=epochs, batch_size=16, seed=seed, target_class=1,
        approach=approach, **overrides,
    )


class TestConfigs:
    def test_train_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(approach="nearest-neighbor")
        with pytest.raises(ValueError):
            OptimizerConfig(lr=0.0)

    def test_loss_weight_defaults_follow_approach(self):
        assert TrainConfig(approach="gan").loss_weights == LossWeights(1, 1, 1, 0, 0)
        assert TrainConfig(approach="sparce").loss_weights == LossWeights(1, 1, 1, 1, 1)
        custom = LossWeights(1, 1, 1, 0.5, 0)
        assert TrainConfig(approach="sparce", loss_weights=custom).loss_weights == custom

    def test_ics_schedule_divisibility(self):
        ICSConfig(n_steps=100, max_lambda_steps=10)
        with pytest.raises(ValueError, match="divisible"):
            ICSConfig(n_steps=105, max_lambda_steps=10)

    def test_ics_defaults_match_search_settings(self):
        config = ICSConfig()
        assert config.n_steps == 100
        assert config.lambda_init == 1.0
        assert config.max_lambda_steps == 10
        assert config.optimizer.lr == pytest.approx(0.4)
        assert config.optimizer.beta1 == pytest.approx(0.9)


class TestCounterfactualBatch:
    def test_invariant_enforced(self, rng):
        q = rng.standard_normal((3, 4, 5)).astype(np.float32)
        delta = rng.standard_normal((3, 4, 5)).astype(np.float32)
        mask = np.ones(5, bool)
        probs = np.tile([0.3, 0.7], (3, 1)).astype(np.float32)
        CounterfactualBatch(q, delta, q + delta, 1, probs, mask)
        with pytest.raises(ValueError, match="residuals"):
            CounterfactualBatch(q, delta, q + delta + 1e-3, 1, probs, mask)

    def test_save_load_round_trip(self, tmp_path, rng, tiny_classifier):
        classifier, _ = tiny_classifier
        q = rng.standard_normal((4, 10, 8)).astype(np.float32)
        delta = rng.standard_normal((4, 10, 8)).astype(np.float32)
        batch = make_batch(q, delta, np.ones(8, bool), 1, classifier)
        labels = np.zeros(4, dtype=np.int32)
        save_counterfactual_batch(batch, tmp_path, labels, class_count=2)
        loaded, queries_ds = load_counterfactual_batch(tmp_path)
        assert np.array_equal(loaded.queries, batch.queries)
        assert np.array_equal(loaded.residuals, batch.residuals)
        assert np.array_equal(loaded.counterfactuals, batch.counterfactuals)
        assert np.array_equal(loaded.classifier_probs, batch.classifier_probs)
        assert np.array_equal(queries_ds.labels, labels)


class TestPretrainClassifier:
    def test_learns_separated_data(self, tiny_classifier):
        _, accuracy = tiny_classifier
        assert accuracy >= 0.9

    def test_deterministic_weights(self, tiny_splits):
        train, test = tiny_splits
        config = TrainConfig(epochs=2, batch_size=16, seed=5, approach="sparce")
        model_a, acc_a = pretrain_classifier(train, test, config, hidden_size=8)
        model_b, acc_b = pretrain_classifier(train, test, config, hidden_size=8)
        assert acc_a == acc_b
        for pa, pb in zip(model_a.parameters(), model_b.parameters()):
            assert torch.equal(pa, pb)

    def test_persists_checkpoint(self, tiny_splits, tmp_path):
        from sparsecf.nets import load_checkpoint

        train, test = tiny_splits
        config = TrainConfig(epochs=1, batch_size=16, seed=2, approach="sparce")
        model, _ = pretrain_classifier(train, test, config, hidden_size=8,
                                       out_dir=tmp_path)
        loaded = load_checkpoint(tmp_path)
        x = torch.from_numpy(test.data[:4])
        assert torch.equal(model(x), loaded(x))


class TestAdversarialTraining:
    @pytest.mark.parametrize("approach", ["gan", "countergan", "sparce"])
    def test_runs_and_logs(self, tiny_splits, tiny_classifier, approach, tmp_path):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        generator, discriminator, log = train_counterfactual_gan(
            classifier, train, gan_config(approach), out_dir=tmp_path,
        )
        assert len(log) == 1
        expected_keys = {"epoch", "step", "adv", "cls", "sim", "sparse", "jerk",
                         "total", "d_loss", "d_acc"}
        assert expected_keys <= set(log[0])
        assert (tmp_path / "train_log.jsonl").is_file()
        assert (tmp_path / "generator" / "arch.json").is_file()
        assert (tmp_path / "discriminator" / "weights.pt").is_file()

    def test_classifier_frozen(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        before = copy.deepcopy(classifier.state_dict())
        train_counterfactual_gan(classifier, train, gan_config("sparce", seed=3))
        after = classifier.state_dict()
        assert before.keys() == after.keys()
        for key in before:
            assert torch.equal(before[key], after[key])

    def test_rejects_ics(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        with pytest.raises(ValueError, match="ics"):
            train_counterfactual_gan(classifier, train, gan_config("ics"))

    def test_deterministic_training(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        gen_a, _, log_a = train_counterfactual_gan(classifier, train,
                                                   gan_config("sparce", seed=9))
        gen_b, _, log_b = train_counterfactual_gan(classifier, train,
                                                   gan_config("sparce", seed=9))
        assert log_a == log_b
        for pa, pb in zip(gen_a.parameters(), gen_b.parameters()):
            assert torch.equal(pa, pb)


class TestGenerateCounterfactuals:
    def test_zero_weight_sparce_head_is_identity(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        spec = build_counterfactual_head("sparce", train.n_features, train.n_features)
        generator = ResidualGenerator(spec)
        with torch.no_grad():
            for param in generator.parameters():
                param.zero_()
        batch = generate_counterfactuals(
            generator, classifier, train.data[:5], train.mutable_mask, target_class=1,
        )
        assert np.all(batch.residuals == 0.0)
        assert np.array_equal(batch.counterfactuals, batch.queries)

    def test_deterministic(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        torch.manual_seed(0)
        spec = build_counterfactual_head("sparce", train.n_features, train.n_features)
        generator = ResidualGenerator(spec)
        a = generate_counterfactuals(generator, classifier, train.data[:6],
                                     train.mutable_mask, 1)
        b = generate_counterfactuals(generator, classifier, train.data[:6],
                                     train.mutable_mask, 1)
        assert np.array_equal(a.residuals, b.residuals)
        assert np.array_equal(a.classifier_probs, b.classifier_probs)

    def test_gan_head_reports_difference_residuals(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        torch.manual_seed(1)
        spec = build_counterfactual_head("gan", train.n_features, train.n_features)
        generator = ResidualGenerator(spec)
        batch = generate_counterfactuals(generator, classifier, train.data[:5],
                                         train.mutable_mask, 1)
        # the head output is the counterfactual itself, tanh-bounded
        assert np.all(np.abs(batch.counterfactuals) <= 1.0)
        assert np.allclose(batch.counterfactuals, batch.queries + batch.residuals,
                           atol=1e-6)

    def test_mask_mismatch_rejected(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        spec = build_counterfactual_head("sparce", train.n_features, 3)
        generator = ResidualGenerator(spec)
        with pytest.raises(ValueError, match="mutable"):
            generate_counterfactuals(generator, classifier, train.data[:4],
                                     train.mutable_mask, 1)

    def test_immutable_features_bit_exact(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        mask = train.mutable_mask.copy()
        mask[1] = False
        mask[4] = False
        torch.manual_seed(2)
        spec = build_counterfactual_head("countergan", train.n_features, int(mask.sum()))
        generator = ResidualGenerator(spec)
        batch = generate_counterfactuals(generator, classifier, train.data[:6], mask, 1)
        assert batch.counterfactuals[..., ~mask].tobytes() == \
            batch.queries[..., ~mask].tobytes()


class TestIcsSearch:
    def test_zero_steps_returns_uniform_init(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        queries = train.data[:5]
        config = ICSConfig(n_steps=0, max_lambda_steps=1)
        batch = ics_search(classifier, queries, 1, config, train.mutable_mask, seed=0)
        lo = queries.reshape(5, -1).min(axis=1)
        hi = queries.reshape(5, -1).max(axis=1)
        cf = batch.counterfactuals.reshape(5, -1)
        assert np.all(cf >= lo[:, None] - 1e-6)
        assert np.all(cf <= hi[:, None] + 1e-6)
        # random init leaves essentially every cell modified
        from sparsecf.metrics import sparsity_metric

        assert sparsity_metric(batch.queries, batch.counterfactuals,
                               train.mutable_mask) > 0.99

    def test_deterministic_for_seed(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        config = ICSConfig(n_steps=10, max_lambda_steps=5)
        a = ics_search(classifier, train.data[:4], 1, config, train.mutable_mask, seed=3)
        b = ics_search(classifier, train.data[:4], 1, config, train.mutable_mask, seed=3)
        assert np.array_equal(a.counterfactuals, b.counterfactuals)

    def test_immutables_clamped(self, tiny_splits, tiny_classifier):
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        mask = train.mutable_mask.copy()
        mask[0] = False
        mask[5] = False
        config = ICSConfig(n_steps=10, max_lambda_steps=5)
        batch = ics_search(classifier, train.data[:4], 1, config, mask, seed=1)
        assert batch.counterfactuals[..., ~mask].tobytes() == \
            batch.queries[..., ~mask].tobytes()

    def test_lambda_growth_moves_prediction(self, tiny_splits, tiny_classifier):
        # with the full schedule the mean target probability should rise
        train, _ = tiny_splits
        classifier, _ = tiny_classifier
        queries_ds, _ = partition_by_target(train, 1)
        queries = queries_ds.data[:8]
        init = ics_search(classifier, queries, 1,
                          ICSConfig(n_steps=0, max_lambda_steps=1),
                          train.mutable_mask, seed=2)
        searched = ics_search(classifier, queries, 1, ICSConfig(n_steps=50),
                              train.mutable_mask, seed=2)
        assert searched.classifier_probs[:, 1].mean() >= \
            init.classifier_probs[:, 1].mean() - 0.05
