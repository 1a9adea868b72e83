import numpy as np
import pytest
import torch

from sparsecf.dataset import split
from sparsecf.movingbox import MovingBoxConfig, generate
from sparsecf.training import CLASSIFIER_OPTIMIZER, TrainConfig, pretrain_classifier

torch.set_num_threads(2)


def tiny_config(**overrides):
    defaults = dict(
        n_samples=80,
        n_timesteps=10,
        n_features=8,
        box_time_range=(3, 5),
        box_feature_range=(3, 5),
        signal_shift=3.0,
        seed=42,
    )
    defaults.update(overrides)
    return MovingBoxConfig(**defaults)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small, strongly-separated benchmark for fast training tests."""
    return generate(tiny_config())


@pytest.fixture(scope="session")
def tiny_splits(tiny_dataset):
    return split(tiny_dataset, 0.25, seed=0)


@pytest.fixture(scope="session")
def tiny_classifier(tiny_splits):
    train, test = tiny_splits
    config = TrainConfig(
        epochs=40, batch_size=16, optimizer=CLASSIFIER_OPTIMIZER, seed=1,
        target_class=1, approach="sparce",
    )
    model, accuracy = pretrain_classifier(train, test, config, hidden_size=16)
    return model, accuracy


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
