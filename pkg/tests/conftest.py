import json
import os

import numpy as np
import pytest

from FEATnorm.adv_trainer import BASELINE, TrainConfig
from FEATnorm.data_synth import SynthSpec, generate, split_speaker_independent
from FEATnorm.eval_harness import ModelSpec
from FEATnorm.nn_core import init_mlp


DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture
def data_dir():
    return DATA_DIR


@pytest.fixture
def small_spec():
    return SynthSpec(
        n_speakers=10,
        n_emotions=4,
        feature_dim=6,
        samples_per_speaker=24,
        speaker_scale=2.0,
        emotion_scale=3.0,
        noise_std=0.5,
        seed=3,
    )


@pytest.fixture
def small_data(small_spec):
    return generate(small_spec)


@pytest.fixture
def small_split(small_data):
    return split_speaker_independent(small_data, k_folds=5, validation_fraction=0.1, seed=1)[0]


@pytest.fixture
def model_spec():
    return ModelSpec(upstream_dims=(8, 5))


@pytest.fixture
def fast_config():
    return TrainConfig(eta=0.1, lam=0.01, epochs=3, batch_size=16, seed=5)


@pytest.fixture
def baseline_config(fast_config):
    return fast_config.replace(strategy=BASELINE)


@pytest.fixture
def tanh_net():
    return init_mlp([4, 6, 3], ["tanh", "identity"], seed=11, tag="test")


@pytest.fixture
def batch():
    gen = np.random.default_rng(7)
    return gen.normal(size=(5, 4)), gen.integers(0, 3, size=5)


@pytest.fixture
def run_config(tmp_path):

    """
    writes a small experiment config and returns its path
    """

    config = {
        "global": {"out": str(tmp_path / "run")},
        "data": {"feature_dim": 6, "samples_per_speaker": 24, "emotion_scale": 3.0, "noise_std": 0.5},
        "model": {"upstream_dims": [8, 5]},
        "train": {"epochs": 2, "batch_size": 16, "eta": 0.1},
        "eval": {"sizes": [1, 2, 4], "repeats": 2},
        "probe": {"epochs": 3, "batch_size": 16},
        "sweep": {"lambdas": [0.01, 0.001]},
        "gradcheck": {"n_models": 3, "max_params": 400},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return str(path)
