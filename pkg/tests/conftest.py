"""Shared fixtures for the dpstyler test suite.

The end-to-end configuration (backend seed, noise level, style strength,
dataset confusion) was frozen after pilot calibration runs; the trained
ensemble is session-scoped because several suites assert against it.
"""
from __future__ import annotations

import numpy as np
import pytest

from dpstyler.backends import ToyBackend, ToyBackendSpec
from dpstyler.config import DEFAULT_TEMPLATES
from dpstyler.core import PromptTemplate, TaskDefinition
from dpstyler.styles import StyleGenConfig
from dpstyler.toydata import make_toy_dataset
from dpstyler.trainer import TrainConfig, train_one_model

E2E_CLASS_NAMES = ("dog", "elephant", "giraffe", "guitar", "horse")
E2E_BACKEND_SPEC = ToyBackendSpec(
    dim_joint=64,
    dim_token=32,
    seed=11,
    noise_level=0.3,
    style_strength=3.0,
)
E2E_TRAIN_SEED = 123
E2E_NUM_STYLES = 8
E2E_EPOCHS = 100
E2E_DATASET = dict(images_per_domain=50, seed=11, confusion=2.0, content_strength=0.9)


def e2e_train_config(seed: int = E2E_TRAIN_SEED, epochs: int = E2E_EPOCHS) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        style_gen=StyleGenConfig(
            num_styles=E2E_NUM_STYLES, strategy="random_mix", seed=seed
        ),
        seed=seed,
    )


@pytest.fixture(scope="session")
def task() -> TaskDefinition:
    return TaskDefinition(E2E_CLASS_NAMES)


@pytest.fixture(scope="session")
def templates() -> tuple[PromptTemplate, ...]:
    return tuple(PromptTemplate.from_pattern(p) for p in DEFAULT_TEMPLATES)


@pytest.fixture(scope="session")
def e2e_backend(task) -> ToyBackend:
    return ToyBackend(E2E_BACKEND_SPEC, task.class_names)


@pytest.fixture(scope="session")
def trained_models(task, templates, e2e_backend):
    """One trained model per default template, with wall time per model."""
    results = []
    for template in templates:
        results.append(train_one_model(task, e2e_backend, template, e2e_train_config()))
    return results


@pytest.fixture(scope="session")
def toy_dataset_root(tmp_path_factory, task, e2e_backend):
    root = tmp_path_factory.mktemp("toyset")
    make_toy_dataset(root, task, e2e_backend, **E2E_DATASET)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(0)
