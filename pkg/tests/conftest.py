"""Shared fixtures: seeded generators, a tiny synthetic dataset and matching configs."""

from __future__ import annotations

import json
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from tass.gradcheck import toy_batch, toy_config
from tass.models import ScenarioSpec, TrainConfig
from tass.synthgen import generate_dataset

TINY_SCENARIO = {
    "K": 4,
    "d": 8,
    "h": 2,
    "w": 2,
    "T1": 3,
    "max_sources": 2,
    "n_train_videos": 8,
    "n_val_videos": 4,
    "questions_per_video": 2,
    "seed": 7,
}


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def scenario_file(tmp_path: Path) -> Path:
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(TINY_SCENARIO))
    return path


@pytest.fixture
def tiny_spec() -> ScenarioSpec:
    return ScenarioSpec.model_validate(TINY_SCENARIO)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory: pytest.TempPathFactory) -> Path:
    root = tmp_path_factory.mktemp("tiny_dataset")
    generate_dataset(ScenarioSpec.model_validate(TINY_SCENARIO), root)
    return root


def tiny_train_config(dataset: Path, **overrides: object) -> TrainConfig:
    raw = {
        "d": 8,
        "h": 2,
        "w": 2,
        "T": 3,
        "n_heads": 2,
        "batch_size": 8,
        "epochs": 2,
        "lr": 5e-3,
        "train_dir": str(dataset / "train"),
        "val_dir": str(dataset / "val"),
        **overrides,
    }
    return TrainConfig.model_validate(raw)


@pytest.fixture
def tiny_config(tiny_dataset: Path) -> TrainConfig:
    return tiny_train_config(tiny_dataset)


@pytest.fixture
def make_config(tiny_dataset: Path) -> Callable[..., TrainConfig]:
    """Tiny-dataset config with field overrides."""
    return lambda **overrides: tiny_train_config(tiny_dataset, **overrides)


@pytest.fixture
def tiny_config_file(tmp_path: Path, tiny_dataset: Path) -> Path:
    path = tmp_path / "train.json"
    path.write_text(json.dumps(tiny_train_config(tiny_dataset).model_dump(mode="json", by_alias=True)))
    return path


@pytest.fixture
def e2e_config() -> TrainConfig:
    return toy_config(seed=3)


@pytest.fixture
def e2e_batch(rng: np.random.Generator):
    return toy_batch(rng)
