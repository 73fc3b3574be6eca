"""Training and evaluation behind ``train`` and ``eval``."""

from __future__ import annotations

from pathlib import Path

from tass.models import EvalReport, TrainConfig, load_json_model
from tass.train import TrainResult, evaluate_checkpoint, train


def load_train_config(config_path: Path, *, seed: int | None = None) -> TrainConfig:
    """Read a training config; relative dataset paths resolve against the config's directory."""
    config = load_json_model(TrainConfig, config_path, seed=seed)
    base = Path(config_path).parent
    updates = {}
    for field in ("train_dir", "val_dir"):
        value = getattr(config, field)
        if value is not None and not value.is_absolute():
            updates[field] = base / value
    return config.model_copy(update=updates) if updates else config


def train_impl(config_path: Path, out_dir: Path, *, seed: int | None = None) -> TrainResult:
    return train(load_train_config(config_path, seed=seed), out_dir)


def eval_impl(checkpoint: Path, data: Path, *, dump_dir: Path | None = None, seed: int | None = None) -> EvalReport:
    return evaluate_checkpoint(checkpoint, data, dump_dir=dump_dir, seed=seed)
