from __future__ import annotations

import json

import pytest
from pydantic import ValidationError

from tass.errors import ConfigError
from tass.models import (
    AblationFlags,
    EvalReport,
    Order,
    ScenarioSpec,
    Stream,
    TrainConfig,
    load_json_model,
)


def test_train_config_aliases():
    config = TrainConfig.model_validate({"lambda": 0.25, "T": 4, "d": 8, "n_heads": 2})
    assert config.lambda_match == 0.25
    assert config.t == 4
    dumped = config.model_dump(by_alias=True)
    assert dumped["lambda"] == 0.25
    assert dumped["T"] == 4


def test_heads_must_divide_width():
    with pytest.raises(ValidationError, match="divisible"):
        TrainConfig(d=10, n_heads=4)


def test_learning_rate_schedule():
    config = TrainConfig(lr=1e-3)
    assert config.lr_at(0) == 1e-3
    assert config.lr_at(11) == 1e-3
    assert config.lr_at(12) == pytest.approx(1e-4)
    assert config.lr_at(24) == pytest.approx(1e-5)


def test_full_scale_preset():
    config = TrainConfig.full_scale(epochs=1)
    assert (config.d, config.n_heads, config.epochs) == (512, 8, 1)


def test_dual_stream_takes_no_order():
    with pytest.raises(ValidationError, match="dual-stream"):
        AblationFlags(stream=Stream.DUAL, order=Order.CATAV)
    flags = AblationFlags(stream=Stream.DUAL)
    assert AblationFlags.model_validate(flags.model_dump()) == flags


def test_scenario_mix_must_sum_to_one():
    with pytest.raises(ValidationError, match="sum to 1"):
        ScenarioSpec(question_mix={"existential": 0.5, "counting": 0.4})
    with pytest.raises(ValidationError, match="max_sources"):
        ScenarioSpec(K=2, max_sources=3)


def test_eval_report_overall_must_match_per_type():
    EvalReport(per_type_accuracy={"a": 1.0, "b": 0.0}, per_type_count={"a": 1, "b": 3}, overall_accuracy=0.25, n_samples=4)
    with pytest.raises(ValidationError):
        EvalReport(per_type_accuracy={"a": 1.0}, per_type_count={"a": 2}, overall_accuracy=0.5, n_samples=2)
    with pytest.raises(ValidationError):
        EvalReport(per_type_accuracy={"a": 1.5}, per_type_count={"a": 1}, overall_accuracy=1.5, n_samples=1)


def test_load_json_model_wraps_problems(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_json_model(TrainConfig, tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"d": 10, "n_heads": 4}))
    with pytest.raises(ConfigError, match="TrainConfig"):
        load_json_model(TrainConfig, bad)
    listing = tmp_path / "list.json"
    listing.write_text("[]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_json_model(TrainConfig, listing)


def test_load_json_model_applies_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 1}))
    assert load_json_model(TrainConfig, path, seed=9).seed == 9
    assert load_json_model(TrainConfig, path, seed=None).seed == 1
