from __future__ import annotations

import json

from typer.testing import CliRunner

from tass import __version__
from tass.cli import app
from tass.commands import load_train_config
from tass.featureio import load_manifest

runner = CliRunner()


def test_version():
    result = runner.invoke(app, ["version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_gen_data_and_preprocess(tmp_path, scenario_file, tiny_spec):
    result = runner.invoke(app, ["gen-data", "--spec", str(scenario_file), "--out", str(tmp_path / "data")])
    assert result.exit_code == 0, result.output
    assert load_manifest(tmp_path / "data" / "train").dims.t == tiny_spec.t1

    result = runner.invoke(
        app, ["preprocess", "--in", str(tmp_path / "data"), "--t2", "2", "--out", str(tmp_path / "pooled")]
    )
    assert result.exit_code == 0, result.output
    assert load_manifest(tmp_path / "pooled" / "train").dims.t == 2
    assert load_manifest(tmp_path / "pooled" / "val").dims.t == 2


def test_gen_data_seed_override(tmp_path, scenario_file):
    runner.invoke(app, ["gen-data", "--spec", str(scenario_file), "--out", str(tmp_path / "a"), "--seed", "1"])
    scenario = json.loads((tmp_path / "a" / "scenario.json").read_text())
    assert scenario["seed"] == 1


def test_train_then_eval(tmp_path, tiny_config_file):
    run = tmp_path / "run"
    result = runner.invoke(app, ["train", "--config", str(tiny_config_file), "--out", str(run)])
    assert result.exit_code == 0, result.output
    assert (run / "history.json").is_file()

    config = json.loads(tiny_config_file.read_text())
    result = runner.invoke(
        app,
        [
            "--log-level",
            "WARNING",
            "eval",
            "--checkpoint",
            str(run),
            "--data",
            config["val_dir"],
            "--dump-attention",
            str(tmp_path / "dump"),
            "--seed",
            "3",
            "--json",
        ],
    )
    assert result.exit_code == 0, result.output
    report = json.loads(result.output[result.output.index("{") :])
    assert 0.0 <= report["overall_accuracy"] <= 1.0
    assert report["n_samples"] == len(load_manifest(config["val_dir"]))
    assert (tmp_path / "dump" / "index.json").is_file()


def test_relative_dataset_paths_follow_the_config(tmp_path):
    path = tmp_path / "train.json"
    path.write_text(json.dumps({"d": 8, "h": 2, "w": 2, "T": 3, "n_heads": 2, "train_dir": "data/train"}))
    assert load_train_config(path).train_dir == tmp_path / "data" / "train"


def test_errors_exit_one_with_a_json_line(tmp_path):
    result = runner.invoke(app, ["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "run")])
    assert result.exit_code == 1
    assert '"error": "config_error"' in result.output


def test_eval_without_checkpoint(tmp_path):
    result = runner.invoke(app, ["eval", "--checkpoint", str(tmp_path), "--data", str(tmp_path)])
    assert result.exit_code == 1
    assert '"error": "checkpoint_error"' in result.output


def test_gradcheck_single_probe():
    result = runner.invoke(app, ["gradcheck", "--probe", "matmul", "--n-seeds", "1"])
    assert result.exit_code == 0, result.output


def test_gradcheck_unknown_probe():
    result = runner.invoke(app, ["gradcheck", "--probe", "bogus", "--n-seeds", "1"])
    assert result.exit_code == 1
    assert '"error": "config_error"' in result.output


def test_ablate(tmp_path, tiny_config_file):
    out = tmp_path / "ablation"
    result = runner.invoke(
        app, ["ablate", "--config", str(tiny_config_file), "--axes", "cms", "--seeds", "1", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert (out / "ablation.csv").is_file()
    assert "no_cms" in (out / "ablation_summary.csv").read_text()


def test_ablate_rejects_unknown_axis(tmp_path, tiny_config_file):
    result = runner.invoke(app, ["ablate", "--config", str(tiny_config_file), "--axes", "colour", "--out", str(tmp_path)])
    assert result.exit_code == 1
    assert '"error": "config_error"' in result.output
