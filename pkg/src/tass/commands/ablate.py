"""Ablation matrix behind ``ablate``.

Each axis contributes one-at-a-time variants of the base config; every
variant (and the unmodified ``full`` model) is trained once per seed. Rows
land in ``ablation.csv``; per-variant medians in ``ablation_summary.csv``.
"""

from __future__ import annotations

import csv
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from tass.errors import ConfigError
from tass.models import QuestionType, TrainConfig, validate_model
from tass.train import train

logger = logging.getLogger(__name__)

FULL = "full"

TAU_SWEEP = (0.0, 0.005, 0.02, 0.025, 0.03)

AXES: dict[str, list[tuple[str, dict[str, Any]]]] = {
    "target_aware": [("no_target_aware", {"ablation": {"no_target_aware": True}})],
    "match_loss": [("no_match_loss", {"ablation": {"no_match_loss": True}})],
    "cms": [("no_cms", {"ablation": {"no_cms": True}})],
    "spatial": [("no_spatial_grounding", {"ablation": {"no_spatial_grounding": True}})],
    "temporal": [("no_temporal_grounding", {"ablation": {"no_temporal_grounding": True}})],
    "stream": [("dual_stream", {"ablation": {"stream": "dual", "order": "ILVA"}})],
    "order": [(f"order_{o}", {"ablation": {"order": o}}) for o in ("ILAV", "CatVA", "CatAV")],
    "fusion": [(f"fusion_{m}", {"ablation": {"fusion": m}}) for m in ("mul", "max")],
    "tau": [(f"tau_{v:g}", {"tau": v}) for v in TAU_SWEEP],
}

DEFAULT_AXES = ["target_aware", "match_loss", "cms", "stream", "order"]


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in overrides.items():
        out[key] = _merge(out[key], value) if isinstance(value, dict) and isinstance(out.get(key), dict) else value
    return out


def variant_configs(base: TrainConfig, axes: list[str]) -> dict[str, TrainConfig]:
    """``full`` plus every variant of the requested axes, in axis order."""
    unknown = [a for a in axes if a not in AXES]
    if unknown:
        raise ConfigError(f"unknown ablation axis: {', '.join(unknown)}; known: {', '.join(AXES)}")
    raw = base.model_dump(mode="json", by_alias=True)
    variants = {FULL: base}
    for axis in axes:
        for name, overrides in AXES[axis]:
            variants[name] = validate_model(TrainConfig, _merge(raw, overrides))
    return variants


@dataclass
class AblationResult:
    rows: list[dict[str, Any]] = field(default_factory=list)
    summary: list[dict[str, Any]] = field(default_factory=list)
    csv_path: Path | None = None
    summary_path: Path | None = None


def ablate_impl(base: TrainConfig, axes: list[str], out_dir: Path, seeds: list[int]) -> AblationResult:
    variants = variant_configs(base, axes or DEFAULT_AXES)
    result = AblationResult()
    for name, config in variants.items():
        for seed in seeds:
            run = train(config.model_copy(update={"seed": seed}), out_dir / name / f"seed_{seed}")
            final = run.final
            report = final.val
            row: dict[str, Any] = {
                "variant": name,
                "seed": seed,
                "overall_accuracy": report.overall_accuracy if report else None,
                "train_loss": final.train_loss,
                "trainable_parameters": run.model.n_parameters,
            }
            for qtype in QuestionType:
                row[f"acc_{qtype.value}"] = report.per_type_accuracy.get(qtype.value) if report else None
            logger.info("ablation %s seed %d: accuracy %s", name, seed, row["overall_accuracy"])
            result.rows.append(row)

    for name in variants:
        accs = [r["overall_accuracy"] for r in result.rows if r["variant"] == name and r["overall_accuracy"] is not None]
        params = next(r["trainable_parameters"] for r in result.rows if r["variant"] == name)
        result.summary.append(
            {
                "variant": name,
                "runs": len(accs),
                "median_accuracy": statistics.median(accs) if accs else None,
                "trainable_parameters": params,
            }
        )

    out_dir.mkdir(parents=True, exist_ok=True)
    result.csv_path = _write_csv(out_dir / "ablation.csv", result.rows)
    result.summary_path = _write_csv(out_dir / "ablation_summary.csv", result.summary)
    return result


def _write_csv(path: Path, rows: list[dict[str, Any]]) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["variant"])
        writer.writeheader()
        writer.writerows(rows)
    return path
