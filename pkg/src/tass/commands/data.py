"""Dataset generation and preprocessing behind ``gen-data`` and ``preprocess``."""

from __future__ import annotations

import logging
from pathlib import Path

from tass.errors import ManifestError
from tass.featureio import MANIFEST_NAME, Manifest, load_manifest, preprocess_dataset
from tass.models import ScenarioSpec, load_json_model
from tass.synthgen import generate_dataset

logger = logging.getLogger(__name__)


def gen_data_impl(spec_path: Path | None, out_dir: Path, *, seed: int | None = None) -> dict[str, Manifest]:
    """Generate ``train/`` and ``val/`` splits from a scenario JSON (defaults when omitted)."""
    if spec_path is None:
        spec = ScenarioSpec() if seed is None else ScenarioSpec(seed=seed)
    else:
        spec = load_json_model(ScenarioSpec, spec_path, seed=seed)
    logger.info("generating K=%d d=%d %dx%d T1=%d seed=%d", spec.k, spec.d, spec.h, spec.w, spec.t1, spec.seed)
    return generate_dataset(spec, out_dir)


def dataset_dirs(root: Path) -> list[Path]:
    """The dataset directory itself, or each immediate subdirectory holding a manifest."""
    if (root / MANIFEST_NAME).is_file():
        return [root]
    found = sorted(p.parent for p in root.glob(f"*/{MANIFEST_NAME}"))
    if not found:
        raise ManifestError(f"no {MANIFEST_NAME} in {root} or its subdirectories")
    return found


def preprocess_impl(in_dir: Path, t2: int, out_dir: Path) -> dict[str, Manifest]:
    """Pool every dataset under ``in_dir`` with window ``t2``, mirroring the split layout."""
    results: dict[str, Manifest] = {}
    for src in dataset_dirs(in_dir):
        dest = out_dir if src == in_dir else out_dir / src.name
        results[src.name] = preprocess_dataset(load_manifest(src), t2, dest)
    return results
