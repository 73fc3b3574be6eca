"""Training loop, evaluation, attention dumps and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tass import numcore as nc
from tass.errors import CheckpointError, ConfigError, DivergenceError, TassError
from tass.featureio import Batch, Manifest, load_manifest, read_tensor_file, write_tensor_file
from tass.head import predict
from tass.jtg import diagnostic_weights
from tass.model import ForwardOutputs, TassModel
from tass.models import EpochReport, EvalReport, ManifestDims, TrainConfig, validate_model
from tass.optim import Adam
from tass.tsg import sample_match_pairs

logger = logging.getLogger(__name__)

DUMP_LIMIT = int(os.getenv("TASS_DUMP_LIMIT", "256"))

CHECKPOINT_FORMAT = 1
INDEX_NAME = "index.json"
HISTORY_NAME = "history.json"

_SHUFFLE_STREAM = 20
_PAIR_STREAM = 21
_EVAL_PAIR_STREAM = 22


@dataclass
class TrainResult:
    model: TassModel
    history: list[EpochReport]
    out_dir: Path

    @property
    def final(self) -> EpochReport:
        return self.history[-1]


def check_dims(config: TrainConfig, dims: ManifestDims, what: str = "dataset") -> None:
    expected = (config.d, config.h, config.w, config.t)
    found = (dims.d, dims.h, dims.w, dims.t)
    if expected != found:
        raise ConfigError(f"{what} has (d, h, w, T) = {found} but the config expects {expected}")


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


def evaluate(
    model: TassModel, manifest: Manifest, *, dump_dir: Path | str | None = None, seed: int | None = None
) -> EvalReport:
    """Accuracy per question type and mean loss components; deterministic for fixed parameters.

    ``seed`` replaces the config seed for drawing match pairs; accuracy does not depend on it.
    """
    cfg = model.config
    check_dims(cfg, manifest.dims)
    if len(manifest.answers) != model.head.n_answers:
        raise ConfigError(f"answer head has {model.head.n_answers} classes, dataset has {len(manifest.answers)}")

    started = time.perf_counter()
    pair_rng = np.random.default_rng([cfg.seed if seed is None else seed, _EVAL_PAIR_STREAM])
    correct: dict[str, int] = defaultdict(int)
    counts: dict[str, int] = defaultdict(int)
    sums = {"qa": 0.0, "cms": 0.0, "match": 0.0, "total": 0.0}
    diag: list[np.ndarray] = []
    dumped: list[dict[str, object]] = []
    n = len(manifest)

    with nc.no_tape():
        for lo in range(0, n, cfg.batch_size):
            batch = manifest.load_batch(range(lo, min(lo + cfg.batch_size, n)))
            pairs = None
            if model.tsg.match is not None and cfg.lambda_match > 0:
                pairs = sample_match_pairs(batch.video_ids, cfg.t, pair_rng)
            out = model.forward(batch, pairs)
            hits = predict(out.logits) == batch.answers
            for qtype, hit in zip(batch.question_types, hits, strict=True):
                counts[qtype.value] += 1
                correct[qtype.value] += int(hit)
            size = len(batch)
            sums["qa"] += out.losses.qa * size
            sums["cms"] += out.losses.cms * size
            sums["match"] += out.losses.match * size
            sums["total"] += out.losses.total.item() * size
            if out.attention is not None:
                diag.append(diagnostic_weights(nc.Tensor(batch.question), out.h_a, out.h_v)[2])
            if dump_dir is not None and len(dumped) < DUMP_LIMIT:
                dumped.extend(_dump_batch(Path(dump_dir), batch, out, DUMP_LIMIT - len(dumped)))

    if dump_dir is not None:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)
        (Path(dump_dir) / INDEX_NAME).write_text(json.dumps(dumped, indent=1))

    per_type = {k: correct[k] / counts[k] for k in counts}
    return EvalReport(
        per_type_accuracy=per_type,
        per_type_count=dict(counts),
        overall_accuracy=sum(correct.values()) / n if n else 0.0,
        n_samples=n,
        loss_qa=sums["qa"] / n if n else 0.0,
        loss_cms=sums["cms"] / n if n else 0.0,
        loss_match=sums["match"] / n if n else 0.0,
        loss_total=sums["total"] / n if n else 0.0,
        diagnostic_js=float(np.concatenate(diag).mean()) if diag else None,
        trainable_parameters=model.n_parameters,
        wall_time_s=time.perf_counter() - started,
    )


def _dump_batch(root: Path, batch: Batch, out: ForwardOutputs, limit: int) -> list[dict[str, object]]:
    """Write the attention maps of up to ``limit`` samples as tensor files."""
    g, att = out.grounding, out.attention
    preds = predict(out.logits)
    t = batch.visual.shape[1]
    entries = []
    for i in range(min(limit, len(batch))):
        sample_dir = root / batch.sample_ids[i]
        maps = {"spatial_weights": g.weights, "s_a": g.s_a, "s_q": g.s_q, "s_q_gated": g.s_q_gated, "f_vt": g.f_vt}
        if att is not None:
            maps.update({"w_av": att.w_av, "w_a": att.w_a, "w_v": att.w_v})
        written = []
        for name, tensor in maps.items():
            if tensor is None:
                continue
            values = tensor.data[i]
            if values.ndim == 3:
                values = values.reshape(t, -1)
            write_tensor_file(values, sample_dir / f"{name}.tass")
            written.append(name)
        entries.append(
            {
                "sample_id": batch.sample_ids[i],
                "video_id": batch.video_ids[i],
                "question_type": batch.question_types[i].value,
                "answer": int(batch.answers[i]),
                "predicted": int(preds[i]),
                "maps": written,
            }
        )
    return entries


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(model: TassModel, answers: list[str], path: Path | str, *, epoch: int) -> Path:
    """One tensor file per parameter plus a JSON index."""
    path = Path(path)
    files: dict[str, str] = {}
    for name, p in model.named_parameters():
        files[name] = f"{name}.tass"
        write_tensor_file(p, path / files[name])
    index = {
        "format_version": CHECKPOINT_FORMAT,
        "epoch": epoch,
        "answers": answers,
        "config": model.config.model_dump(mode="json", by_alias=True),
        "parameters": files,
    }
    (path / INDEX_NAME).write_text(json.dumps(index, indent=2))
    return path


def resolve_checkpoint(path: Path | str) -> Path:
    """Accept an epoch directory, its index file, a run directory or its ``checkpoints/`` folder."""
    path = Path(path)
    if path.is_file():
        return path.parent
    if (path / INDEX_NAME).is_file():
        return path
    for root in (path / "checkpoints", path):
        epochs = sorted(root.glob("epoch_*")) if root.is_dir() else []
        if epochs:
            return epochs[-1]
    raise CheckpointError(f"no checkpoint found at {path}")


def load_checkpoint(path: Path | str) -> tuple[TassModel, list[str]]:
    ckpt = resolve_checkpoint(path)
    try:
        index = json.loads((ckpt / INDEX_NAME).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint index in {ckpt}: {e}") from e
    if index.get("format_version") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {index.get('format_version')!r}")
    try:
        config = validate_model(TrainConfig, index["config"])
        answers = list(index["answers"])
        files: dict[str, str] = index["parameters"]
    except (KeyError, ConfigError) as e:
        raise CheckpointError(f"malformed checkpoint index in {ckpt}: {e}") from e

    model = TassModel.init(config, len(answers))
    expected = set()
    for name, p in model.named_parameters():
        expected.add(name)
        if name not in files:
            raise CheckpointError(f"checkpoint {ckpt} lacks parameter {name}")
        try:
            stored = read_tensor_file(ckpt / files[name])
        except (OSError, TassError) as e:
            raise CheckpointError(f"cannot read parameter {name}: {e}") from e
        if stored.shape != p.shape:
            raise CheckpointError(f"parameter {name} has shape {stored.shape}, model expects {p.shape}")
        p.data = stored.data
    extra = set(files) - expected
    if extra:
        raise CheckpointError(f"checkpoint holds parameters the config does not build: {sorted(extra)}")
    return model, answers


def evaluate_checkpoint(
    checkpoint: Path | str, data: Path | str, *, dump_dir: Path | str | None = None, seed: int | None = None
) -> EvalReport:
    model, answers = load_checkpoint(checkpoint)
    manifest = load_manifest(data)
    try:
        check_dims(model.config, manifest.dims)
    except ConfigError as e:
        raise CheckpointError(f"checkpoint incompatible with dataset: {e}") from e
    if answers != manifest.answers:
        raise CheckpointError("checkpoint answer vocabulary differs from the dataset's")
    return evaluate(model, manifest, dump_dir=dump_dir, seed=seed)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def _load_splits(config: TrainConfig) -> tuple[Manifest, Manifest | None]:
    if config.train_dir is None:
        raise ConfigError("train_dir is not set")
    train_set = load_manifest(config.train_dir)
    check_dims(config, train_set.dims, "training set")
    if len(train_set) == 0:
        raise ConfigError("training set holds no samples")
    val_set = None
    if config.val_dir is not None:
        val_set = load_manifest(config.val_dir)
        check_dims(config, val_set.dims, "validation set")
        if val_set.answers != train_set.answers:
            raise ConfigError("training and validation answer vocabularies differ")
    return train_set, val_set


def train(config: TrainConfig, out_dir: Path | str) -> TrainResult:
    """Train with Adam, checkpointing and evaluating after every epoch.

    Epoch 0 is the untrained model. Every random draw comes from child
    generators of ``config.seed``, so a fixed seed reproduces the loss
    trajectory bit for bit.
    """
    out_dir = Path(out_dir)
    train_set, val_set = _load_splits(config)
    model = TassModel.init(config, len(train_set.answers))
    optimizer = Adam(model.parameters())
    use_match = model.tsg.match is not None and config.lambda_match > 0
    logger.info("model has %d trainable parameters", model.n_parameters)

    initial = evaluate(model, train_set)
    history = [
        EpochReport(
            epoch=0,
            lr=config.lr_at(0),
            train_loss=initial.loss_total,
            train_loss_qa=initial.loss_qa,
            train_loss_cms=initial.loss_cms,
            train_loss_match=initial.loss_match,
            val=evaluate(model, val_set) if val_set is not None else None,
        )
    ]
    save_checkpoint(model, train_set.answers, out_dir / "checkpoints" / "epoch_000", epoch=0)
    _write_history(out_dir, history)

    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_at(epoch - 1)
        order = np.random.default_rng([config.seed, _SHUFFLE_STREAM, epoch]).permutation(n)
        pair_rng = np.random.default_rng([config.seed, _PAIR_STREAM, epoch])
        sums = {"total": 0.0, "qa": 0.0, "cms": 0.0, "match": 0.0}
        for batch_id, lo in enumerate(range(0, n, config.batch_size)):
            batch = train_set.load_batch(order[lo : lo + config.batch_size])
            pairs = sample_match_pairs(batch.video_ids, config.t, pair_rng) if use_match else None
            with nc.Tape() as tape:
                out = model.forward(batch, pairs)
            value = out.losses.total.item()
            if not math.isfinite(value):
                raise DivergenceError(batch_id, epoch, value)
            optimizer.zero_grad()
            nc.backward(out.losses.total, tape)
            optimizer.step(lr)
            size = len(batch)
            sums["total"] += value * size
            sums["qa"] += out.losses.qa * size
            sums["cms"] += out.losses.cms * size
            sums["match"] += out.losses.match * size

        report = EpochReport(
            epoch=epoch,
            lr=lr,
            train_loss=sums["total"] / n,
            train_loss_qa=sums["qa"] / n,
            train_loss_cms=sums["cms"] / n,
            train_loss_match=sums["match"] / n,
            val=evaluate(model, val_set) if val_set is not None else None,
        )
        history.append(report)
        logger.info(
            "epoch %d/%d lr=%.2g loss=%.4f (qa %.4f, cms %.4f, match %.4f) val_acc=%s",
            epoch,
            config.epochs,
            lr,
            report.train_loss,
            report.train_loss_qa,
            report.train_loss_cms,
            report.train_loss_match,
            f"{report.val.overall_accuracy:.3f}" if report.val else "n/a",
        )
        save_checkpoint(model, train_set.answers, out_dir / "checkpoints" / f"epoch_{epoch:03d}", epoch=epoch)
        _write_history(out_dir, history)

    return TrainResult(model, history, out_dir)


def _write_history(out_dir: Path, history: list[EpochReport]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / HISTORY_NAME).write_text(json.dumps([r.model_dump(mode="json") for r in history], indent=2))
