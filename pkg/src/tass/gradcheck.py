"""Finite-difference probes for every differentiable building block.

Each probe builds a small random instance from a seeded generator, reduces
it to a scalar with a random readout and compares ``backward`` against
central differences for each input and parameter tensor.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Sequence

import numpy as np

from tass import numcore as nc
from tass.errors import ConfigError
from tass.featureio import Batch
from tass.head import HeadParams, answer_logits
from tass.jtg import JtgParams, cms_loss, interleave, question_guided_attention, temporal_encode
from tass.layers import LSTM
from tass.model import TassModel
from tass.models import AblationFlags, FusionMode, QuestionType, TrainConfig
from tass.numcore import GradCheckReport, Tensor, finite_diff_check
from tass.tsg import TsgParams, match_loss, region_attention, sample_match_pairs, target_aware_visual, threshold_gate

logger = logging.getLogger(__name__)

Probe = Callable[[np.random.Generator, float], list[GradCheckReport]]

# End-to-end instance size.
E2E_D, E2E_T, E2E_H, E2E_W, E2E_HEADS, E2E_ANSWERS = 4, 2, 2, 2, 2, 5


def _t(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _readout(x: Tensor, r: np.ndarray) -> Tensor:
    return nc.sum_all(nc.mul(x, Tensor(r)))


def _check_all(
    f: Callable[[], Tensor], tensors: Iterable[tuple[str, Tensor]], tol: float, probe: str
) -> list[GradCheckReport]:
    return [finite_diff_check(lambda _x: f(), x, tolerance=tol, label=f"{probe}:{name}") for name, x in tensors]


def probe_matmul(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    a, b = _t(rng, 3, 3), _t(rng, 3, 3)
    return _check_all(lambda: nc.sum_all(nc.tanh(nc.matmul(a, b))), [("a", a), ("b", b)], tol, "matmul")


def probe_softmax(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    x, r = _t(rng, 2, 5), rng.standard_normal((2, 5))
    return _check_all(lambda: _readout(nc.softmax_lastdim(x), r), [("x", x)], tol, "softmax")


def probe_elementwise(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    a, b = _t(rng, 2, 3), _t(rng, 2, 3)
    r = rng.standard_normal((2, 3))

    def f() -> Tensor:
        z = nc.add(nc.mul(nc.tanh(a), nc.sigmoid(b)), nc.sub(nc.scalar_scale(a, 0.3), b))
        z = nc.add(z, nc.maximum(a, b))
        wide = nc.concat_lastdim(z, nc.scalar_scale(nc.transpose(nc.reshape(a, (3, 2))), 2.0))
        pooled = nc.mean_axis(nc.take(wide, [1, 0, 1], axis=0), axis=0, keepdims=True)
        return nc.add(_readout(z, r), nc.sum_all(nc.slice_lastdim(pooled, 1, 5)))

    return _check_all(f, [("a", a), ("b", b)], tol, "elementwise")


def probe_cross_entropy(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    logits = _t(rng, 4, 5)
    labels = rng.integers(0, 5, size=4)
    return _check_all(lambda: nc.cross_entropy(logits, labels), [("logits", logits)], tol, "cross_entropy")


def probe_js(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    x, y = _t(rng, 2, 4), _t(rng, 2, 4)

    def f() -> Tensor:
        return nc.sum_all(nc.js_divergence(nc.softmax_lastdim(x), nc.renormalize_lastdim(nc.softmax_lastdim(y))))

    return _check_all(f, [("x", x), ("y", y)], tol, "js_divergence")


def probe_threshold_gate(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    x, r = _t(rng, 1, 6), rng.standard_normal((1, 6))
    return _check_all(lambda: _readout(threshold_gate(nc.softmax_lastdim(x), 0.1), r), [("x", x)], tol, "gate")


def probe_lstm(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    lstm = LSTM.init(rng, 4)
    seq, r = _t(rng, 3, 4), rng.standard_normal((3, 4))
    tensors = [("seq", seq), *lstm.named_parameters("lstm")]
    return _check_all(lambda: _readout(temporal_encode(seq, lstm), r), tensors, tol, "temporal_encode")


def probe_spatial(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    d, hw = 4, 4
    params = TsgParams.init(rng, d)
    v_map, f_a, f_tgt = _t(rng, hw, d), _t(rng, 1, d), _t(rng, 1, d)
    r, r_map = rng.standard_normal((1, d)), rng.standard_normal((1, hw))
    reports = _check_all(
        lambda: _readout(region_attention(f_a, v_map), r_map), [("v_map", v_map), ("f", f_a)], tol, "region"
    )
    tensors = [("v_map", v_map), ("f_a", f_a), ("f_tgt", f_tgt), *params.fc.named_parameters("fc")]
    for mode in (FusionMode.ADD, FusionMode.MUL):
        flags = AblationFlags(fusion=mode)
        reports += _check_all(
            lambda flags=flags: _readout(target_aware_visual(v_map, f_a, f_tgt, params, flags).f_vt, r),
            tensors,
            tol,
            f"target_aware_visual[{mode}]",
        )
    return reports


def probe_match(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    d, b, t = 4, 3, 2
    params = TsgParams.init(rng, d)
    f_a, f_v = _t(rng, b, t, 1, d), _t(rng, b, t, 1, d)
    pairs = sample_match_pairs(["v0", "v1", "v2"], t, rng)
    tensors = [("f_a", f_a), ("f_v", f_v), *params.match.named_parameters("match")]  # type: ignore[union-attr]
    return _check_all(lambda: match_loss(f_a, f_v, pairs, params), tensors, tol, "match_loss")


def probe_temporal(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    d, t, heads = 4, 2, 2
    params = JtgParams.init(rng, d, heads)
    f_q, f_v, f_a = _t(rng, 1, d), _t(rng, t, d), _t(rng, t, d)
    r = rng.standard_normal((1, d))

    def f() -> Tensor:
        rec = question_guided_attention(f_q, interleave(f_v, f_a), params)
        return nc.add(_readout(rec.f_avq, r), cms_loss(rec.w_a, rec.w_v))

    tensors = [("f_q", f_q), ("f_v", f_v), ("f_a", f_a), *params.named_parameters("jtg")]
    return _check_all(f, tensors, tol, "question_guided_attention")


def probe_answer(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    d, c = 4, 5
    head = HeadParams.init(rng, d, c)
    f_avq, f_q = _t(rng, 3, 1, d), _t(rng, 3, 1, d)
    labels = rng.integers(0, c, size=3)
    tensors = [("f_avq", f_avq), ("f_q", f_q), *head.named_parameters("head")]
    return _check_all(lambda: nc.cross_entropy(answer_logits(f_avq, f_q, head), labels), tensors, tol, "answer")


def toy_batch(rng: np.random.Generator, b: int = 3) -> Batch:
    """A random batch at the end-to-end probe size, one video per sample."""
    d, t, hw = E2E_D, E2E_T, E2E_H * E2E_W
    qtypes = list(QuestionType)
    return Batch(
        audio=rng.standard_normal((b, t, d)),
        visual=rng.standard_normal((b, t, hw, d)),
        question=rng.standard_normal((b, 1, d)),
        target=rng.standard_normal((b, 1, d)),
        answers=rng.integers(0, E2E_ANSWERS, size=b),
        question_types=[qtypes[i % len(qtypes)] for i in range(b)],
        video_ids=[f"video{i}" for i in range(b)],
        sample_ids=[f"sample{i}" for i in range(b)],
    )


def toy_config(**overrides: object) -> TrainConfig:
    return TrainConfig.model_validate(
        {"d": E2E_D, "T": E2E_T, "h": E2E_H, "w": E2E_W, "n_heads": E2E_HEADS, "batch_size": 3, **overrides}
    )


def probe_end_to_end(rng: np.random.Generator, tol: float) -> list[GradCheckReport]:
    seed = int(rng.integers(0, 2**31))
    model = TassModel.init(toy_config(seed=seed), E2E_ANSWERS)
    batch = toy_batch(rng)
    pairs = sample_match_pairs(batch.video_ids, E2E_T, rng)
    return _check_all(lambda: model.forward(batch, pairs).losses.total, model.named_parameters(), tol, "end_to_end")


PROBES: dict[str, Probe] = {
    "matmul": probe_matmul,
    "softmax": probe_softmax,
    "elementwise": probe_elementwise,
    "cross_entropy": probe_cross_entropy,
    "js_divergence": probe_js,
    "threshold_gate": probe_threshold_gate,
    "temporal_encode": probe_lstm,
    "spatial_grounding": probe_spatial,
    "match_loss": probe_match,
    "temporal_grounding": probe_temporal,
    "answer_head": probe_answer,
    "end_to_end": probe_end_to_end,
}


def run_gradcheck(
    seeds: Sequence[int], tolerance: float = 1e-5, probes: Sequence[str] | None = None
) -> list[GradCheckReport]:
    """Run the named probes (all by default) once per seed."""
    names = list(probes) if probes else list(PROBES)
    unknown = [n for n in names if n not in PROBES]
    if unknown:
        raise ConfigError(f"unknown gradcheck probe(s): {', '.join(unknown)}; known: {', '.join(PROBES)}")
    reports: list[GradCheckReport] = []
    for seed in seeds:
        for name in names:
            rng = np.random.default_rng([seed, sum(name.encode())])
            found = PROBES[name](rng, tolerance)
            failed = [r for r in found if not r.passed]
            if failed:
                logger.warning("probe %s failed on seed %d: %s", name, seed, ", ".join(r.label for r in failed))
            reports.extend(found)
    return reports
