"""Joint temporal grounding over one interleaved audio-visual sequence.

Per-modality LSTMs encode the segment features, the two sequences are laid
out in a single 2T-slot sequence, and a question-guided multi-head attention
selects and fuses the relevant slots in one step. The attention mass it puts
on audio slots versus visual slots feeds the cross-modal synchrony loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from tass import numcore as nc
from tass.errors import ConfigError, DimensionError
from tass.layers import LSTM, MLP, Linear, MultiHeadAttention, NamedParams
from tass.models import Order, Stream
from tass.numcore import Tensor

logger = logging.getLogger(__name__)


@dataclass
class JtgParams:
    lstm_a: LSTM
    lstm_v: LSTM
    mha: MultiHeadAttention | None  # visual stream when dual
    mlp: MLP
    mha_audio: MultiHeadAttention | None = None
    fusion: Linear | None = None  # 2d -> d, dual stream only

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        d: int,
        n_heads: int,
        *,
        stream: Stream = Stream.SINGLE,
        with_attention: bool = True,
    ) -> JtgParams:
        if d % n_heads:
            raise ConfigError(f"d ({d}) must be divisible by n_heads ({n_heads})")
        lstm_a = LSTM.init(rng, d)
        lstm_v = LSTM.init(rng, d)
        mha = MultiHeadAttention.init(rng, d, n_heads) if with_attention else None
        mlp = MLP.init(rng, d, d, d)
        if stream == Stream.DUAL:
            return cls(lstm_a, lstm_v, mha, mlp, MultiHeadAttention.init(rng, d, n_heads), Linear.init(rng, 2 * d, d))
        return cls(lstm_a, lstm_v, mha, mlp)

    @property
    def dual(self) -> bool:
        return self.mha_audio is not None

    def named_parameters(self, prefix: str = "jtg") -> NamedParams:
        yield from self.lstm_a.named_parameters(f"{prefix}.lstm_a")
        yield from self.lstm_v.named_parameters(f"{prefix}.lstm_v")
        if self.mha is not None:
            yield from self.mha.named_parameters(f"{prefix}.mha")
        yield from self.mlp.named_parameters(f"{prefix}.mlp")
        if self.mha_audio is not None:
            yield from self.mha_audio.named_parameters(f"{prefix}.mha_audio")
        if self.fusion is not None:
            yield from self.fusion.named_parameters(f"{prefix}.fusion")


@dataclass
class AttentionRecord:
    w_av: Tensor  # ...×1×2T, head mean of the post-softmax scores
    w_v: Tensor  # ...×1×T
    w_a: Tensor  # ...×1×T
    f_att: Tensor  # ...×1×d
    f_avq: Tensor  # ...×1×d
    visual_mass: np.ndarray  # pre-renormalization visual share per sample


def temporal_encode(seq: Tensor, lstm: LSTM) -> Tensor:
    """Hidden state of a zero-initialised LSTM at every step of ``seq`` (...×T×d)."""
    if seq.ndim < 2 or seq.shape[-2] < 1:
        raise DimensionError(f"temporal_encode needs a ...×T×d sequence with T >= 1, got {seq.shape}")
    if seq.shape[-1] != lstm.width:
        raise DimensionError(f"temporal_encode: feature width {seq.shape[-1]} != LSTM width {lstm.width}")
    state_shape = seq.shape[:-2] + (1, lstm.width)
    h = nc.zeros(state_shape)
    c = nc.zeros(state_shape)
    hidden = []
    for t in range(seq.shape[-2]):
        h, c = lstm.cell(nc.take(seq, [t], axis=-2), h, c)
        hidden.append(h)
    return nc.concat(hidden, axis=-2)


def slot_layout(order: Order, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Slot indices of the visual and audio segments in the 2T sequence."""
    steps = np.arange(t)
    if order == Order.ILVA:
        return 2 * steps, 2 * steps + 1
    if order == Order.ILAV:
        return 2 * steps + 1, 2 * steps
    if order == Order.CATVA:
        return steps, t + steps
    return t + steps, steps


def interleave(f_v: Tensor, f_a: Tensor, order: Order = Order.ILVA) -> Tensor:
    """Arrange ...×T×d visual and audio rows into one ...×2T×d sequence."""
    if f_v.shape != f_a.shape:
        raise DimensionError(f"interleave: visual {f_v.shape} and audio {f_a.shape} sequences differ")
    t = f_v.shape[-2]
    v_slots, a_slots = slot_layout(order, t)
    source = np.empty(2 * t, dtype=np.intp)
    source[v_slots] = np.arange(t)
    source[a_slots] = t + np.arange(t)
    return nc.take(nc.concat([f_v, f_a], axis=-2), source, axis=-2)


def deinterleave(f_av: Tensor, order: Order = Order.ILVA) -> tuple[Tensor, Tensor]:
    if f_av.ndim < 2 or f_av.shape[-2] % 2:
        raise DimensionError(f"deinterleave needs an even number of slots, got shape {f_av.shape}")
    v_slots, a_slots = slot_layout(order, f_av.shape[-2] // 2)
    return nc.take(f_av, v_slots, axis=-2), nc.take(f_av, a_slots, axis=-2)


def _attend(f_q: Tensor, f_seq: Tensor, mha: MultiHeadAttention) -> tuple[Tensor, Tensor, list[Tensor]]:
    """Multi-head attention of one query row over ``f_seq``.

    Returns f_att, the head-mean scores and each head's scaled logits.
    """
    d = f_q.shape[-1]
    if d % mha.n_heads:
        raise ConfigError(f"d ({d}) must be divisible by n_heads ({mha.n_heads})")
    if f_seq.shape[-1] != d or f_q.shape[-2] != 1:
        raise DimensionError(f"attention: query {f_q.shape} does not fit sequence {f_seq.shape}")
    d_h = d // mha.n_heads
    q, k, v = mha.w_q(f_q), mha.w_k(f_seq), mha.w_v(f_seq)
    heads, scores, head_logits = [], [], []
    for i in range(mha.n_heads):
        lo, hi = i * d_h, (i + 1) * d_h
        logits = nc.matmul(nc.slice_lastdim(q, lo, hi), nc.transpose(nc.slice_lastdim(k, lo, hi)))
        logits = nc.scalar_scale(logits, 1.0 / math.sqrt(d_h))
        s = nc.softmax_lastdim(logits)
        head_logits.append(logits)
        scores.append(s)
        heads.append(nc.matmul(s, nc.slice_lastdim(v, lo, hi)))
    f_att = mha.w_o(nc.concat_lastdim(*heads))
    return f_att, nc.scalar_scale(nc.add_n(scores), 1.0 / mha.n_heads), head_logits


def _modality_weights(head_logits: list[Tensor], slots: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Head-mean attention restricted to ``slots`` and renormalized, plus its pre-renormalization mass.

    Computed as a mixture of per-head softmaxes over the slots, each head
    weighted by its log-mass on them, which stays finite when a modality's
    share of every head underflows.
    """
    within, log_mass = [], []
    for logits in head_logits:
        part = nc.take(logits, slots, axis=-1)
        within.append(nc.softmax_lastdim(part))
        log_mass.append(nc.sub(nc.logsumexp_lastdim(part), nc.logsumexp_lastdim(logits)))
    stacked = nc.concat_lastdim(*log_mass)
    head_share = nc.softmax_lastdim(stacked)
    mixed = [nc.mul(nc.take(head_share, [i] * len(slots), axis=-1), p) for i, p in enumerate(within)]
    mass = np.exp(stacked.data).mean(axis=-1)
    return nc.add_n(mixed), mass.reshape(-1)


def question_guided_attention(
    f_q: Tensor, f_av: Tensor, params: JtgParams, order: Order = Order.ILVA
) -> AttentionRecord:
    """Question-guided attention over the joint sequence plus the pooled residual."""
    if params.mha is None:
        raise ConfigError("temporal attention was ablated; no attention parameters to apply")
    f_att, w_av, head_logits = _attend(f_q, f_av, params.mha)
    f_avq = nc.add(f_att, params.mlp(nc.mean_axis(f_av, axis=-2, keepdims=True)))

    v_slots, a_slots = slot_layout(order, f_av.shape[-2] // 2)
    w_v, visual_mass = _modality_weights(head_logits, v_slots)
    w_a, _ = _modality_weights(head_logits, a_slots)
    return AttentionRecord(
        w_av=w_av,
        w_v=w_v,
        w_a=w_a,
        f_att=f_att,
        f_avq=f_avq,
        visual_mass=visual_mass,
    )


def dual_stream_attention(f_q: Tensor, f_v: Tensor, f_a: Tensor, params: JtgParams) -> AttentionRecord:
    """Separate visual and audio attentions joined by a late fusion layer."""
    if params.mha is None or params.mha_audio is None or params.fusion is None:
        raise ConfigError("dual-stream attention needs both attentions and a fusion layer")
    att_v, w_v, _ = _attend(f_q, f_v, params.mha)
    att_a, w_a, _ = _attend(f_q, f_a, params.mha_audio)
    f_att = params.fusion(nc.concat_lastdim(att_v, att_a))
    f_cat = nc.concat([f_v, f_a], axis=-2)
    f_avq = nc.add(f_att, params.mlp(nc.mean_axis(f_cat, axis=-2, keepdims=True)))
    return AttentionRecord(
        w_av=nc.scalar_scale(nc.concat_lastdim(w_v, w_a), 0.5),
        w_v=w_v,
        w_a=w_a,
        f_att=f_att,
        f_avq=f_avq,
        visual_mass=np.full(int(np.prod(f_q.shape[:-2], dtype=np.intp)), 0.5),
    )


def cms_loss(w_a: Tensor, w_v: Tensor) -> Tensor:
    """Jensen-Shannon divergence between the audio and visual slot weights, averaged per sample."""
    return nc.mean_all(nc.js_divergence(w_a, w_v))


def diagnostic_weights(f_q: Tensor, h_a: Tensor, h_v: Tensor) -> tuple[Tensor, Tensor, np.ndarray]:
    """Question-aware audio and visual weights scaled by sqrt(d), and their JS value.

    Not part of the objective; evaluation logs these next to the trained weights.
    """
    scale = 1.0 / math.sqrt(f_q.shape[-1])
    with nc.no_tape():
        a_q = nc.softmax_lastdim(nc.scalar_scale(nc.matmul(f_q, nc.transpose(h_a)), scale))
        v_q = nc.softmax_lastdim(nc.scalar_scale(nc.matmul(f_q, nc.transpose(h_v)), scale))
        js = nc.js_divergence(a_q, v_q).data.reshape(-1)
    logger.debug("diagnostic question-aware JS: mean %.4g over %d samples", float(js.mean()), js.size)
    return a_q, v_q, js
