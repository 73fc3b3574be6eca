"""End-to-end TASS pipeline: projection, spatial grounding, temporal grounding, answer head."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from tass import numcore as nc
from tass.errors import DimensionError
from tass.featureio import Batch
from tass.head import HeadParams, LossBreakdown, answer_logits, total_loss
from tass.jtg import (
    AttentionRecord,
    JtgParams,
    cms_loss,
    dual_stream_attention,
    interleave,
    question_guided_attention,
    temporal_encode,
)
from tass.layers import Linear, NamedParams, count_parameters
from tass.models import Stream, TrainConfig
from tass.numcore import Tensor
from tass.tsg import GroundingOutput, MatchPairs, TsgParams, match_loss, target_aware_visual

logger = logging.getLogger(__name__)

_INIT_STREAM = 10


@dataclass
class ForwardOutputs:
    logits: Tensor  # B×C
    grounding: GroundingOutput
    attention: AttentionRecord | None
    losses: LossBreakdown
    h_a: Tensor  # B×T×d
    h_v: Tensor  # B×T×d


@dataclass
class TassModel:
    config: TrainConfig
    tsg: TsgParams
    jtg: JtgParams
    head: HeadParams
    audio_proj: Linear | None = None

    @classmethod
    def init(cls, config: TrainConfig, n_answers: int, seed: int | None = None) -> TassModel:
        """Seeded uniform initialisation; parameters are drawn in a fixed module order."""
        flags = config.ablation
        rng = np.random.default_rng([config.seed if seed is None else seed, _INIT_STREAM])
        audio_proj = Linear.init(rng, config.d, config.d) if config.audio_projection else None
        tsg = TsgParams.init(rng, config.d, config.tau, with_match=not flags.no_match_loss)
        jtg = JtgParams.init(
            rng, config.d, config.n_heads, stream=flags.stream, with_attention=not flags.no_temporal_grounding
        )
        head = HeadParams.init(rng, config.d, n_answers)
        return cls(config, tsg, jtg, head, audio_proj)

    def named_parameters(self) -> NamedParams:
        if self.audio_proj is not None:
            yield from self.audio_proj.named_parameters("audio_proj")
        yield from self.tsg.named_parameters("tsg")
        yield from self.jtg.named_parameters("jtg")
        yield from self.head.named_parameters("head")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    @property
    def n_parameters(self) -> int:
        return count_parameters(self.named_parameters())

    def forward(self, batch: Batch, pairs: MatchPairs | None = None) -> ForwardOutputs:
        """Run a batch through the pipeline; the match loss needs ``pairs``."""
        cfg = self.config
        flags = cfg.ablation
        b, t, hw, d = batch.visual.shape
        if (t, hw, d) != (cfg.t, cfg.h * cfg.w, cfg.d) or batch.audio.shape != (b, t, d):
            raise DimensionError(
                f"batch audio {batch.audio.shape} / visual {batch.visual.shape} do not fit "
                f"T={cfg.t}, hw={cfg.h * cfg.w}, d={cfg.d}"
            )

        f_a = Tensor(batch.audio)
        if self.audio_proj is not None:
            f_a = self.audio_proj(f_a)
        f_q = Tensor(batch.question)
        f_tgt = nc.take(nc.reshape(Tensor(batch.target), (b, 1, 1, d)), np.zeros(t, dtype=np.intp), axis=1)
        f_a_seg = nc.reshape(f_a, (b, t, 1, d))

        grounding = target_aware_visual(Tensor(batch.visual), f_a_seg, f_tgt, self.tsg, flags)
        f_v = nc.reshape(grounding.f_vt, (b, t, d))

        h_a = temporal_encode(f_a, self.jtg.lstm_a)
        h_v = temporal_encode(f_v, self.jtg.lstm_v)
        attention: AttentionRecord | None = None
        if flags.no_temporal_grounding:
            f_av = interleave(h_v, h_a, flags.order)
            f_avq = self.jtg.mlp(nc.mean_axis(f_av, axis=-2, keepdims=True))
        elif flags.stream == Stream.DUAL:
            attention = dual_stream_attention(f_q, h_v, h_a, self.jtg)
            f_avq = attention.f_avq
        else:
            attention = question_guided_attention(f_q, interleave(h_v, h_a, flags.order), self.jtg, flags.order)
            f_avq = attention.f_avq

        logits = answer_logits(f_avq, f_q, self.head)
        l_qa = nc.cross_entropy(logits, batch.answers)
        l_cms = None
        if attention is not None and not flags.no_cms:
            l_cms = cms_loss(attention.w_a, attention.w_v)
        l_match = None
        if pairs is not None and self.tsg.match is not None and cfg.lambda_match > 0:
            l_match = match_loss(f_a_seg, grounding.f_vt, pairs, self.tsg)
        losses = total_loss(l_qa, l_cms, l_match, cfg.lambda_match, flags)
        return ForwardOutputs(logits, grounding, attention, losses, h_a, h_v)
