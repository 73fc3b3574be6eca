"""Target-aware spatial grounding and the audio-visual match loss.

Shapes are written for one segment (``v_map`` hw×d, features 1×d) but every
function accepts arbitrary matching leading axes, so the model passes a
whole batch as B×T×hw×d at once.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from tass import numcore as nc
from tass.errors import DimensionError, DomainError
from tass.layers import MLP, Linear, NamedParams
from tass.models import AblationFlags, FusionMode
from tass.numcore import Tensor

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.025

MATCHED = 1
MISMATCHED = 0


@dataclass
class TsgParams:
    fc: Linear  # 2d -> d, applied after tanh
    match: MLP | None  # 2d -> d -> 2; absent when the match loss is ablated
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise DomainError(f"threshold tau must be nonnegative, got {self.tau}")
        d = self.fc.weight.shape[1]
        if self.fc.weight.shape[0] != 2 * d:
            raise DimensionError(f"fusion layer must map 2d -> d, got weight {self.fc.weight.shape}")
        if self.match is not None and self.match.hidden.weight.shape != (2 * d, d):
            raise DimensionError(f"match head must map 2d -> d -> 2, got {self.match.hidden.weight.shape}")

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, tau: float = DEFAULT_TAU, *, with_match: bool = True) -> TsgParams:
        fc = Linear.init(rng, 2 * d, d)
        match = MLP.init(rng, 2 * d, d, 2) if with_match else None
        return cls(fc, match, tau)

    def named_parameters(self, prefix: str = "tsg") -> NamedParams:
        yield from self.fc.named_parameters(f"{prefix}.fc")
        if self.match is not None:
            yield from self.match.named_parameters(f"{prefix}.match")


@dataclass
class GroundingOutput:
    """Target-aware visual feature plus the maps that produced it.

    Maps an ablation skips are None.
    """

    f_vt: Tensor  # ...×1×d
    f_vg: Tensor  # ...×1×d
    f_vi: Tensor  # ...×1×d
    weights: Tensor  # ...×1×hw
    s_a: Tensor | None = None
    s_q: Tensor | None = None
    s_q_gated: Tensor | None = None


def region_attention(f: Tensor, v_map: Tensor) -> Tensor:
    """softmax over regions of the dot products ``f · v_map[i]``; 1×hw per segment."""
    if f.shape[-1] != v_map.shape[-1] or f.shape[-2] != 1:
        raise DimensionError(f"region_attention: query {f.shape} does not fit map {v_map.shape}")
    return nc.softmax_lastdim(nc.matmul(f, nc.transpose(v_map)))


def threshold_gate(s_q: Tensor, tau: float) -> Tensor:
    """Keep entries ``>= tau``, zero the rest; the kept mask is constant."""
    return nc.masked(s_q, s_q.data >= tau)


def target_aware_visual(
    v_map: Tensor,
    f_a: Tensor,
    f_tgt: Tensor,
    params: TsgParams,
    flags: AblationFlags | None = None,
) -> GroundingOutput:
    flags = flags or AblationFlags()
    hw = v_map.shape[-2]
    f_vg = nc.mean_axis(v_map, axis=-2, keepdims=True)

    s_a = s_q = gated = None
    if flags.no_spatial_grounding:
        weights = Tensor(np.full(f_vg.shape[:-1] + (hw,), 1.0 / hw))
        f_vi = f_vg
    else:
        s_a = region_attention(f_a, v_map)
        if flags.no_target_aware:
            weights = s_a
        else:
            s_q = region_attention(f_tgt, v_map)
            gated = threshold_gate(s_q, params.tau)
            weights = nc.softmax_lastdim(_fuse(s_a, gated, flags.fusion))
        f_vi = nc.matmul(weights, v_map)

    f_vt = params.fc(nc.tanh(nc.concat_lastdim(f_vg, f_vi)))
    return GroundingOutput(f_vt, f_vg, f_vi, weights, s_a, s_q, gated)


def _fuse(s_a: Tensor, gated: Tensor, mode: FusionMode) -> Tensor:
    if mode == FusionMode.MUL:
        return nc.mul(s_a, gated)
    if mode == FusionMode.MAX:
        return nc.maximum(s_a, gated)
    return nc.add(s_a, gated)


@dataclass(frozen=True)
class MatchPairs:
    """Visual partner (flat segment index) and match label for every flat segment."""

    partners: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def sample_match_pairs(video_ids: Sequence[str], t: int, rng: np.random.Generator) -> MatchPairs:
    """Keep the true partner or, with probability 1/2, swap in a segment of another video.

    Segment ``(b, s)`` has flat index ``b * t + s``. When every sample in the
    batch shares one video, negatives fall back to another segment of that
    video; a one-segment video has no other segment and keeps its true pair.
    """
    ids = np.asarray(video_ids)
    n = len(ids) * t
    partners = np.arange(n)
    labels = np.full(n, MATCHED, dtype=np.intp)
    degenerate = len(set(video_ids)) < 2
    if degenerate:
        logger.warning("match batch holds a single video; drawing negatives from other segments of it")
    for i in range(n):
        if rng.random() >= 0.5:
            continue
        b = i // t
        if degenerate:
            pool = np.array([j for j in range(b * t, (b + 1) * t) if j != i], dtype=np.intp)
            if pool.size == 0:
                continue
        else:
            others = np.flatnonzero(ids != ids[b])
            pool = (others[:, np.newaxis] * t + np.arange(t)).ravel()
        partners[i] = int(rng.choice(pool))
        labels[i] = MISMATCHED
    return MatchPairs(partners, labels)


def match_loss(f_a: Tensor, f_v: Tensor, pairs: MatchPairs, params: TsgParams) -> Tensor:
    """Mean cross-entropy of the match head over (audio, partner visual) pairs."""
    if params.match is None:
        raise DomainError("match_loss called without a match head")
    d = f_a.shape[-1]
    if f_a.shape != f_v.shape:
        raise DimensionError(f"match_loss: audio {f_a.shape} and visual {f_v.shape} features differ")
    flat_a = nc.reshape(f_a, (-1, d))
    flat_v = nc.reshape(f_v, (-1, d))
    if flat_a.shape[0] != len(pairs):
        raise DimensionError(f"match_loss: {len(pairs)} pairs for {flat_a.shape[0]} segments")
    partner = nc.take(flat_v, pairs.partners, axis=0)
    logits = params.match(nc.concat_lastdim(flat_a, partner))
    return nc.cross_entropy(logits, pairs.labels)
