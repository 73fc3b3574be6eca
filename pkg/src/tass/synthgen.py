"""Synthetic audio-visual scenes with planted, script-computable answers.

Geometry: text prototypes sit close to their visual prototypes while audio
prototypes form an independent basis, so text-visual matching is easy and
audio-visual matching has to be learned. Every answer is computed from the
latent scene script, never from features.

Rendering: each cell carries a left/right side code, an object's cell adds its
visual prototype, and while the object sounds the cell also lights up along
its own prototype and a shared activity direction. Side and activity codes
are orthogonal to every visual and text prototype, so they never move the
text-to-cell similarities. The visual map is scaled by ``visual_scale``;
audio stays at unit scale.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from tass.errors import ContractError, SeedError
from tass.featureio import Manifest, QASample, VideoFeatures, save_dataset
from tass.models import QuestionType, ScenarioSpec
from tass.numcore import Tensor

logger = logging.getLogger(__name__)

# Child-seed streams: (seed, stream, index) -> generator.
_PROTO_STREAM = 0
_SPLIT_STREAMS = {"train": 1, "val": 2}

MAX_COS = 0.5


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Prototypes:
    visual: np.ndarray  # K×d
    audio: np.ndarray  # K×d
    text: np.ndarray  # K×d
    any_object: np.ndarray  # d, target token for untargeted questions
    type_embeddings: dict[QuestionType, np.ndarray]
    side_code: np.ndarray  # d, unit; +side on the left half, -side on the right
    activity_code: np.ndarray  # d, unit; added to a cell while its object sounds


def _orthogonal_unit(rng: np.random.Generator, against: np.ndarray) -> np.ndarray:
    """Random unit vector orthogonal to the rows of ``against`` when the width leaves room."""
    cand = rng.standard_normal(against.shape[1])
    basis, _ = np.linalg.qr(against.T)
    resid = cand - basis @ (basis.T @ cand)
    norm = float(np.linalg.norm(resid))
    if norm < 1e-8 * float(np.linalg.norm(cand)):
        logger.debug("prototypes span all %d dimensions; side and activity codes are not orthogonal", cand.size)
        return _unit(cand)
    return resid / norm


def gen_prototypes(spec: ScenarioSpec, rng: np.random.Generator | None = None) -> Prototypes:
    """Draw visual, text and audio prototypes plus the fixed question embeddings."""
    rng = rng if rng is not None else np.random.default_rng([spec.seed, _PROTO_STREAM])
    k, d = spec.k, spec.d
    max_draws = 10 * k * d
    visual: list[np.ndarray] = []
    draws = 0
    while len(visual) < k:
        if draws >= max_draws:
            raise SeedError(f"could not place {k} prototypes with |cos| < {MAX_COS} in {max_draws} draws; retry with a new seed")
        draws += 1
        cand = _unit(rng.standard_normal(d))
        if all(abs(float(cand @ v)) < MAX_COS for v in visual):
            visual.append(cand)
    visual_arr = np.stack(visual)
    text = _unit(visual_arr + rng.normal(0.0, spec.text_noise / np.sqrt(d), size=(k, d)))
    audio = _unit(rng.standard_normal((k, d)))
    any_object = _unit(rng.standard_normal(d))
    type_embeddings = {q: _unit(rng.standard_normal(d)) for q in QuestionType}
    matched = np.vstack([visual_arr, text, any_object])
    side_code = _orthogonal_unit(rng, matched)
    activity_code = _orthogonal_unit(rng, np.vstack([matched, side_code]))
    logger.debug("placed %d visual prototypes in %d draws", k, draws)
    return Prototypes(visual_arr, audio, text, any_object, type_embeddings, side_code, activity_code)


@dataclass(frozen=True)
class SceneObject:
    proto: int
    row: int
    col: int
    onset: int | None = None  # None: visible but never sounding
    offset: int | None = None  # exclusive


@dataclass(frozen=True)
class SceneScript:
    """Latent ground truth of one synthetic video."""

    video_id: str
    t1: int
    h: int
    w: int
    objects: tuple[SceneObject, ...]

    def sounding_at(self, t: int) -> list[int]:
        return [o.proto for o in self.objects if o.onset is not None and o.onset <= t < (o.offset or 0)]

    def sounding(self) -> list[SceneObject]:
        return [o for o in self.objects if o.onset is not None]

    def find(self, proto: int) -> SceneObject | None:
        return next((o for o in self.objects if o.proto == proto), None)

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


@dataclass(frozen=True)
class Question:
    video_id: str
    question_type: QuestionType
    target: int | None = None  # prototype index; None asks about any object


def answer_vocabulary(spec: ScenarioSpec) -> list[str]:
    return (
        ["no", "yes"]
        + [str(n) for n in range(spec.max_sources + 1)]
        + [f"object_{k}" for k in range(spec.k)]
        + ["left", "right"]
    )


def gen_video(
    spec: ScenarioSpec, protos: Prototypes, rng: np.random.Generator, video_id: str = "video"
) -> tuple[VideoFeatures, SceneScript]:
    """Lay out sources and distractors on the grid and render their features.

    Sources start within the leading ``onset_window`` of the video at distinct
    segments where the window allows, and sound until its end.
    """
    k, d, h, w, t1 = spec.k, spec.d, spec.h, spec.w, spec.t1
    n_sources = int(rng.integers(1, spec.max_sources + 1))
    sources = [int(p) for p in rng.choice(k, size=n_sources, replace=False)]
    distractors = [p for p in range(k) if p not in sources and rng.random() < spec.distractor_rate]
    n_objects = min(n_sources + len(distractors), h * w)
    cells = rng.choice(h * w, size=n_objects, replace=False)
    window = max(1, math.ceil(spec.onset_window * t1))
    onsets = rng.choice(window, size=n_sources, replace=n_sources > window)

    objects: list[SceneObject] = []
    for i, proto in enumerate((sources + distractors)[:n_objects]):
        row, col = divmod(int(cells[i]), w)
        if i < n_sources:
            objects.append(SceneObject(proto, row, col, int(onsets[i]), t1))
        else:
            objects.append(SceneObject(proto, row, col))
    script = SceneScript(video_id, t1, h, w, tuple(objects))

    noise = spec.noise_std / math.sqrt(d)
    side = np.where(2 * np.arange(w) < w, 1.0, -1.0)
    visual = noise * rng.standard_normal((t1, h, w, d))
    visual += spec.position_scale * side[:, np.newaxis] * protos.side_code
    for o in objects:
        visual[:, o.row, o.col, :] += protos.visual[o.proto]
        if o.onset is not None:
            lit = protos.visual[o.proto] + protos.activity_code
            visual[o.onset : o.offset, o.row, o.col, :] += spec.activity_scale * lit
    visual *= spec.visual_scale
    audio = noise * rng.standard_normal((t1, d))
    for t in range(t1):
        active = script.sounding_at(t)
        if active:
            audio[t] += protos.audio[active].mean(axis=0)
    video = VideoFeatures(video_id, Tensor(audio), Tensor(visual), source="synthgen")
    return video, script


def oracle_answer(script: SceneScript, question: Question, vocabulary: Sequence[str]) -> int:
    """Evaluate ``question`` exhaustively over the latent script."""
    if question.video_id != script.video_id:
        raise ContractError(f"question about {question.video_id!r} asked of script {script.video_id!r}")
    qt = question.question_type
    targeted = qt in (QuestionType.EXISTENTIAL, QuestionType.LOCATION)
    if targeted != (question.target is not None):
        raise ContractError(f"{qt} question {'needs' if targeted else 'takes no'} target object")
    sounding = script.sounding()

    if qt == QuestionType.EXISTENTIAL:
        answer = "yes" if any(o.proto == question.target for o in sounding) else "no"
    elif qt == QuestionType.COUNTING:
        answer = str(len({o.proto for o in sounding}))
    elif qt == QuestionType.TEMPORAL_FIRST:
        if not sounding:
            raise ContractError("temporal question about a silent video")
        first = min(sounding, key=lambda o: (o.onset, o.proto))
        answer = f"object_{first.proto}"
    else:
        obj = script.find(question.target)  # type: ignore[arg-type]
        if obj is None or obj.onset is None:
            raise ContractError(f"location question about non-sounding object {question.target}")
        answer = "left" if 2 * obj.col < script.w else "right"
    return list(vocabulary).index(answer)


def gen_question_answer(
    script: SceneScript,
    protos: Prototypes,
    question_type: QuestionType,
    rng: np.random.Generator,
    vocabulary: Sequence[str],
    sample_id: str = "sample",
) -> tuple[QASample, Question] | None:
    """Pose one question about ``script``; None when the type does not apply to this video."""
    sounding = sorted({o.proto for o in script.sounding()})
    k = protos.visual.shape[0]
    target: int | None = None
    if question_type == QuestionType.EXISTENTIAL:
        silent = [p for p in range(k) if p not in sounding]
        pool = sounding if (sounding and (not silent or rng.random() < 0.5)) else silent
        target = int(rng.choice(pool))
    elif question_type in (QuestionType.TEMPORAL_FIRST, QuestionType.LOCATION):
        if not sounding:
            return None
        if question_type == QuestionType.LOCATION:
            target = int(rng.choice(sounding))

    question = Question(script.video_id, question_type, target)
    f_tgt = protos.any_object if target is None else protos.text[target]
    f_q = _unit(f_tgt + protos.type_embeddings[question_type])
    sample = QASample(
        sample_id=sample_id,
        video_id=script.video_id,
        question=Tensor(f_q.reshape(1, -1)),
        target=Tensor(f_tgt.reshape(1, -1)),
        question_type=question_type,
        answer=oracle_answer(script, question, vocabulary),
    )
    return sample, question


@dataclass
class SyntheticSplit:
    videos: list[VideoFeatures]
    samples: list[QASample]
    scripts: list[SceneScript]
    questions: list[Question]


def generate_split(spec: ScenarioSpec, protos: Prototypes, split: str, n_videos: int) -> SyntheticSplit:
    """Generate ``n_videos`` videos, each from its own (seed, split, index) child generator."""
    vocabulary = answer_vocabulary(spec)
    types = list(spec.question_mix)
    weights = np.array([spec.question_mix[q] for q in types])
    stream = _SPLIT_STREAMS[split]
    out = SyntheticSplit([], [], [], [])
    for i in range(n_videos):
        rng = np.random.default_rng([spec.seed, stream, i])
        video_id = f"{split}{i:05d}"
        video, script = gen_video(spec, protos, rng, video_id)
        out.videos.append(video)
        out.scripts.append(script)
        for j in range(spec.questions_per_video):
            posed = None
            while posed is None:
                qtype = types[int(rng.choice(len(types), p=weights))]
                posed = gen_question_answer(script, protos, qtype, rng, vocabulary, f"{video_id}_q{j}")
            out.samples.append(posed[0])
            out.questions.append(posed[1])
    return out


def generate_dataset(spec: ScenarioSpec, out_dir: Path | str) -> dict[str, Manifest]:
    """Write ``train/`` and ``val/`` dataset directories under ``out_dir``."""
    out_dir = Path(out_dir)
    protos = gen_prototypes(spec)
    vocabulary = answer_vocabulary(spec)
    manifests: dict[str, Manifest] = {}
    for split, n_videos in (("train", spec.n_train_videos), ("val", spec.n_val_videos)):
        if n_videos == 0:
            continue
        data = generate_split(spec, protos, split, n_videos)
        manifests[split] = save_dataset(out_dir / split, data.videos, data.samples, vocabulary)
        scripts = [s.to_dict() for s in data.scripts]
        (out_dir / split / "scripts.json").write_text(json.dumps(scripts, indent=1))
        logger.info("wrote %s split: %d videos, %d samples", split, len(data.videos), len(data.samples))
    (out_dir / "scenario.json").write_text(spec.model_dump_json(indent=2, by_alias=True))
    return manifests
