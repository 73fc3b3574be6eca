"""Feature files, dataset manifests and temporal pooling.

Tensor file layout (all little-endian)::

    b"TASS" | u32 version | u32 rank | u32 extent * rank | f32 payload

Values are stored as f32 and promoted to f64 on read.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from tass.errors import (
    AnswerIndexError,
    ConfigError,
    DimensionError,
    DomainError,
    FormatError,
    ManifestDimensionError,
    ManifestError,
    MissingFeatureFileError,
)
from tass.models import ManifestDims, ManifestDocument, QuestionType, SampleEntry, VideoEntry, format_validation_error
from tass.numcore import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"TASS"
FORMAT_VERSION = 1
STORAGE_DTYPE = np.dtype("<f4")
_U32 = struct.Struct("<I")
_PREFIX = struct.Struct("<4sII")

MANIFEST_NAME = "manifest.json"


# --------------------------------------------------------------------------
# tensor files
# --------------------------------------------------------------------------


def encode_tensor(values: Tensor | np.ndarray) -> bytes:
    data = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise DomainError("refusing to store non-finite values")
    if any(extent <= 0 for extent in data.shape):
        raise DimensionError(f"tensor extents must be positive, got {data.shape}")
    header = _PREFIX.pack(MAGIC, FORMAT_VERSION, data.ndim) + b"".join(_U32.pack(e) for e in data.shape)
    return header + data.astype(STORAGE_DTYPE).tobytes()


def write_tensor_file(values: Tensor | np.ndarray, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(values))


def _parse_header(raw: bytes, path: str | None) -> tuple[tuple[int, ...], int]:
    if len(raw) < _PREFIX.size:
        raise FormatError("truncated header", offset=len(raw), path=path)
    magic, version, rank = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0, path=path)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4, path=path)
    offset = _PREFIX.size
    end = offset + rank * _U32.size
    if len(raw) < end:
        raise FormatError(f"truncated extents (rank {rank})", offset=len(raw), path=path)
    shape = tuple(_U32.unpack_from(raw, offset + i * _U32.size)[0] for i in range(rank))
    for i, extent in enumerate(shape):
        if extent == 0:
            raise FormatError("zero extent", offset=offset + i * _U32.size, path=path)
    return shape, end


def decode_tensor(raw: bytes, path: str | None = None) -> Tensor:
    shape, offset = _parse_header(raw, path)
    count = math.prod(shape)
    expected = offset + count * STORAGE_DTYPE.itemsize
    if len(raw) < expected:
        raise FormatError(f"truncated payload: need {expected} bytes, have {len(raw)}", offset=len(raw), path=path)
    if len(raw) > expected:
        raise FormatError("trailing bytes after payload", offset=expected, path=path)
    values = np.frombuffer(raw, dtype=STORAGE_DTYPE, count=count, offset=offset)
    return Tensor(values.astype(np.float64).reshape(shape))


def read_tensor_file(path: Path | str) -> Tensor:
    path = Path(path)
    return decode_tensor(path.read_bytes(), str(path))


def read_tensor_shape(path: Path | str) -> tuple[int, ...]:
    """Parse only the header of a tensor file."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(_PREFIX.size)
        if len(head) == _PREFIX.size:
            _, _, rank = _PREFIX.unpack(head)
            head += fh.read(min(rank, 64) * _U32.size)
    return _parse_header(head, str(path))[0]


# --------------------------------------------------------------------------
# in-memory records
# --------------------------------------------------------------------------


@dataclass
class VideoFeatures:
    """One video's audio (T×d) and visual (T×h×w×d) feature sequences."""

    video_id: str
    audio: Tensor
    visual: Tensor
    source: str = "unknown"
    pooled_from: int | None = None

    def __post_init__(self) -> None:
        a, v = self.audio.shape, self.visual.shape
        if len(a) != 2 or len(v) != 4:
            raise DimensionError(f"video {self.video_id}: audio must be T×d and visual T×h×w×d, got {a} and {v}")
        if a[0] != v[0] or a[1] != v[3]:
            raise DimensionError(f"video {self.video_id}: audio {a} and visual {v} disagree on T or d")

    @property
    def t(self) -> int:
        return self.audio.shape[0]

    @property
    def d(self) -> int:
        return self.audio.shape[1]

    @property
    def h(self) -> int:
        return self.visual.shape[1]

    @property
    def w(self) -> int:
        return self.visual.shape[2]


@dataclass
class QASample:
    """A question about one video with its answer index."""

    sample_id: str
    video_id: str
    question: Tensor  # 1×d
    target: Tensor  # 1×d
    question_type: QuestionType
    answer: int


@dataclass
class Batch:
    """Stacked model inputs for B samples."""

    audio: np.ndarray  # B×T×d
    visual: np.ndarray  # B×T×hw×d
    question: np.ndarray  # B×1×d
    target: np.ndarray  # B×1×d
    answers: np.ndarray  # B
    question_types: list[QuestionType] = field(default_factory=list)
    video_ids: list[str] = field(default_factory=list)
    sample_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.answers.shape[0])


def collate(samples: Sequence[QASample], videos: Sequence[VideoFeatures]) -> Batch:
    """Stack samples and their (aligned) videos into one batch."""
    if len(samples) != len(videos):
        raise DimensionError(f"collate: {len(samples)} samples for {len(videos)} videos")
    visual = np.stack([v.visual.data.reshape(v.t, v.h * v.w, v.d) for v in videos])
    return Batch(
        audio=np.stack([v.audio.data for v in videos]),
        visual=visual,
        question=np.stack([s.question.data.reshape(1, -1) for s in samples]),
        target=np.stack([s.target.data.reshape(1, -1) for s in samples]),
        answers=np.array([s.answer for s in samples], dtype=np.intp),
        question_types=[s.question_type for s in samples],
        video_ids=[s.video_id for s in samples],
        sample_ids=[s.sample_id for s in samples],
    )


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------


def pool_windows(values: np.ndarray, t2: int) -> np.ndarray:
    """Average consecutive windows of ``t2`` rows along axis 0; the tail window uses its true length."""
    if t2 < 1:
        raise ConfigError(f"pooling window must be >= 1, got {t2}")
    starts = range(0, values.shape[0], t2)
    return np.stack([values[s : s + t2].mean(axis=0) for s in starts])


def pool_preprocess(video: VideoFeatures, t2: int) -> VideoFeatures:
    """Shorten a video to ceil(T1/T2) segments by temporal average pooling."""
    if t2 < 1:
        raise ConfigError(f"pooling window must be >= 1, got {t2}")
    return VideoFeatures(
        video_id=video.video_id,
        audio=Tensor(pool_windows(video.audio.data, t2)),
        visual=Tensor(pool_windows(video.visual.data, t2)),
        source=video.source,
        pooled_from=video.pooled_from or video.t,
    )


# --------------------------------------------------------------------------
# manifests
# --------------------------------------------------------------------------


class Manifest:
    """A validated dataset manifest with lazily loaded feature tensors."""

    def __init__(self, root: Path, document: ManifestDocument) -> None:
        self.root = root
        self.document = document
        self._videos = {v.video_id: v for v in document.videos}
        self._video_cache: dict[str, VideoFeatures] = {}

    @property
    def answers(self) -> list[str]:
        return self.document.answers

    @property
    def dims(self) -> ManifestDims:
        return self.document.dims

    @property
    def samples(self) -> list[SampleEntry]:
        return self.document.samples

    def __len__(self) -> int:
        return len(self.document.samples)

    def video_entry(self, video_id: str) -> VideoEntry:
        try:
            return self._videos[video_id]
        except KeyError:
            raise ManifestError(f"unknown video {video_id!r}") from None

    def load_video(self, video_id: str) -> VideoFeatures:
        cached = self._video_cache.get(video_id)
        if cached is None:
            entry = self.video_entry(video_id)
            cached = VideoFeatures(
                video_id=video_id,
                audio=read_tensor_file(self.root / entry.audio_file),
                visual=read_tensor_file(self.root / entry.visual_file),
                source=str(self.root),
            )
            self._video_cache[video_id] = cached
        return cached

    def load_sample(self, index: int) -> QASample:
        """Read one sample; without a target file the question tensor doubles as the target."""
        entry = self.document.samples[index]
        question = Tensor(read_tensor_file(self.root / entry.question_file).data.reshape(1, -1))
        target = question
        if entry.target_file is not None:
            target = Tensor(read_tensor_file(self.root / entry.target_file).data.reshape(1, -1))
        return QASample(
            sample_id=entry.sample_id,
            video_id=entry.video_id,
            question=question,
            target=target,
            question_type=entry.question_type,
            answer=entry.answer,
        )

    def load_batch(self, indices: Sequence[int]) -> Batch:
        samples = [self.load_sample(int(i)) for i in indices]
        return collate(samples, [self.load_video(s.video_id) for s in samples])

    def save(self, path: Path | None = None) -> Path:
        path = path or self.root / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.document.model_dump_json(indent=2))
        return path


def _check_shape(path: Path, expected: tuple[int, ...], what: str, sample: str) -> None:
    shape = read_tensor_shape(path)
    if shape != expected:
        raise ManifestDimensionError(f"{what} {path.name} has shape {shape}, expected {expected}", sample=sample)


def _validate(manifest: Manifest) -> None:
    dims = manifest.dims
    n_answers = len(manifest.answers)
    checked_videos: set[str] = set()
    for s in manifest.samples:
        if s.answer >= n_answers:
            raise AnswerIndexError(f"answer index {s.answer} outside vocabulary of {n_answers}", sample=s.sample_id)
        if s.video_id not in manifest._videos:
            raise ManifestError(f"references unknown video {s.video_id!r}", sample=s.sample_id)
        video = manifest.video_entry(s.video_id)
        files = [
            (video.audio_file, (dims.t, dims.d), "audio"),
            (video.visual_file, (dims.t, dims.h, dims.w, dims.d), "visual"),
            (s.question_file, (1, dims.d), "question"),
        ]
        if s.target_file is not None:
            files.append((s.target_file, (1, dims.d), "target"))
        for rel, expected, what in files:
            if what in ("audio", "visual") and s.video_id in checked_videos:
                continue
            path = manifest.root / rel
            if not path.is_file():
                raise MissingFeatureFileError(f"{what} file {rel} does not exist", sample=s.sample_id)
            _check_shape(path, expected, what, s.sample_id)
        checked_videos.add(s.video_id)


def load_manifest(path: Path | str) -> Manifest:
    """Load and eagerly validate a manifest (a file or a directory holding one)."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ManifestError(f"manifest not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path} is not valid JSON: {e.msg} (line {e.lineno})") from e
    try:
        document = ManifestDocument.model_validate(raw)
    except ValidationError as e:
        raise ManifestError(f"{path}: {format_validation_error(e)}") from e
    manifest = Manifest(path.parent, document)
    _validate(manifest)
    logger.debug("loaded manifest %s: %d samples, %d videos", path, len(document.samples), len(document.videos))
    return manifest


def save_dataset(
    out_dir: Path | str,
    videos: Sequence[VideoFeatures],
    samples: Sequence[QASample],
    answers: Sequence[str],
) -> Manifest:
    """Write feature files plus a manifest; returns the reloaded manifest."""
    out_dir = Path(out_dir)
    if not videos:
        raise ManifestError("cannot infer dimensions from an empty video list")
    first = videos[0]
    dims = ManifestDims(d=first.d, h=first.h, w=first.w, t=first.t)
    video_entries = []
    for v in videos:
        entry = VideoEntry(
            video_id=v.video_id,
            audio_file=f"features/{v.video_id}.audio.tass",
            visual_file=f"features/{v.video_id}.visual.tass",
        )
        write_tensor_file(v.audio, out_dir / entry.audio_file)
        write_tensor_file(v.visual, out_dir / entry.visual_file)
        video_entries.append(entry)
    sample_entries = []
    for s in samples:
        target_file = f"questions/{s.sample_id}.tgt.tass"
        entry = SampleEntry(
            sample_id=s.sample_id,
            video_id=s.video_id,
            question_file=f"questions/{s.sample_id}.q.tass",
            target_file=target_file,
            question_type=s.question_type,
            answer=s.answer,
        )
        write_tensor_file(s.question.data.reshape(1, -1), out_dir / entry.question_file)
        write_tensor_file(s.target.data.reshape(1, -1), out_dir / target_file)
        sample_entries.append(entry)
    document = ManifestDocument(answers=list(answers), dims=dims, videos=video_entries, samples=sample_entries)
    Manifest(out_dir, document).save()
    return load_manifest(out_dir)


def preprocess_dataset(manifest: Manifest, t2: int, out_dir: Path | str) -> Manifest:
    """Pool every video of ``manifest`` with window ``t2`` and write a new dataset.

    Question files are copied unchanged; ``t2 == 1`` reproduces the input.
    """
    if t2 < 1:
        raise ConfigError(f"pooling window must be >= 1, got {t2}")
    videos = [pool_preprocess(manifest.load_video(v.video_id), t2) for v in manifest.document.videos]
    samples = [manifest.load_sample(i) for i in range(len(manifest))]
    logger.info("pooled %d videos from T=%d to T=%d", len(videos), manifest.dims.t, videos[0].t if videos else 0)
    return save_dataset(out_dir, videos, samples, manifest.answers)
