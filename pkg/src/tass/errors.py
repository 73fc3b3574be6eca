"""Exception hierarchy for the TASS toolkit.

Library code raises these; the CLI turns them into a red message plus a
machine-readable error line.
"""

from __future__ import annotations


class TassError(Exception):
    """Base class for every error raised by tass."""

    code = "tass_error"


class DimensionError(TassError, ValueError):
    code = "dimension_error"


class DomainError(TassError, ValueError):
    code = "domain_error"


class LabelIndexError(TassError, IndexError):
    code = "label_index_error"


class ContractError(TassError):
    code = "contract_error"


class StaleTapeError(ContractError):
    code = "stale_tape"


class ConfigError(TassError, ValueError):
    code = "config_error"


class FormatError(TassError):
    """Malformed tensor file. ``offset`` is the byte where parsing stopped."""

    code = "format_error"

    def __init__(self, message: str, *, offset: int, path: str | None = None) -> None:
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte {offset})")
        self.offset = offset
        self.path = path


class ManifestError(TassError):
    code = "manifest_error"

    def __init__(self, message: str, *, sample: str | None = None) -> None:
        prefix = f"sample {sample}: " if sample is not None else ""
        super().__init__(f"{prefix}{message}")
        self.sample = sample


class MissingFeatureFileError(ManifestError):
    code = "missing_feature_file"


class AnswerIndexError(ManifestError):
    code = "answer_index"


class ManifestDimensionError(ManifestError):
    code = "manifest_dimension"


class SeedError(TassError):
    code = "seed_error"


class CheckpointError(TassError):
    code = "checkpoint_error"


class NonFiniteGradientError(TassError):
    code = "non_finite_gradient"

    def __init__(self, path: str) -> None:
        super().__init__(f"non-finite gradient in parameter '{path}'; step aborted")
        self.path = path


class DivergenceError(TassError):
    code = "diverged"

    def __init__(self, batch_id: int, epoch: int, value: float) -> None:
        super().__init__(f"loss became {value} at epoch {epoch}, batch {batch_id}")
        self.batch_id = batch_id
        self.epoch = epoch
        self.value = value


class GradCheckFailedError(TassError):
    code = "gradcheck_failed"
