"""Exception hierarchy shared across the pipeline.

Two broad families matter for the CLI exit codes: configuration problems
(bad flags, missing files, schema violations in config-like inputs) exit
with status 1, data problems (malformed audio, mismatched manifests)
exit with status 2.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PipelineError):
    """Bad configuration: missing/invalid flags, schemas, rule files."""


class DataError(PipelineError):
    """Bad data: malformed audio, inconsistent manifests, degenerate inputs."""


# --- audio ---

class UnsupportedFormat(DataError):
    """WAV file is not PCM, is truncated, or has more than 2 channels."""


class EmptySignal(DataError):
    """Operation requires a non-empty signal."""


class SignalTooShort(DataError):
    """Signal shorter than a single analysis frame."""


# --- features ---

class EmptySeries(DataError):
    """Aggregation requires at least one frame."""


class MissingStats(ConfigError):
    """Corpus statistics do not cover every feature dimension."""


# --- classifier ---

class TooFewSamples(DataError):
    """Scaler fitting needs at least two samples."""


class DegenerateLabels(DataError):
    """Training requires all three emotion classes to be present."""


class NonFiniteInput(DataError):
    """Feature matrix or vector contains NaN or infinity."""


# --- reasoning / LLM ---

class SchemaError(ConfigError):
    """Rule file or manifest violates its documented schema."""


class EmptyRules(ConfigError):
    """Prompt version requires a non-empty rule set."""


class MissingEvidence(ConfigError):
    """Hybrid prompt version requires ML evidence."""


class EmptyGeneration(DataError):
    """Automatic rule generation produced nothing parseable."""


class LlmError(PipelineError):
    """Base for LLM transport failures. Carries the sample id, when known,
    so the caller can apply per-sample fallback."""

    def __init__(self, message, sample_id=None):
        super().__init__(message)
        self.sample_id = sample_id


class LlmTimeout(LlmError):
    pass


class LlmTransportError(LlmError):
    pass


class LlmRateLimited(LlmError):
    pass


# --- evaluation ---

class InvalidTable(DataError):
    """Annotation table violates its row-sum or non-negativity invariants."""


class LengthMismatch(DataError):
    """Paired label sequences have different lengths."""


class IdMismatch(DataError):
    """Predictions and gold labels do not align by sample id."""


class EmptyInput(DataError):
    """Metric requires at least one sample."""


# --- corpus / manifests ---

class DuplicateId(DataError):
    """Manifest contains a repeated sample id."""


class MissingGold(DataError):
    """Operation requires gold labels on every manifest entry."""


class ManifestError(DataError):
    """Manifest rows are missing required files or columns."""


# --- refinement ---

class VersionConflict(ConfigError):
    """Rule proposal references a rule-set version that is no longer current."""
