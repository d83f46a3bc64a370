"""Exception hierarchy shared by every stage of the pipeline."""
from __future__ import annotations


class CrossViewError(Exception):
    """Base class; ``module`` names the stage that raised."""

    module = "crossview"


class ConfigError(CrossViewError, ValueError):
    module = "config"


# camera geometry
class GeometryError(CrossViewError):
    module = "camera-geometry"


class DegenerateDepth(GeometryError):
    pass


class NonPositiveDepth(GeometryError, ValueError):
    pass


class CoincidentCenters(GeometryError):
    pass


# ingest
class IngestError(CrossViewError):
    module = "scene-ingest"


class SchemaError(IngestError, ValueError):
    pass


class MissingImage(IngestError, FileNotFoundError):
    pass


class CalibrationMismatch(IngestError):
    pass


class NonMonotonicTimestamps(IngestError):
    pass


class StateLengthMismatch(IngestError):
    pass


# generation; subclasses of SampleSkipped are recoverable, the pipeline
# records them in the skip report and draws another sample
class SampleSkipped(CrossViewError):
    module = "taskgen"


class NoCovisiblePoint(SampleSkipped):
    pass


class CannotSeparate(SampleSkipped):
    pass


class DegenerateProjection(SampleSkipped):
    pass


class TargetCenterNotVisible(SampleSkipped):
    pass


class NoValidPair(SampleSkipped):
    pass


class NoUnambiguousLayout(SampleSkipped):
    pass


class InsufficientSharedCameras(SampleSkipped):
    pass


class AmbiguousDescription(SampleSkipped):
    pass


class UnknownKey(CrossViewError, KeyError):
    module = "meta-taskgen"

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return Exception.__str__(self)


# temporal filter
class TemporalError(CrossViewError):
    module = "temporal-filter"


class NoActionData(TemporalError):
    pass


class TooShort(TemporalError):
    pass


class EmptyInput(TemporalError, ValueError):
    pass


class TimestampOutOfRange(TemporalError):
    pass


class SizeMismatch(TemporalError, ValueError):
    pass


# assembly
class AssemblyError(CrossViewError):
    module = "qa-assembly"


class MarkerOutOfBounds(AssemblyError):
    pass


class TemplateMissing(AssemblyError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EmptyDataset(CrossViewError, ValueError):
    module = "qa-assembly"


# eval
class EvalError(CrossViewError):
    module = "eval-harness"


class UnknownSampleId(EvalError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EndpointError(EvalError):
    pass
