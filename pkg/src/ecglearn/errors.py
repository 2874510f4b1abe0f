"""Exception taxonomy shared across the package."""


class EcgLearnError(Exception):
    """Base class for all package errors."""


class ParseError(EcgLearnError):
    """Header or metadata text could not be parsed."""


class FormatError(EcgLearnError):
    """A data file is structurally invalid (wrong shape, non-numeric cell)."""


class UnsupportedRecord(EcgLearnError):
    """Record is syntactically valid but not a 12-lead ECG."""


class ParameterError(EcgLearnError):
    """A numeric parameter is outside its valid range."""


class ContractViolation(EcgLearnError):
    """A documented precondition was violated by the caller."""


class InsufficientBeats(EcgLearnError):
    """Fewer than the required number of heartbeats could be located."""


class SkippedLabel(EcgLearnError):
    """A label's classifier cannot be trained on this split (no positives)."""


class PipelineError(EcgLearnError):
    """A whole training run could not produce any usable model."""


class ManifestMismatch(EcgLearnError):
    """A stored artifact was built against a different feature manifest."""


class PriorMismatch(ManifestMismatch):
    """An importance prior does not match the current feature manifest."""
