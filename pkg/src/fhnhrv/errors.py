"""Exception hierarchy shared across the package."""


class FhnHrvError(Exception):
    """Base class for all package errors."""


class ParseError(FhnHrvError):
    """Malformed input record; carries the offending line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ValidationError(FhnHrvError):
    """A value violates a documented invariant."""


class IntegrityError(FhnHrvError):
    """Dataset-level inconsistency, e.g. one patient with two labels."""


class ConfigError(FhnHrvError):
    """A configuration that cannot produce valid output."""


class SpanError(FhnHrvError):
    """A recording is too short for the requested window."""


class DivergenceError(FhnHrvError):
    """Numerical blow-up during ODE integration."""

    def __init__(self, message, step=None, neuron=None):
        super().__init__(message)
        self.step = step
        self.neuron = neuron


class DomainError(FhnHrvError):
    """Math primitive applied outside its domain (log <= 0, div by 0)."""


class OptimizerError(FhnHrvError):
    """Non-finite gradient or invalid optimizer state."""


class PretuneError(FhnHrvError):
    """Oscillator pre-tuning could not find any feasible candidate."""


class MetricError(FhnHrvError):
    """A metric is undefined for the given inputs (e.g. one class absent)."""


class FeatureError(FhnHrvError):
    """Degenerate input to a feature computation."""


class TrainingError(FhnHrvError):
    """Classifier training received unusable data."""


class CheckpointError(FhnHrvError):
    """Unreadable or incompatible model checkpoint."""
