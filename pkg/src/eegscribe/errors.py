"""Exception types shared across the pipeline.

Every error a caller is expected to branch on gets its own class; message
text carries the numbers (shapes, offsets, lengths) needed to debug without
a stack trace.
"""


class EegScribeError(Exception):
    """Base class for all package errors."""


class ShapeError(EegScribeError):
    """Tensor-op shape mismatch; names the op and both shapes."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class EdfError(EegScribeError):
    """Base class for EDF parsing failures."""


class TruncatedHeaderError(EdfError):
    pass


class RecordSizeMismatchError(EdfError):
    pass


class ZeroDigitalRangeError(EdfError):
    pass


class SignalProcessingError(EegScribeError):
    """Preprocessing precondition violated (rates, band edges, durations)."""


class ReportStructuringError(EegScribeError):
    """Report-structuring contract violated (bad span, bad lexicon rule)."""


class ConfigError(EegScribeError):
    """Invalid configuration file or inconsistent option combination."""


class ContextOverflowError(EegScribeError):
    """A sequence exceeded a model's position budget; message carries both lengths."""


class TrainingError(EegScribeError):
    """Non-finite loss or other unrecoverable optimization failure."""
