"""Exception hierarchy shared by all apadiag modules."""


class ApaDiagError(Exception):
    """Base class for every error raised by apadiag."""

    category = "error"


class ConfigError(ApaDiagError, ValueError):
    """A configuration field is missing or violates its invariant."""

    category = "config"

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(ApaDiagError, ValueError):
    """An argument is outside the domain of the operation."""

    category = "domain"


class SegmentError(DomainError):
    """Capture length is not a whole number of segments."""

    def __init__(self, length, segment_len):
        self.remainder = length % segment_len
        super().__init__(
            f"capture length {length} is not divisible by segment length "
            f"{segment_len} (remainder {self.remainder})"
        )


class ShapeError(ApaDiagError, ValueError):
    """Array shapes do not chain."""

    category = "shape"


class LabelError(ApaDiagError, ValueError):
    """A class label is outside the model's class range."""

    category = "label"


class StateError(ApaDiagError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""

    category = "state"


class TrainingError(ApaDiagError, RuntimeError):
    """Training diverged."""

    category = "training"

    def __init__(self, epoch, message):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class FileFormatError(ApaDiagError, ValueError):
    """A binary file has a bad magic or an unparseable header."""

    category = "format"


class TruncatedFileError(FileFormatError):
    """A binary file ends before its declared payload."""

    category = "truncated"

    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"file truncated: expected {expected} bytes, got {actual}")


class VersionMismatchError(FileFormatError):
    """A binary file was written by an unsupported format version."""

    category = "version"
