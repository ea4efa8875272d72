"""Exception hierarchy shared across the package."""


class AnomoeError(Exception):
    """Base class for all anomoe-specific errors."""


class DataFormatError(AnomoeError):
    """A file could not be parsed; message carries path and line number."""


class SchemaMismatchError(DataFormatError):
    """A record does not conform to the feature schema it claims to follow."""


class AlignmentError(AnomoeError):
    """Frame-indexed inputs to the pipeline do not line up."""


class InsufficientDataError(AnomoeError):
    """Not enough frames to fit the requested model."""


class EmCollapseError(AnomoeError):
    """EM lost a component (weight below floor) in every allowed restart."""


class NotCalibratedError(AnomoeError):
    """A detection was requested from a model without calibrated thresholds."""
