"""Exception types shared across the package."""


class FilterDecodeError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FilterDecodeError, ValueError):
    """Tensor or layer dimensions are incompatible."""


class LayerKindError(FilterDecodeError, ValueError):
    """An operation was pointed at a layer of the wrong kind."""


class FormatError(FilterDecodeError, ValueError):
    """A binary file does not follow its declared format."""


class BadMagicError(FormatError):
    pass


class TruncatedBlobError(FormatError):
    pass


class ManifestMismatchError(FormatError):
    pass


class CountMismatchError(FormatError):
    """Image and label files disagree on the number of items."""


class DivergedError(FilterDecodeError, RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}")
        self.epoch = epoch


class ConsistencyError(FilterDecodeError, RuntimeError):
    """Internal invariant violated; indicates a bug rather than bad input."""
