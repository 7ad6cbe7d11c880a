"""Exception hierarchy shared across the fontid pipeline."""


class FontIdError(Exception):
    """Base class for all fontid errors."""


class ManifestError(FontIdError):
    """Manifest file is missing, unreadable, or structurally malformed."""


class ValidationError(FontIdError):
    """A value violates its documented contract (e.g. unknown class label)."""


class ParameterError(FontIdError):
    """An argument is outside its documented range."""


class InvalidImageError(FontIdError):
    """Image has zero size or an unsupported layout."""


class OutOfBoundsError(FontIdError):
    """A crop box lies fully outside the page image."""


class NoStrokesError(FontIdError):
    """No foreground ink found in the stroke-width scan band."""


class EmptyPageError(FontIdError):
    """A page has no valid word features, so no BoF can be produced."""


class InsufficientDataError(FontIdError):
    """Fewer samples than an operation needs (codebook, PCA, AUC ...)."""


class InsufficientLabelsError(FontIdError):
    """An operation requires at least one labeled instance."""


class DegenerateTrainingError(FontIdError):
    """Training data misses one of the required classes."""


class EmptyPoolError(FontIdError):
    """The unlabeled pool is empty, so no batch can be selected."""


class ConfigError(FontIdError):
    """Configuration is invalid; message may aggregate several violations."""
