"""Exception hierarchy shared across the package."""


class BayesAttackError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(BayesAttackError):
    """Array arguments have incompatible or unexpected dimensions."""


class ShapeMismatch(BayesAttackError):
    """An image, latent, or weight tensor has an unusable shape."""


class NotPositiveDefinite(BayesAttackError):
    """A matrix could not be factorized even with the maximum jitter."""


class InvalidLabel(BayesAttackError):
    """A class label is outside the valid range for the model at hand."""


class WeightsFormatError(BayesAttackError):
    """A serialized weights file is malformed."""


class IdxFormatError(BayesAttackError):
    """Base class for IDX dataset parsing failures."""


class BadMagicError(IdxFormatError):
    """An IDX file does not start with the expected magic number."""


class CountMismatchError(IdxFormatError):
    """Image and label files disagree on the number of records."""


class TruncatedFileError(IdxFormatError):
    """An IDX file ends before its header-declared payload does."""


class RemoteModelError(BayesAttackError):
    """Base class for remote-model failures."""


class TransportError(RemoteModelError):
    """The model endpoint could not be reached or the connection failed."""


class ProtocolError(RemoteModelError):
    """The endpoint replied with something other than a valid response."""


class NormalizationError(RemoteModelError):
    """Returned log-probabilities do not exponentiate to a distribution."""
