"""Exception hierarchy shared by every layer."""


class SecTreesError(Exception):
    """Base class for package errors."""


class RangeError(SecTreesError, ValueError):
    """A value does not fit the fixed-point codec."""


class RingMismatch(SecTreesError, ValueError):
    """Two operands live in different rings."""


class RandomnessExhausted(SecTreesError, RuntimeError):
    """A correlated randomness item was missing, reused or of the wrong kind."""


class TransportError(SecTreesError, ConnectionError):
    """The peer went away or sent a malformed frame."""


class TransportTimeout(TransportError, TimeoutError):
    """No frame arrived before the deadline."""


class ConfigMismatch(SecTreesError):
    """Both parties must agree on version, ring, codec and session plan."""


class UsageError(SecTreesError, RuntimeError):
    """API misuse, such as nesting metric scopes or n < k folds."""


class PeerRefusal(SecTreesError):
    """The peer declined to reveal the model."""


class ModelFormatError(SecTreesError, ValueError):
    """A revealed-model or share file could not be parsed."""
