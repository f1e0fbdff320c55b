"""Exception types shared across the engine."""


class MpcError(Exception):
    """Base class for all engine errors."""


class ContractError(MpcError):
    """Caller violated an API contract (shape, kind, or party mismatch)."""


class EncodingRangeError(MpcError):
    """Real value does not fit into the fixed-point range."""


class DealerError(MpcError):
    """Correlated randomness misuse (reuse of a one-time object, bad request)."""


class TransportError(MpcError):
    """Channel-level failure: peer disconnect, timeout, corrupt frame."""


class ProtocolDesyncError(TransportError):
    """The two parties disagree on the protocol step sequence."""


class TrainingError(MpcError):
    """Plaintext training fault: NaN loss or exploding gradients."""
