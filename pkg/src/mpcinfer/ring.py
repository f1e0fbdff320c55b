"""Fixed-point encoding into the 64-bit ring and local ring arithmetic.

All values live in Z mod 2^64, held as numpy uint64 arrays.  Reals are
scaled by 2^f and rounded; negatives use the two's-complement upper half
of the ring, so decoding is total.  Addition and multiplication wrap
silently, which is exactly the semantics every protocol layer above
relies on.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, EncodingRangeError

RING_BITS = 64
RING_MOD = 1 << RING_BITS


@dataclass(frozen=True)
class FixedPointCodec:
    """Scale-by-2^f encoding of reals into the ring.

    frac_bits is clamped to the supported precision window: below 8 bits
    the numeric kernels lose their tolerances, above 24 the headroom
    before wrap-around disappears.
    """

    frac_bits: int = 16

    def __post_init__(self):
        if not 8 <= self.frac_bits <= 24:
            raise ContractError(f"frac_bits must be in [8, 24], got {self.frac_bits}")

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def max_value(self) -> float:
        return float(2 ** (63 - self.frac_bits))

    def encode(self, v) -> np.ndarray:
        """round(v * 2^f) reduced mod 2^64; raises if |v| is out of range."""
        arr = np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise EncodingRangeError("cannot encode non-finite value")
        if np.any(np.abs(arr) >= self.max_value):
            raise EncodingRangeError(
                f"|value| must be < 2^{63 - self.frac_bits} at f={self.frac_bits}"
            )
        return np.round(arr * float(self.scale)).astype(np.int64).astype(np.uint64)

    def decode(self, r) -> np.ndarray:
        """Signed-interpret r and divide by 2^f."""
        return np.asarray(r, dtype=np.uint64).astype(np.int64).astype(np.float64) / float(
            self.scale
        )


def as_ring(x) -> np.ndarray:
    return np.asarray(x, dtype=np.uint64)


def ring_add(a, b) -> np.ndarray:
    return as_ring(a) + as_ring(b)


def ring_sub(a, b) -> np.ndarray:
    return as_ring(a) - as_ring(b)


def ring_mul(a, b) -> np.ndarray:
    return as_ring(a) * as_ring(b)


def ring_neg(a) -> np.ndarray:
    return np.uint64(0) - as_ring(a)


def ring_matmul(a, b) -> np.ndarray:
    """Matrix product in the ring (wrapping accumulation)."""
    return np.matmul(as_ring(a), as_ring(b))


def signed_view(r) -> np.ndarray:
    return as_ring(r).astype(np.int64)


def truncate_local(r, frac_bits: int) -> np.ndarray:
    """Arithmetic right shift by f in the signed view.

    Rescales a 2f-fraction-bit product back to f bits.  Applied to each
    party's share independently this reconstructs the truncated secret up
    to one LSB, except with probability ~|x|/2^63 when the share split
    wraps (the standard share-local truncation trade-off).
    """
    return (signed_view(r) >> np.int64(frac_bits)).astype(np.uint64)
