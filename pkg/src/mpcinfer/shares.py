"""Additive/binary secret shares and the trusted dealer.

Arithmetic shares split a ring tensor x into (x + z, -z); binary shares
split the bit pattern into an XOR pair.  The dealer is a logical third
party that derives every piece of correlated randomness as a pure
function of (seed, kind, counter), so the two computation parties can
consume matching halves with no shared state: their protocol schedules
are symmetric, hence their request counters stay aligned.  The dealer
never receives live protocol data, only shapes.

SharedTensors are immutable values and safe to move between threads;
dealer generation is pure given its seed.
"""

from dataclasses import dataclass, field

import numpy as np

from . import prg
from .errors import ContractError, DealerError
from .ring import as_ring, ring_matmul, ring_neg

ARITHMETIC = "arithmetic"
BINARY = "binary"

WORD = np.uint64


@dataclass(frozen=True)
class SharedTensor:
    """One party's share of a secret tensor."""

    party_id: int
    share_kind: str
    data: np.ndarray

    def __post_init__(self):
        if self.party_id not in (1, 2):
            raise ContractError(f"party_id must be 1 or 2, got {self.party_id}")
        if self.share_kind not in (ARITHMETIC, BINARY):
            raise ContractError(f"unknown share kind {self.share_kind!r}")
        if self.data.dtype != WORD:
            raise ContractError("share data must be uint64")

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "SharedTensor":
        return SharedTensor(self.party_id, self.share_kind, as_ring(data))


def share(secret, kind: str, rng) -> tuple[SharedTensor, SharedTensor]:
    """Split a ring tensor into a pair of shares, deterministic per rng/seed."""
    if isinstance(rng, (int, np.integer)):
        rng = prg.generator(int(rng), "share")
    secret = as_ring(secret)
    mask = prg.ring_uniform(rng, secret.shape)
    if kind == ARITHMETIC:
        s1, s2 = secret + mask, ring_neg(mask)
    elif kind == BINARY:
        s1, s2 = secret ^ mask, mask
    else:
        raise ContractError(f"unknown share kind {kind!r}")
    return SharedTensor(1, kind, s1), SharedTensor(2, kind, s2)


def reconstruct(s1: SharedTensor, s2: SharedTensor) -> np.ndarray:
    """Combine both parties' shares back into the secret ring tensor."""
    if {s1.party_id, s2.party_id} != {1, 2}:
        raise ContractError("need one share from each party")
    if s1.share_kind != s2.share_kind:
        raise ContractError("share kinds differ")
    if s1.shape != s2.shape:
        raise ContractError(f"share shapes differ: {s1.shape} vs {s2.shape}")
    if s1.share_kind == ARITHMETIC:
        return s1.data + s2.data
    return s1.data ^ s2.data


def _check_arith_pair(x: SharedTensor, y: SharedTensor):
    if x.share_kind != ARITHMETIC or y.share_kind != ARITHMETIC:
        raise ContractError("operation requires arithmetic shares")
    if x.party_id != y.party_id:
        raise ContractError("shares belong to different parties")


def add_local(x: SharedTensor, y: SharedTensor) -> SharedTensor:
    """Elementwise share addition; costs zero communication."""
    _check_arith_pair(x, y)
    return x.with_data(x.data + y.data)


def sub_local(x: SharedTensor, y: SharedTensor) -> SharedTensor:
    _check_arith_pair(x, y)
    return x.with_data(x.data - y.data)


def neg_local(x: SharedTensor) -> SharedTensor:
    return x.with_data(ring_neg(x.data))


def add_public(x: SharedTensor, k) -> SharedTensor:
    """Add a public ring constant: exactly party 1 adds, party 2 passes through."""
    if x.share_kind != ARITHMETIC:
        raise ContractError("add_public requires an arithmetic share")
    if x.party_id == 1:
        return x.with_data(x.data + as_ring(k))
    return x


def xor_local(x: SharedTensor, y: SharedTensor) -> SharedTensor:
    if x.share_kind != BINARY or y.share_kind != BINARY:
        raise ContractError("xor_local requires binary shares")
    if x.party_id != y.party_id:
        raise ContractError("shares belong to different parties")
    return x.with_data(x.data ^ y.data)


# ---------------------------------------------------------------------------
# Dealer-issued correlated randomness
# ---------------------------------------------------------------------------

ELEMENTWISE_TRIPLE = "elementwise_triple"
MATMUL_TRIPLE = "matmul_triple"
BIT_PAIR = "bit_pair"
BINARY_AND_TRIPLE = "binary_and_triple"
ADDER_FRONT = "adder_front"

DEALER_KINDS = (ELEMENTWISE_TRIPLE, MATMUL_TRIPLE, BIT_PAIR, BINARY_AND_TRIPLE, ADDER_FRONT)


@dataclass
class _OneTime:
    """Mixin state for single-use correlated randomness."""

    _consumed: bool = field(default=False, init=False, repr=False)

    def mark_consumed(self):
        if self._consumed:
            raise DealerError(f"{type(self).__name__} reused; dealer objects are one-time")
        self._consumed = True


@dataclass
class BeaverTripleShare(_OneTime):
    """Per-party half of a multiplication triple with c = a*b (or a@b)."""

    party_id: int
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


@dataclass
class BitPairShare(_OneTime):
    """Per-party half of bit pairs: packed binary share of the random bits
    plus an arithmetic share of each individual bit (unscaled 0/1)."""

    party_id: int
    nbits: int
    binary: np.ndarray      # packed words, bit b of each word is bit b's value
    arith_bits: np.ndarray  # shape (nbits,) + elem shape


@dataclass
class AndTripleShare(_OneTime):
    """Per-party half of k batched binary AND triples (c = a & b bitwise)."""

    party_id: int
    a: np.ndarray  # shape (k,) + word shape
    b: np.ndarray
    c: np.ndarray


@dataclass
class AdderFrontShare(_OneTime):
    """Per-party half of the level-1 adder gadget.

    The first carry-lookahead level multiplies operands each party knows
    in the clear, so the dealer hands each party two plaintext masks for
    its own operands and XOR-shares of the five mask products the level
    needs.  Mask products involving a shifted operand reuse the shifted
    mask, which is what lets one exchange open everything at once.
    """

    party_id: int
    own_mask: np.ndarray        # mask for the party's raw operand (x or y)
    own_pair_mask: np.ndarray   # mask for its local product x&(x<<1) or y&(y<<1)
    mono: dict                  # XOR-shares of {ab, ab1, a1b, gb1, da1}


def _split_ring(gen, secret):
    m = prg.ring_uniform(gen, secret.shape)
    return secret + m, ring_neg(m)


def _split_xor(gen, secret):
    m = prg.ring_uniform(gen, secret.shape)
    return secret ^ m, m


def dealer_gen(kind: str, params: dict, seed: int, counter: int):
    """Generate both halves of one correlated-randomness object.

    Pure in (kind, params, seed, counter): the in-process client, the
    network dealer endpoint and the test suite all call this same
    function and see identical values.
    """
    gen = prg.generator(seed, "dealer", kind, counter, repr(sorted(params.items())))
    if kind == ELEMENTWISE_TRIPLE:
        sx, sy = tuple(params["shape_x"]), tuple(params["shape_y"])
        a = prg.ring_uniform(gen, sx)
        b = prg.ring_uniform(gen, sy)
        c = a * b
        a1, a2 = _split_ring(gen, a)
        b1, b2 = _split_ring(gen, b)
        c1, c2 = _split_ring(gen, c)
        return (
            BeaverTripleShare(1, a1, b1, c1),
            BeaverTripleShare(2, a2, b2, c2),
        )
    if kind == MATMUL_TRIPLE:
        sx, sy = tuple(params["shape_x"]), tuple(params["shape_y"])
        a = prg.ring_uniform(gen, sx)
        b = prg.ring_uniform(gen, sy)
        c = ring_matmul(a, b)
        a1, a2 = _split_ring(gen, a)
        b1, b2 = _split_ring(gen, b)
        c1, c2 = _split_ring(gen, c)
        return (
            BeaverTripleShare(1, a1, b1, c1),
            BeaverTripleShare(2, a2, b2, c2),
        )
    if kind == BIT_PAIR:
        shape, nbits = tuple(params["shape"]), int(params["nbits"])
        if not 1 <= nbits <= 64:
            raise DealerError(f"nbits must be in [1, 64], got {nbits}")
        r = prg.ring_uniform(gen, shape)
        if nbits < 64:
            r &= np.uint64((1 << nbits) - 1)
        rb1, rb2 = _split_xor(gen, r)
        bits = np.stack(
            [(r >> np.uint64(b)) & np.uint64(1) for b in range(nbits)], axis=0
        )
        ra1, ra2 = _split_ring(gen, bits)
        return (
            BitPairShare(1, nbits, rb1, ra1),
            BitPairShare(2, nbits, rb2, ra2),
        )
    if kind == BINARY_AND_TRIPLE:
        shape, count = tuple(params["shape"]), int(params["count"])
        full = (count,) + shape
        a = prg.ring_uniform(gen, full)
        b = prg.ring_uniform(gen, full)
        c = a & b
        a1, a2 = _split_xor(gen, a)
        b1, b2 = _split_xor(gen, b)
        c1, c2 = _split_xor(gen, c)
        return (
            AndTripleShare(1, a1, b1, c1),
            AndTripleShare(2, a2, b2, c2),
        )
    if kind == ADDER_FRONT:
        shape = tuple(params["shape"])
        one = np.uint64(1)
        a = prg.ring_uniform(gen, shape)   # masks party 1's operand x
        g = prg.ring_uniform(gen, shape)   # masks party 1's x & (x<<1)
        b = prg.ring_uniform(gen, shape)   # masks party 2's operand y
        d = prg.ring_uniform(gen, shape)   # masks party 2's y & (y<<1)
        a1_, b1_ = a << one, b << one
        products = {
            "ab": a & b,
            "ab1": a & b1_,
            "a1b": a1_ & b,
            "gb1": g & b1_,
            "da1": d & a1_,
        }
        halves1, halves2 = {}, {}
        for name in sorted(products):
            h1, h2 = _split_xor(gen, products[name])
            halves1[name], halves2[name] = h1, h2
        return (
            AdderFrontShare(1, a, g, halves1),
            AdderFrontShare(2, b, d, halves2),
        )
    raise DealerError(f"unknown dealer kind {kind!r}")


class DealerClient:
    """Per-party on-demand view of the dealer stream.

    Holds one monotone counter per kind; because the two parties execute
    identical protocol schedules, their counters advance in lockstep and
    matching halves are consumed.  Subclasses fetch the half either by
    local derivation or over the network.
    """

    def __init__(self, party_id: int):
        self.party_id = party_id
        self._counters: dict[str, int] = {}

    def _next_counter(self, kind: str) -> int:
        c = self._counters.get(kind, 0)
        self._counters[kind] = c + 1
        return c

    def _fetch(self, kind: str, params: dict, counter: int):
        raise NotImplementedError

    def elementwise_triple(self, shape_x, shape_y) -> BeaverTripleShare:
        params = {"shape_x": tuple(shape_x), "shape_y": tuple(shape_y)}
        return self._fetch(ELEMENTWISE_TRIPLE, params, self._next_counter(ELEMENTWISE_TRIPLE))

    def matmul_triple(self, shape_x, shape_y) -> BeaverTripleShare:
        params = {"shape_x": tuple(shape_x), "shape_y": tuple(shape_y)}
        return self._fetch(MATMUL_TRIPLE, params, self._next_counter(MATMUL_TRIPLE))

    def bit_pairs(self, shape, nbits: int) -> BitPairShare:
        params = {"shape": tuple(shape), "nbits": int(nbits)}
        return self._fetch(BIT_PAIR, params, self._next_counter(BIT_PAIR))

    def and_triples(self, shape, count: int) -> AndTripleShare:
        params = {"shape": tuple(shape), "count": int(count)}
        return self._fetch(BINARY_AND_TRIPLE, params, self._next_counter(BINARY_AND_TRIPLE))

    def adder_front(self, shape) -> AdderFrontShare:
        params = {"shape": tuple(shape)}
        return self._fetch(ADDER_FRONT, params, self._next_counter(ADDER_FRONT))


class LocalDealerClient(DealerClient):
    """Dealer embedded in-process: derives its half directly from the seed."""

    def __init__(self, party_id: int, seed: int):
        super().__init__(party_id)
        self.seed = int(seed)

    def _fetch(self, kind, params, counter):
        pair = dealer_gen(kind, params, self.seed, counter)
        return pair[self.party_id - 1]
