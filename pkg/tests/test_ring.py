import numpy as np
import pytest

from mpcinfer.errors import ContractError, EncodingRangeError
from mpcinfer.ring import (
    FixedPointCodec,
    ring_add,
    ring_matmul,
    ring_mul,
    ring_sub,
    truncate_local,
)

F16 = FixedPointCodec(16)


class TestEncodeDecode:
    def test_encode_one(self):
        assert int(F16.encode(1.0)) == 65536

    def test_encode_negative_half(self):
        assert int(F16.encode(-0.5)) == 2**64 - 32768

    def test_encode_zero(self):
        assert int(F16.encode(0.0)) == 0

    def test_decode_one(self):
        assert F16.decode(np.uint64(65536)) == 1.0

    def test_decode_negative_half(self):
        assert F16.decode(np.uint64(2**64 - 32768)) == -0.5

    def test_roundtrip_pi(self):
        v = 3.14159
        assert abs(float(F16.decode(F16.encode(v))) - v) <= 2**-17

    def test_roundtrip_bound_on_range(self):
        rng = np.random.default_rng(0)
        v = rng.uniform(-1024, 1024, size=2000)
        back = F16.decode(F16.encode(v))
        assert np.max(np.abs(back - v)) <= 2**-17

    def test_out_of_range_rejected(self):
        with pytest.raises(EncodingRangeError):
            F16.encode(2.0**48)
        with pytest.raises(EncodingRangeError):
            F16.encode(float("nan"))

    def test_frac_bits_window(self):
        FixedPointCodec(8)
        FixedPointCodec(24)
        with pytest.raises(ContractError):
            FixedPointCodec(7)
        with pytest.raises(ContractError):
            FixedPointCodec(25)


class TestRingOps:
    def test_add_wraps(self):
        assert int(ring_add(np.uint64(2**64 - 1), np.uint64(1))) == 0

    def test_mul_wraps(self):
        assert int(ring_mul(np.uint64(2**32), np.uint64(2**32))) == 0

    def test_sub_wraps(self):
        assert int(ring_sub(np.uint64(0), np.uint64(1))) == 2**64 - 1

    def test_agrees_with_wide_integer_arithmetic(self):
        rng = np.random.default_rng(1)
        a = rng.integers(0, 2**64, size=500, dtype=np.uint64)
        b = rng.integers(0, 2**64, size=500, dtype=np.uint64)
        for op, pyop in ((ring_add, lambda x, y: x + y),
                         (ring_sub, lambda x, y: x - y),
                         (ring_mul, lambda x, y: x * y)):
            got = op(a, b)
            want = np.array(
                [pyop(int(x), int(y)) % 2**64 for x, y in zip(a, b)], dtype=np.uint64
            )
            assert np.array_equal(got, want)

    def test_associative_commutative(self):
        rng = np.random.default_rng(2)
        a, b, c = (rng.integers(0, 2**64, size=200, dtype=np.uint64) for _ in range(3))
        assert np.array_equal(ring_add(ring_add(a, b), c), ring_add(a, ring_add(b, c)))
        assert np.array_equal(ring_mul(a, b), ring_mul(b, a))
        assert np.array_equal(ring_mul(ring_mul(a, b), c), ring_mul(a, ring_mul(b, c)))

    def test_matmul_matches_python_ints(self):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 2**64, size=(4, 5), dtype=np.uint64)
        b = rng.integers(0, 2**64, size=(5, 3), dtype=np.uint64)
        got = ring_matmul(a, b)
        for i in range(4):
            for j in range(3):
                want = sum(int(a[i, t]) * int(b[t, j]) for t in range(5)) % 2**64
                assert int(got[i, j]) == want


class TestTruncateLocal:
    def test_rescales_double_fraction(self):
        v = 1.0
        doubled = np.uint64(int(v * 2**32))
        assert int(truncate_local(doubled, 16)) == int(F16.encode(1.0))

    def test_sign_preserving(self):
        doubled = np.uint64((int(-2.5 * 2**32)) % 2**64)
        back = F16.decode(truncate_local(doubled, 16))
        assert abs(float(back) - (-2.5)) <= 2**-16

    def test_multiply_then_truncate(self):
        prod = ring_mul(F16.encode(3.0), F16.encode(0.5))
        got = F16.decode(truncate_local(prod, 16))
        assert abs(float(got) - 1.5) <= 2**-15

    def test_fixed_point_product_error_bound(self):
        # Error of multiply-then-truncate relative to the real product of
        # the represented operands (operand quantization measured above).
        rng = np.random.default_rng(4)
        x = rng.uniform(-256, 256, size=3000)
        y = rng.uniform(-256, 256, size=3000)
        xq, yq = F16.decode(F16.encode(x)), F16.decode(F16.encode(y))
        prod = ring_mul(F16.encode(x), F16.encode(y))
        got = F16.decode(truncate_local(prod, 16))
        rel = np.abs(got - xq * yq) / np.maximum(np.abs(xq * yq), 1.0)
        assert np.max(rel) <= 2**-15
