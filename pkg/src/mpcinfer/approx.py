"""Function semantics shared by the plaintext and MPC execution paths.

The engine evaluates every nonlinearity from a small set of
multiplication-friendly building blocks: exp as iterated squaring of
(1 + x/2^n), erf as an odd polynomial on a clamped domain, reciprocal and
inverse square root by Newton iteration.  The plaintext reference model
uses the same definitions in float64, so the MPC layer differs from the
reference by fixed-point noise only, and the distillation pipeline trains
against exactly the functions the protocol runtime executes.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

GELU_VARIANTS = ("exact", "quad")
SOFTMAX_VARIANTS = ("exact", "two_relu", "two_quad")

# exp(x) ~ (1 + x/2^n)^(2^n); one multiplication round per squaring.
EXP_SQUARINGS = 8

# Inputs at publicly masked softmax positions are pinned here so the
# iterated-squaring exp underflows to a clean fixed-point zero.
EXP_MASK_FLOOR = -16.0

# Additive attention-mask constant for the exact/two_relu softmax paths
# (negative infinity is unrepresentable in the ring).
ADDITIVE_MASK_CONST = -1.0e4

# Denominator guard for the approximated softmax variants.
EPS_DEN = 1.0e-6

RECIPROCAL_ITERS = 10
INV_SQRT_ITERS = 10

# erf(x) ~ x * q(x^2 / 9) on |x| <= 3, clamped outside.  q is a degree-7
# least-squares fit constrained to q(1) = 1/3, so the polynomial meets
# the clamp at exactly 1 and saturation is exact.  Rescaling the squared
# argument into [0, 1] keeps every coefficient O(10), which fixed-point
# evaluation needs.  Max fit error 1.5e-4 on the domain.
ERF_CLAMP = 3.0
ERF_SCALED_COEFFS = (
    1.1278934346828084,
    -3.35915048411229,
    8.727289168152614,
    -16.553681650868327,
    21.823200237188424,
    -18.651339029069177,
    9.174051056960467,
    -1.9549293996011818,
)


@dataclass(frozen=True)
class ApproximationSpec:
    """Which GeLU/softmax substitutions a model runs with."""

    gelu_variant: str = "exact"
    softmax_variant: str = "exact"
    two_quad_c: float = 5.0

    def __post_init__(self):
        if self.gelu_variant not in GELU_VARIANTS:
            raise ContractError(f"unknown gelu variant {self.gelu_variant!r}")
        if self.softmax_variant not in SOFTMAX_VARIANTS:
            raise ContractError(f"unknown softmax variant {self.softmax_variant!r}")

    def label(self) -> str:
        return f"{self.gelu_variant}+{self.softmax_variant}"


def all_specs() -> list[ApproximationSpec]:
    return [
        ApproximationSpec(g, sm)
        for g in GELU_VARIANTS
        for sm in SOFTMAX_VARIANTS
    ]


# ---------------------------------------------------------------------------
# Plaintext reference kernels (float64, numpy)
# ---------------------------------------------------------------------------


def exp_limit(t, n_squarings: int = EXP_SQUARINGS):
    """(1 + t/2^n)^(2^n): the engine's definition of exp."""
    y = 1.0 + np.asarray(t, dtype=np.float64) / float(1 << n_squarings)
    for _ in range(n_squarings):
        y = y * y
    return y


def erf_poly(x):
    """Odd-polynomial erf on the clamped domain."""
    xc = np.clip(np.asarray(x, dtype=np.float64), -ERF_CLAMP, ERF_CLAMP)
    t = (xc * xc) / (ERF_CLAMP * ERF_CLAMP)
    q = np.zeros_like(t)
    for c in reversed(ERF_SCALED_COEFFS):
        q = q * t + c
    return xc * q


def gelu_quad(x):
    """0.125 x^2 + 0.25 x + 0.5 (the quadratic stand-in for GeLU)."""
    x = np.asarray(x, dtype=np.float64)
    return 0.125 * x * x + 0.25 * x + 0.5


def gelu_exact(x):
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf_poly(x / np.sqrt(2.0)))


def _as_mask(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    return np.broadcast_to(mask, shape)


def softmax_exact(x, axis: int = -1, mask=None):
    """Stabilized softmax built from the engine's exp.

    A public 0/1 mask is applied additively (large negative constant)
    before the max subtraction; masked positions are then pinned to the
    exp floor so the result underflows to zero instead of exploding.
    """
    x = np.asarray(x, dtype=np.float64)
    m = _as_mask(mask, x.shape)
    z = x + ADDITIVE_MASK_CONST * (1.0 - m)
    z = z - np.max(z, axis=axis, keepdims=True)
    z = z * m + EXP_MASK_FLOOR * (1.0 - m)
    p = exp_limit(z)
    return p / np.sum(p, axis=axis, keepdims=True)


def softmax_two_relu(x, axis: int = -1, mask=None):
    """relu(x) / (sum relu(x) + eps); no max, no exp."""
    x = np.asarray(x, dtype=np.float64)
    m = _as_mask(mask, x.shape)
    z = x + ADDITIVE_MASK_CONST * (1.0 - m)
    p = np.maximum(z, 0.0)
    return p / (np.sum(p, axis=axis, keepdims=True) + EPS_DEN)


def softmax_two_quad(x, axis: int = -1, mask=None, c: float = 5.0):
    """(x + c)^2 masked multiplicatively, normalized by the masked sum.

    The public mask multiplies the squared numerator (and the final
    output), so masked positions are exactly zero and the row never sees
    a large additive constant.
    """
    x = np.asarray(x, dtype=np.float64)
    m = _as_mask(mask, x.shape)
    p = np.square(x + c) * m
    out = p / (np.sum(p, axis=axis, keepdims=True) + EPS_DEN)
    return out * m


def softmax_variant(name: str, x, axis: int = -1, mask=None, c: float = 5.0):
    if name == "exact":
        return softmax_exact(x, axis, mask)
    if name == "two_relu":
        return softmax_two_relu(x, axis, mask)
    if name == "two_quad":
        return softmax_two_quad(x, axis, mask, c)
    raise ContractError(f"unknown softmax variant {name!r}")


def gelu_variant(name: str, x):
    if name == "exact":
        return gelu_exact(x)
    if name == "quad":
        return gelu_quad(x)
    raise ContractError(f"unknown gelu variant {name!r}")


def layernorm(x, gain, bias, eps: float = 1.0e-5, axis: int = -1):
    x = np.asarray(x, dtype=np.float64)
    mean = np.mean(x, axis=axis, keepdims=True)
    var = np.mean(np.square(x - mean), axis=axis, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gain + bias
