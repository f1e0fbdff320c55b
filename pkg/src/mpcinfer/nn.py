"""Transformer building blocks executed under MPC, plus the weight
container and model-config document formats.

The user party (1) secret-shares one-hot token rows, the model party (2)
secret-shares every weight tensor; the embedding is a private matrix
product, so token identities never leave the user.  Each block wraps its
protocol traffic in a ledger scope so the per-function communication
breakdown {MatMul, GeLU, Softmax, LayerNorm, Other} is measurable.
"""

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import protocols as P
from .approx import (
    ADDITIVE_MASK_CONST,
    EPS_DEN,
    EXP_MASK_FLOOR,
    ApproximationSpec,
)
from .errors import ContractError
from .protocols import ProtocolSession
from .shares import SharedTensor

WEIGHT_MAGIC = b"MPCW"
WEIGHT_VERSION = 1

LN_EPS = 1.0e-5


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    hidden: int = 32
    heads: int = 2
    ffn_mult: int = 4
    vocab: int = 64
    max_seq: int = 16
    n_classes: int = 4
    approx: ApproximationSpec = field(default_factory=ApproximationSpec)

    def __post_init__(self):
        dims = (self.layers, self.hidden, self.heads, self.ffn_mult,
                self.vocab, self.max_seq, self.n_classes)
        if any(d < 1 for d in dims[1:]):
            raise ContractError("all model dimensions must be >= 1")
        if self.layers < 0:
            raise ContractError("layers must be >= 0")
        if self.hidden % self.heads:
            raise ContractError("hidden must be divisible by heads")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def ffn_dim(self) -> int:
        return self.hidden * self.ffn_mult


def toy_config(approx: ApproximationSpec | None = None) -> ModelConfig:
    """The desk-scale configuration used throughout the test suite."""
    return ModelConfig(approx=approx or ApproximationSpec())


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------


def weight_names(config: ModelConfig) -> list[str]:
    names = ["embedding"]
    for i in range(config.layers):
        for w in ("wq", "wk", "wv", "wo"):
            names.append(f"layer{i}.attn.{w}")
        names += [f"layer{i}.ln1.gain", f"layer{i}.ln1.bias"]
        names += [f"layer{i}.ffn.w1", f"layer{i}.ffn.w2"]
        names += [f"layer{i}.ln2.gain", f"layer{i}.ln2.bias"]
    names.append("prediction")
    return names


def weight_shape(config: ModelConfig, name: str) -> tuple:
    h, f = config.hidden, config.ffn_dim
    if name == "embedding":
        return (config.vocab, h)
    if name == "prediction":
        return (h, config.n_classes)
    leaf = name.split(".", 1)[1]
    return {
        "attn.wq": (h, h), "attn.wk": (h, h), "attn.wv": (h, h), "attn.wo": (h, h),
        "ffn.w1": (h, f), "ffn.w2": (f, h),
        "ln1.gain": (h,), "ln1.bias": (h,), "ln2.gain": (h,), "ln2.bias": (h,),
    }[leaf]


def init_weights(config: ModelConfig, seed: int) -> dict:
    """Fresh random weights; scales keep activations O(1) so the fixed
    point kernels stay inside their domains."""
    rng = np.random.default_rng(seed)
    out = {}
    for name in weight_names(config):
        shape = weight_shape(config, name)
        if name.endswith(".gain"):
            out[name] = np.ones(shape)
        elif name.endswith(".bias"):
            out[name] = np.zeros(shape)
        elif name == "embedding":
            out[name] = rng.normal(0.0, 1.0, shape)
        else:
            out[name] = rng.normal(0.0, shape[0] ** -0.5, shape)
    return out


def check_weights(config: ModelConfig, tensors: dict):
    for name in weight_names(config):
        if name not in tensors:
            raise ContractError(f"missing weight tensor {name!r}")
        got = tuple(np.shape(tensors[name]))
        want = weight_shape(config, name)
        if got != want:
            raise ContractError(f"{name}: shape {got} does not match config {want}")
        if not np.all(np.isfinite(tensors[name])):
            raise ContractError(f"{name}: non-finite values")


# ---------------------------------------------------------------------------
# Config document and weight container formats
# ---------------------------------------------------------------------------


def config_doc(config: ModelConfig) -> str:
    lines = [
        f"layers = {config.layers}",
        f"hidden = {config.hidden}",
        f"heads = {config.heads}",
        f"ffn_mult = {config.ffn_mult}",
        f"vocab = {config.vocab}",
        f"max_seq = {config.max_seq}",
        f"n_classes = {config.n_classes}",
        f"gelu = {config.approx.gelu_variant}",
        f"softmax = {config.approx.softmax_variant}",
        f"two_quad_c = {config.approx.two_quad_c!r}",
    ]
    return "\n".join(lines) + "\n"


def parse_kv_doc(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ContractError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_config_doc(text: str) -> ModelConfig:
    kv = parse_kv_doc(text)
    approx = ApproximationSpec(
        gelu_variant=kv.get("gelu", "exact"),
        softmax_variant=kv.get("softmax", "exact"),
        two_quad_c=float(kv.get("two_quad_c", 5.0)),
    )
    return ModelConfig(
        layers=int(kv["layers"]), hidden=int(kv["hidden"]), heads=int(kv["heads"]),
        ffn_mult=int(kv["ffn_mult"]), vocab=int(kv["vocab"]),
        max_seq=int(kv["max_seq"]), n_classes=int(kv.get("n_classes", 4)),
        approx=approx,
    )


def save_weights(path: str, config: ModelConfig, tensors: dict):
    check_weights(config, tensors)
    doc = config_doc(config).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<I", WEIGHT_VERSION))
        fh.write(struct.pack("<I", len(doc)))
        fh.write(doc)
        for name in weight_names(config):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            blob = name.encode()
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_weights(path: str) -> tuple[ModelConfig, dict]:
    with open(path, "rb") as fh:
        buf = fh.read()
    view = io.BytesIO(buf)
    if view.read(4) != WEIGHT_MAGIC:
        raise ContractError(f"{path}: not a weight container")
    (version,) = struct.unpack("<I", view.read(4))
    if version != WEIGHT_VERSION:
        raise ContractError(f"{path}: unsupported container version {version}")
    (doc_len,) = struct.unpack("<I", view.read(4))
    config = parse_config_doc(view.read(doc_len).decode())
    tensors = {}
    while view.tell() < len(buf):
        (name_len,) = struct.unpack("<I", view.read(4))
        name = view.read(name_len).decode()
        (rank,) = struct.unpack("<I", view.read(4))
        shape = struct.unpack(f"<{rank}I", view.read(4 * rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(view.read(8 * count), dtype="<f8").reshape(shape).copy()
    check_weights(config, tensors)
    return config, tensors


def config_digest(config: ModelConfig, seed: int, frac_bits: int) -> bytes:
    blob = f"{config_doc(config)}|seed={seed}|f={frac_bits}".encode()
    return hashlib.sha256(blob).digest()


# ---------------------------------------------------------------------------
# MPC blocks
# ---------------------------------------------------------------------------


def one_hot(tokens, vocab: int) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if np.any(tokens < 0) or np.any(tokens >= vocab):
        raise ContractError("token id outside vocabulary")
    out = np.zeros(tokens.shape + (vocab,), dtype=np.float64)
    np.put_along_axis(out, tokens[..., None], 1.0, axis=-1)
    return out


def share_weights(s: ProtocolSession, config: ModelConfig, tensors: dict | None,
                  model_party: int = 2) -> dict:
    """Model party contributes every weight tensor, in canonical order."""
    shared = {}
    for name in weight_names(config):
        values = None
        if s.party_id == model_party:
            values = tensors[name]
        shared[name] = P.share_real_input(s, values, model_party,
                                          weight_shape(config, name))
    return shared


def share_tokens(s: ProtocolSession, config: ModelConfig, tokens, seq_len: int,
                 user_party: int = 1) -> SharedTensor:
    """User contributes the one-hot token matrix."""
    onehot = one_hot(tokens, config.vocab) if s.party_id == user_party else None
    return P.share_real_input(s, onehot, user_party, (seq_len, config.vocab))


def mpc_gelu(s: ProtocolSession, x: SharedTensor, spec: ApproximationSpec) -> SharedTensor:
    with s.ledger.scope("GeLU"):
        if spec.gelu_variant == "quad":
            sq = P.square(s, x)
            out = P.add(s, P.mul_public_real(s, sq, 0.125), P.mul_public_real(s, x, 0.25))
            return P.add_public_real(s, out, 0.5)
        e = P.erf_taylor(s, P.mul_public_real(s, x, 1.0 / np.sqrt(2.0)))
        gate = P.add_public_real(s, P.mul_public_real(s, e, 0.5), 0.5)
        return P.mul(s, x, gate)


def _broadcast_mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=np.float64)
    return np.broadcast_to(np.asarray(mask, dtype=np.float64), shape).copy()


def mpc_softmax(s: ProtocolSession, x: SharedTensor, spec: ApproximationSpec,
                mask=None, axis: int = -1) -> SharedTensor:
    """Softmax along the last axis under the configured variant.

    The mask is public: 1 keeps a position, 0 removes it.  The exact and
    two_relu paths take it additively (a large negative constant); the
    two_quad path multiplies the squared numerator and the final output
    by it, so masked positions are exactly zero and nothing explodes.
    """
    if axis not in (-1, x.data.ndim - 1):
        raise ContractError("softmax expects the reduction axis to be last")
    n = x.shape[-1]
    m = _broadcast_mask(mask, x.shape)
    with s.ledger.scope("Softmax"):
        if spec.softmax_variant == "two_quad":
            base = P.add_public_real(s, x, spec.two_quad_c)
            num = P.mul_public_int_array(s, P.square(s, base), m)
            den = P.sum_axis(s, num, axis=-1, keepdims=True)
            den = P.add_public_real(s, P.mul_public_real(s, den, 1.0 / n), EPS_DEN / n)
            inv = P.reciprocal_nr(s, den)
            out = P.mul(s, P.mul_public_real(s, num, 1.0 / n), inv)
            return P.mul_public_int_array(s, out, m)

        additive = ADDITIVE_MASK_CONST * (1.0 - m)
        z = P.add_public_ring(s, x, s.codec.encode(additive))
        if spec.softmax_variant == "two_relu":
            p = P.relu(s, z)
            den = P.sum_axis(s, p, axis=-1, keepdims=True)
            den = P.add_public_real(s, P.mul_public_real(s, den, 1.0 / n), EPS_DEN / n)
            inv = P.reciprocal_nr(s, den)
            return P.mul(s, P.mul_public_real(s, p, 1.0 / n), inv)

        mx = P.max_tree(s, z, axis=-1, keepdims=True)
        t = P.sub(s, z, mx)
        # Publicly masked positions are pinned to the exp floor so the
        # iterated squaring underflows to zero instead of wrapping.
        t = P.add_public_ring(s, P.mul_public_int_array(s, t, m),
                              s.codec.encode(EXP_MASK_FLOOR * (1.0 - m)))
        p = P.exp_iter(s, t)
        den = P.sum_axis(s, p, axis=-1, keepdims=True)
        inv = P.reciprocal_nr(s, den)
        return P.mul(s, p, inv)


def mpc_layernorm(s: ProtocolSession, x: SharedTensor, gain: SharedTensor,
                  bias: SharedTensor) -> SharedTensor:
    h = x.shape[-1]
    with s.ledger.scope("LayerNorm"):
        mean = P.mul_public_real(s, P.sum_axis(s, x, -1, keepdims=True), 1.0 / h)
        centered = P.sub(s, x, mean)
        var = P.mul_public_real(
            s, P.sum_axis(s, P.square(s, centered), -1, keepdims=True), 1.0 / h
        )
        rstd = P.inv_sqrt_nr(s, P.add_public_real(s, var, LN_EPS))
        normed = P.mul(s, centered, rstd)
        return P.add(s, P.mul(s, normed, gain), bias)


def _split_heads(x: SharedTensor, heads: int) -> SharedTensor:
    seq, hidden = x.shape
    y = P.reshape(x, (seq, heads, hidden // heads))
    return P.transpose(y, (1, 0, 2))


def _merge_heads(x: SharedTensor) -> SharedTensor:
    heads, seq, dh = x.shape
    return P.reshape(P.transpose(x, (1, 0, 2)), (seq, heads * dh))


def mpc_attention(s: ProtocolSession, q: SharedTensor, k: SharedTensor,
                  v: SharedTensor, spec: ApproximationSpec, mask=None) -> SharedTensor:
    """Multi-head scaled dot-product attention on (heads, seq, d_head) shares."""
    d_head = q.shape[-1]
    with s.ledger.scope("MatMul"):
        scores = P.matmul(s, q, P.swap_last_axes(k))
    scores = P.mul_public_real(s, scores, d_head ** -0.5)
    key_mask = None if mask is None else np.asarray(mask, dtype=np.float64)[None, None, :]
    probs = mpc_softmax(s, scores, spec, mask=key_mask)
    with s.ledger.scope("MatMul"):
        return P.matmul(s, probs, v)


def mpc_forward(s: ProtocolSession, shared_tokens: SharedTensor, shared_weights: dict,
                config: ModelConfig, mask=None) -> SharedTensor:
    """Full private forward pass: one-hot tokens in, class logits out."""
    w = shared_weights
    with s.ledger.scope("MatMul"):
        h = P.matmul(s, shared_tokens, w["embedding"])
    for i in range(config.layers):
        pre = f"layer{i}"
        with s.ledger.scope("MatMul"):
            q = _split_heads(P.matmul(s, h, w[f"{pre}.attn.wq"]), config.heads)
            k = _split_heads(P.matmul(s, h, w[f"{pre}.attn.wk"]), config.heads)
            v = _split_heads(P.matmul(s, h, w[f"{pre}.attn.wv"]), config.heads)
        ctx = _merge_heads(mpc_attention(s, q, k, v, config.approx, mask))
        with s.ledger.scope("MatMul"):
            attn_out = P.matmul(s, ctx, w[f"{pre}.attn.wo"])
        h = mpc_layernorm(s, P.add(s, h, attn_out),
                          w[f"{pre}.ln1.gain"], w[f"{pre}.ln1.bias"])
        with s.ledger.scope("MatMul"):
            ffn_mid = P.matmul(s, h, w[f"{pre}.ffn.w1"])
        ffn_mid = mpc_gelu(s, ffn_mid, config.approx)
        with s.ledger.scope("MatMul"):
            ffn_out = P.matmul(s, ffn_mid, w[f"{pre}.ffn.w2"])
        h = mpc_layernorm(s, P.add(s, h, ffn_out),
                          w[f"{pre}.ln2.gain"], w[f"{pre}.ln2.bias"])
    first = h.with_data(h.data[:1].copy())
    with s.ledger.scope("MatMul"):
        logits = P.matmul(s, first, w["prediction"])
    return P.reshape(logits, (config.n_classes,))


def run_private_inference(s: ProtocolSession, config: ModelConfig, tokens=None,
                          weights: dict | None = None, mask=None,
                          seq_len: int | None = None,
                          user_party: int = 1, model_party: int = 2):
    """Session driver: handshake, input sharing, forward, output reveal.

    seq_len is public (both parties pass the same value); it defaults to
    the config's max_seq.  Returns decoded logits on the user party, None
    on the model party.
    """
    seq_len = config.max_seq if seq_len is None else int(seq_len)
    if s.party_id == user_party and tokens is not None and len(np.asarray(tokens)) != seq_len:
        raise ContractError("token count does not match the public seq_len")
    s.handshake(config_digest(config, s.sharing_seed, s.codec.frac_bits))
    with s.ledger.scope("Other"):
        shared_w = share_weights(s, config, weights, model_party)
        shared_t = share_tokens(s, config, tokens, seq_len, user_party)
    logits = mpc_forward(s, shared_t, shared_w, config, mask)
    with s.ledger.scope("Other"):
        revealed = s.reveal_to(logits, user_party)
    if revealed is None:
        return None
    return s.codec.decode(revealed)
