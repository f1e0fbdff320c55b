"""Plaintext reference transformer with reverse-mode gradients.

Shares the exact function semantics of the MPC path (same approximation
variants, same multiplicative 2Quad masking, same exp/erf kernels), so
the protocol runtime differs from this model by fixed-point noise only.
Also hosts the synthetic classification task the distillation pipeline
trains on.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .approx import (
    ADDITIVE_MASK_CONST,
    EPS_DEN,
    ERF_CLAMP,
    ERF_SCALED_COEFFS,
    EXP_MASK_FLOOR,
)
from .autodiff import Tensor
from .errors import ContractError
from .nn import LN_EPS, ModelConfig, check_weights, init_weights, one_hot


def t_erf(x: Tensor) -> Tensor:
    xc = ad.clamp(x, -ERF_CLAMP, ERF_CLAMP)
    t = ad.mul(ad.square(xc), 1.0 / (ERF_CLAMP * ERF_CLAMP))
    q = ad.add(ad.mul(t, ERF_SCALED_COEFFS[1]), ERF_SCALED_COEFFS[0])
    power = t
    for c in ERF_SCALED_COEFFS[2:]:
        power = ad.mul(power, t)
        q = ad.add(q, ad.mul(power, c))
    return ad.mul(xc, q)


def t_gelu(x: Tensor, variant: str) -> Tensor:
    if variant == "quad":
        return ad.add(ad.add(ad.mul(ad.square(x), 0.125), ad.mul(x, 0.25)), 0.5)
    if variant == "exact":
        gate = ad.add(ad.mul(t_erf(ad.mul(x, 1.0 / np.sqrt(2.0))), 0.5), 0.5)
        return ad.mul(x, gate)
    raise ContractError(f"unknown gelu variant {variant!r}")


def t_softmax(x: Tensor, variant: str, mask: np.ndarray | None = None,
              c: float = 5.0) -> Tensor:
    m = np.ones(x.shape) if mask is None else np.broadcast_to(
        np.asarray(mask, dtype=np.float64), x.shape)
    if variant == "two_quad":
        p = ad.mul(ad.square(ad.add(x, c)), m)
        den = ad.add(ad.sum_(p, axis=-1, keepdims=True), EPS_DEN)
        return ad.mul(ad.div(p, den), m)
    z = ad.add(x, ADDITIVE_MASK_CONST * (1.0 - m))
    if variant == "two_relu":
        p = ad.relu(z)
        den = ad.add(ad.sum_(p, axis=-1, keepdims=True), EPS_DEN)
        return ad.div(p, den)
    if variant == "exact":
        z = ad.sub(z, ad.max_(z, axis=-1, keepdims=True))
        z = ad.add(ad.mul(z, m), EXP_MASK_FLOOR * (1.0 - m))
        p = ad.exp_limit(z)
        return ad.div(p, ad.sum_(p, axis=-1, keepdims=True))
    raise ContractError(f"unknown softmax variant {variant!r}")


def t_layernorm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mu = ad.mean(x, axis=-1, keepdims=True)
    centered = ad.sub(x, mu)
    var = ad.mean(ad.square(centered), axis=-1, keepdims=True)
    rstd = ad.pow_scalar(ad.add(var, LN_EPS), -0.5)
    return ad.add(ad.mul(ad.mul(centered, rstd), gain), bias)


@dataclass
class TapRecord:
    """Intermediate representations matched during distillation: the
    embedding output, each layer's post-softmax attention matrix, each
    layer's output hidden state, and the final logits."""

    embedding: Tensor
    attentions: list
    hidden: list
    logits: Tensor


class PlainTransformer:
    """Post-norm encoder classifier over the engine's kernel semantics."""

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params

    @classmethod
    def new(cls, config: ModelConfig, seed: int, trainable: bool = True):
        arrays = init_weights(config, seed)
        return cls.from_arrays(config, arrays, trainable)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict, trainable: bool = True):
        check_weights(config, arrays)
        params = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=trainable)
                  for k, v in arrays.items()}
        return cls(config, params)

    def arrays(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def frozen(self) -> "PlainTransformer":
        return PlainTransformer(self.config, {k: p.detach() for k, p in self.params.items()})

    # -- forward -----------------------------------------------------------

    def forward_with_taps(self, tokens, mask=None) -> tuple[Tensor, TapRecord]:
        cfg = self.config
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        batch, seq = tokens.shape
        if seq > cfg.max_seq:
            raise ContractError(f"sequence length {seq} exceeds max_seq {cfg.max_seq}")
        w = self.params
        spec = cfg.approx

        onehot = Tensor(one_hot(tokens, cfg.vocab))
        h = ad.matmul(onehot, w["embedding"])
        embedding_tap = h

        key_mask = None
        if mask is not None:
            key_mask = np.asarray(mask, dtype=np.float64).reshape(1, 1, 1, seq)

        attn_taps, hidden_taps = [], []
        for i in range(cfg.layers):
            pre = f"layer{i}"
            heads, dh = cfg.heads, cfg.head_dim

            def split(t):
                return ad.transpose(ad.reshape(t, (batch, seq, heads, dh)), (0, 2, 1, 3))

            q = split(ad.matmul(h, w[f"{pre}.attn.wq"]))
            k = split(ad.matmul(h, w[f"{pre}.attn.wk"]))
            v = split(ad.matmul(h, w[f"{pre}.attn.wv"]))
            scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), dh ** -0.5)
            probs = t_softmax(scores, spec.softmax_variant, key_mask, spec.two_quad_c)
            attn_taps.append(probs)
            ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)),
                             (batch, seq, cfg.hidden))
            attn_out = ad.matmul(ctx, w[f"{pre}.attn.wo"])
            h = t_layernorm(ad.add(h, attn_out),
                            w[f"{pre}.ln1.gain"], w[f"{pre}.ln1.bias"])
            ffn = ad.matmul(t_gelu(ad.matmul(h, w[f"{pre}.ffn.w1"]), spec.gelu_variant),
                            w[f"{pre}.ffn.w2"])
            h = t_layernorm(ad.add(h, ffn),
                            w[f"{pre}.ln2.gain"], w[f"{pre}.ln2.bias"])
            hidden_taps.append(h)

        logits = ad.matmul(h[:, 0, :], w["prediction"])
        return logits, TapRecord(embedding_tap, attn_taps, hidden_taps, logits)

    def forward(self, tokens, mask=None) -> Tensor:
        logits, _ = self.forward_with_taps(tokens, mask)
        return logits

    def predict(self, tokens, mask=None) -> np.ndarray:
        logits = self.frozen().forward(tokens, mask)
        return np.argmax(logits.data, axis=-1)


def evaluate(model: PlainTransformer, xs, ys, batch_size: int = 128) -> float:
    """Deterministic argmax-logit accuracy (the model has no dropout)."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    correct = 0
    for start in range(0, len(xs), batch_size):
        pred = model.predict(xs[start: start + batch_size])
        correct += int(np.sum(pred == ys[start: start + batch_size]))
    return correct / len(xs)


# ---------------------------------------------------------------------------
# Synthetic task: majority token-group classification
# ---------------------------------------------------------------------------


def toy_label_rule(tokens: np.ndarray, vocab: int, n_classes: int) -> np.ndarray:
    """Label = group with the highest token count (ties: lowest index)."""
    groups = np.asarray(tokens, dtype=np.int64) // (vocab // n_classes)
    counts = np.stack([(groups == g).sum(axis=-1) for g in range(n_classes)], axis=-1)
    return np.argmax(counts, axis=-1)


def make_toy_dataset(seed: int, n_train: int = 2000, n_test: int = 500,
                     vocab: int = 64, seq: int = 16, n_classes: int = 4,
                     dominance: float = 0.4) -> dict:
    """Sequences with one over-represented token group; labels follow the
    majority rule, so the task is solvable from token counts alone."""
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    group_size = vocab // n_classes
    dominant = rng.integers(0, n_classes, size=n)
    use_dominant = rng.random(size=(n, seq)) < dominance
    uniform_tokens = rng.integers(0, vocab, size=(n, seq))
    dominant_tokens = dominant[:, None] * group_size + rng.integers(
        0, group_size, size=(n, seq))
    xs = np.where(use_dominant, dominant_tokens, uniform_tokens)
    ys = toy_label_rule(xs, vocab, n_classes)
    return {
        "train_x": xs[:n_train], "train_y": ys[:n_train],
        "test_x": xs[n_train:], "test_y": ys[n_train:],
        "seed": seed, "vocab": vocab, "seq": seq, "n_classes": n_classes,
        "dominance": dominance, "n_train": n_train, "n_test": n_test,
    }


def dataset_doc(ds: dict) -> str:
    keys = ("seed", "n_train", "n_test", "vocab", "seq", "n_classes", "dominance")
    return "\n".join(f"{k} = {ds[k]}" for k in keys) + "\n"


def dataset_from_doc(text: str) -> dict:
    from .nn import parse_kv_doc

    kv = parse_kv_doc(text)
    return make_toy_dataset(
        seed=int(kv["seed"]), n_train=int(kv["n_train"]), n_test=int(kv["n_test"]),
        vocab=int(kv["vocab"]), seq=int(kv["seq"]), n_classes=int(kv["n_classes"]),
        dominance=float(kv["dominance"]),
    )
