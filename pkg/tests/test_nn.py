import numpy as np
import pytest

from mpcinfer import approx, nn
from mpcinfer import protocols as P
from mpcinfer.approx import ApproximationSpec
from mpcinfer.errors import ContractError
from mpcinfer.plaintext import PlainTransformer
from mpcinfer.shares import reconstruct

from conftest import run_two_party


def input_both(s, values, src=1):
    return P.share_real_input(s, values if s.party_id == src else None, src,
                              np.shape(values))


def decode_pair(s1, r1, r2):
    return s1.codec.decode(reconstruct(r1, r2))


class TestPlaintextKernels:
    def test_quad_gelu_values(self):
        got = approx.gelu_quad(np.array([0.0, 2.0, -2.0]))
        assert np.allclose(got, [0.5, 1.5, 0.5], atol=1e-12)

    def test_exact_gelu_values(self):
        assert abs(float(approx.gelu_exact(0.0))) < 1e-9
        assert abs(float(approx.gelu_exact(3.0)) - 2.996) < 5e-3
        assert abs(float(approx.gelu_exact(-10.0))) < 1e-3

    def test_softmax_exact_uniform_and_known(self):
        row = approx.softmax_exact(np.zeros((1, 4)))
        assert np.allclose(row, 0.25, atol=1e-9)
        got = approx.softmax_exact(np.array([[0.0, np.log(2.0)]]))
        assert np.allclose(got, [1 / 3, 2 / 3], atol=1e-2)

    def test_softmax_rows_sum_to_one(self):
        # Denominators above the epsilon guard: sums are 1 up to eps/den.
        rng = np.random.default_rng(0)
        x = rng.normal(1.0, 1.0, size=(6, 9))
        for variant in ("exact", "two_relu", "two_quad"):
            rows = approx.softmax_variant(variant, x).sum(-1)
            assert np.all(np.abs(rows - 1.0) <= 1e-6)

    def test_softmax_degenerate_rows_guarded(self):
        all_neg = np.full((1, 5), -2.0)
        assert np.allclose(approx.softmax_two_relu(all_neg), 0.0)
        fully_masked = approx.softmax_two_quad(np.zeros((1, 3)), mask=np.zeros(3))
        assert np.allclose(fully_masked, 0.0)

    def test_two_relu_example(self):
        got = approx.softmax_two_relu(np.array([[1.0, -1.0, 2.0]]))
        assert np.allclose(got, [[1 / 3, 0.0, 2 / 3]], atol=1e-5)

    def test_two_relu_all_negative_row(self):
        got = approx.softmax_two_relu(np.array([[-3.0, -1.0, -2.0]]))
        assert np.allclose(got, 0.0, atol=1e-9)

    def test_two_quad_values(self):
        got = approx.softmax_two_quad(np.array([[0.0, 0.0]]), c=5.0)
        assert np.allclose(got, 0.5, atol=1e-6)
        got = approx.softmax_two_quad(np.array([[1.0, 0.0]]), c=5.0)
        assert np.allclose(got, [36 / 61, 25 / 61], atol=1e-6)

    def test_two_quad_masking_exact_zero_and_invariance(self):
        x = np.array([[1.0, 0.0, 9999.0]])
        m = np.array([1.0, 1.0, 0.0])
        got = approx.softmax_two_quad(x, mask=m, c=5.0)
        assert got[0, 2] == 0.0
        base = approx.softmax_two_quad(np.array([[1.0, 0.0]]), c=5.0)
        assert np.allclose(got[0, :2], base[0], atol=1e-7)

    def test_layernorm_constant_row_gives_bias(self):
        out = approx.layernorm(np.full((2, 8), 3.0), np.ones(8), np.full(8, 0.25))
        assert np.allclose(out, 0.25, atol=1e-6)


class TestModelConfigAndWeights:
    def test_validation(self):
        with pytest.raises(ContractError):
            nn.ModelConfig(hidden=30, heads=4)
        with pytest.raises(ContractError):
            nn.ModelConfig(hidden=0)

    def test_weight_roundtrip(self, tmp_path):
        cfg = nn.toy_config(ApproximationSpec("quad", "two_quad"))
        tensors = nn.init_weights(cfg, seed=3)
        path = tmp_path / "model.mpcw"
        nn.save_weights(str(path), cfg, tensors)
        cfg2, loaded = nn.load_weights(str(path))
        assert cfg2 == cfg
        for name in nn.weight_names(cfg):
            assert np.array_equal(loaded[name], tensors[name])

    def test_config_doc_roundtrip(self):
        cfg = nn.ModelConfig(layers=1, hidden=16, heads=4, approx=ApproximationSpec("quad", "exact"))
        assert nn.parse_config_doc(nn.config_doc(cfg)) == cfg

    def test_bad_weights_rejected(self):
        cfg = nn.toy_config()
        tensors = nn.init_weights(cfg, 0)
        tensors["embedding"] = tensors["embedding"][:, :8]
        with pytest.raises(ContractError):
            nn.check_weights(cfg, tensors)


def mpc_value(fn, **kw):
    (r1, r2), (s1, s2) = run_two_party(fn, **kw)
    return decode_pair(s1, r1, r2), s1, s2


class TestMpcBlocks:
    def test_gelu_quad_values_and_one_round(self):
        def fn(s):
            x = input_both(s, np.array([0.0, 2.0, -2.0]))
            return nn.mpc_gelu(s, x, ApproximationSpec("quad", "exact"))

        got, s1, _ = mpc_value(fn)
        assert np.allclose(got, [0.5, 1.5, 0.5], atol=1e-2)
        assert s1.ledger.by_label()["GeLU"].rounds == 1

    def test_gelu_quad_cheaper_than_exact(self):
        def run(variant):
            def fn(s):
                x = input_both(s, np.linspace(-3, 3, 8))
                return nn.mpc_gelu(s, x, ApproximationSpec(variant, "exact"))
            _, s1, _ = mpc_value(fn)
            lab = s1.ledger.by_label()["GeLU"]
            return lab.rounds, lab.bytes_sent

        quad, exact = run("quad"), run("exact")
        assert quad[0] < exact[0]
        assert quad[1] < exact[1]

    def test_gelu_matches_plaintext(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-6, 6, size=64)
        for variant in ("quad", "exact"):
            def fn(s, v=variant):
                return nn.mpc_gelu(s, input_both(s, x), ApproximationSpec(v, "exact"))

            got, _, _ = mpc_value(fn)
            ref = approx.gelu_variant(variant, x)
            assert np.max(np.abs(got - ref)) <= 1e-2

    @pytest.mark.parametrize("variant", ["exact", "two_relu", "two_quad"])
    def test_softmax_matches_plaintext(self, variant):
        rng = np.random.default_rng(2)
        x = rng.normal(0, 2, size=(4, 8))

        def fn(s):
            return nn.mpc_softmax(s, input_both(s, x),
                                  ApproximationSpec("quad", variant))

        got, _, _ = mpc_value(fn)
        ref = approx.softmax_variant(variant, x)
        assert np.max(np.abs(got - ref)) <= 1e-2

    @pytest.mark.parametrize("variant", ["exact", "two_relu", "two_quad"])
    def test_softmax_rows_sum_to_one_under_mpc(self, variant):
        rng = np.random.default_rng(3)
        x = rng.normal(0, 1.5, size=(4, 8))

        def fn(s):
            return nn.mpc_softmax(s, input_both(s, x),
                                  ApproximationSpec("quad", variant))

        got, _, _ = mpc_value(fn)
        assert np.max(np.abs(got.sum(-1) - 1.0)) <= 1e-3

    def test_softmax_cost_ordering(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(16, 16))
        cost = {}
        for variant in ("exact", "two_relu", "two_quad"):
            def fn(s, v=variant):
                return nn.mpc_softmax(s, input_both(s, x), ApproximationSpec("quad", v))

            _, s1, _ = mpc_value(fn)
            lab = s1.ledger.by_label()["Softmax"]
            cost[variant] = (lab.rounds, lab.bytes_sent)
        assert cost["two_quad"][0] < cost["two_relu"][0] < cost["exact"][0]
        assert cost["two_quad"][1] < cost["two_relu"][1] < cost["exact"][1]

    def test_two_relu_all_negative_row_under_mpc(self):
        x = np.full((1, 6), -2.0)

        def fn(s):
            return nn.mpc_softmax(s, input_both(s, x),
                                  ApproximationSpec("quad", "two_relu"))

        got, _, _ = mpc_value(fn)
        assert np.max(np.abs(got)) <= 1e-2  # guarded denominator, no blow-up

    def test_two_quad_masked_positions_exactly_zero(self):
        x = np.array([[1.0, 0.0, 9999.0]])
        m = np.array([1.0, 1.0, 0.0])

        def fn(s):
            shared = input_both(s, x)
            return nn.mpc_softmax(s, shared, ApproximationSpec("quad", "two_quad"),
                                  mask=m)

        (r1, r2), (s1, _) = run_two_party(fn)
        raw = reconstruct(r1, r2)
        assert int(raw[0, 2]) == 0  # exact ring zero, not just small
        got = s1.codec.decode(raw)
        base = approx.softmax_two_quad(np.array([[1.0, 0.0]]), c=5.0)
        assert np.allclose(got[0, :2], base[0], atol=1e-2)

    def test_exact_softmax_with_mask_saturates(self):
        x = np.array([[2.0, -1.0, 0.5, 3.0]])
        m = np.array([1.0, 1.0, 0.0, 0.0])

        def fn(s):
            return nn.mpc_softmax(s, input_both(s, x),
                                  ApproximationSpec("quad", "exact"), mask=m)

        got, _, _ = mpc_value(fn)
        ref = approx.softmax_exact(x, mask=m)
        assert np.max(np.abs(got - ref)) <= 1e-2
        assert np.all(np.abs(got[0, 2:]) <= 1e-3)

    def test_layernorm_matches_plaintext(self):
        rng = np.random.default_rng(5)
        x = rng.normal(0, 1.5, size=(6, 16))
        gain = rng.uniform(0.5, 1.5, 16)
        bias = rng.normal(0, 0.3, 16)

        def fn(s):
            return nn.mpc_layernorm(s, input_both(s, x),
                                    input_both(s, gain, src=2),
                                    input_both(s, bias, src=2))

        got, _, _ = mpc_value(fn)
        ref = approx.layernorm(x, gain, bias)
        assert np.max(np.abs(got - ref)) <= 2e-2

    def test_layernorm_constant_row_gives_bias(self):
        bias = np.linspace(-0.5, 0.5, 8)

        def fn(s):
            return nn.mpc_layernorm(s, input_both(s, np.full((2, 8), 4.0)),
                                    input_both(s, np.ones(8), src=2),
                                    input_both(s, bias, src=2))

        got, _, _ = mpc_value(fn)
        assert np.max(np.abs(got - bias)) <= 2e-3

    def test_attention_single_token_returns_value_row(self):
        rng = np.random.default_rng(6)
        q = rng.normal(size=(2, 1, 4))
        k = rng.normal(size=(2, 1, 4))
        v = rng.normal(size=(2, 1, 4))

        def fn(s):
            return nn.mpc_attention(s, input_both(s, q), input_both(s, k),
                                    input_both(s, v), ApproximationSpec())

        got, _, _ = mpc_value(fn)
        assert np.max(np.abs(got - v)) <= 1e-3

    def test_attention_all_ones_mask_equals_no_mask(self):
        rng = np.random.default_rng(7)
        q = rng.normal(size=(1, 4, 8))
        k = rng.normal(size=(1, 4, 8))
        v = rng.normal(size=(1, 4, 8))

        def run(mask):
            def fn(s):
                return nn.mpc_attention(s, input_both(s, q), input_both(s, k),
                                        input_both(s, v), ApproximationSpec(),
                                        mask=mask)
            got, _, _ = mpc_value(fn)
            return got

        assert np.array_equal(run(None), run(np.ones(4)))


class TestForwardAgreement:
    @pytest.mark.parametrize("gelu,softmax", [
        ("exact", "exact"), ("quad", "exact"), ("quad", "two_relu"),
        ("quad", "two_quad"), ("exact", "two_quad"), ("exact", "two_relu"),
    ])
    def test_mpc_forward_matches_plaintext(self, gelu, softmax):
        spec = ApproximationSpec(gelu, softmax)
        cfg = nn.toy_config(spec)
        weights = nn.init_weights(cfg, seed=11)
        rng = np.random.default_rng(12)
        tokens = rng.integers(0, cfg.vocab, size=cfg.max_seq)

        def fn(s):
            shared_w = nn.share_weights(s, cfg, weights if s.party_id == 2 else None)
            shared_t = nn.share_tokens(s, cfg, tokens if s.party_id == 1 else None,
                                       cfg.max_seq)
            return nn.mpc_forward(s, shared_t, shared_w, cfg)

        got, s1, _ = mpc_value(fn)
        model = PlainTransformer.from_arrays(cfg, weights, trainable=False)
        ref = model.forward(tokens).data[0]
        assert np.max(np.abs(got - ref)) <= 1e-2

    def test_zero_layer_forward_is_projection(self):
        cfg = nn.ModelConfig(layers=0)
        weights = nn.init_weights(cfg, seed=13)
        tokens = np.arange(cfg.max_seq) % cfg.vocab

        def fn(s):
            shared_w = nn.share_weights(s, cfg, weights if s.party_id == 2 else None)
            shared_t = nn.share_tokens(s, cfg, tokens if s.party_id == 1 else None,
                                       cfg.max_seq)
            return nn.mpc_forward(s, shared_t, shared_w, cfg)

        got, _, _ = mpc_value(fn)
        ref = (nn.one_hot(tokens, cfg.vocab) @ weights["embedding"])[0] @ weights["prediction"]
        assert np.max(np.abs(got - ref)) <= 2e-3

    def test_forward_report_covers_all_labels(self):
        cfg = nn.toy_config()
        weights = nn.init_weights(cfg, seed=14)
        tokens = np.zeros(cfg.max_seq, dtype=np.int64)

        def fn(s):
            return nn.run_private_inference(
                s, cfg, tokens if s.party_id == 1 else None,
                weights if s.party_id == 2 else None)

        (r1, r2), (s1, s2) = run_two_party(fn)
        assert r2 is None and r1 is not None  # only the user learns logits
        rep = s1.ledger.by_label()
        for label in ("MatMul", "GeLU", "Softmax", "LayerNorm", "Other"):
            assert rep[label].rounds > 0 or rep[label].bytes_sent >= 0
        assert rep["Softmax"].rounds > rep["MatMul"].rounds
