"""Autodiff core: per-layer gradient checks, attention oracle, losses, Adam."""

import math

import numpy as np
import pytest

from i2e.nn import (
    AdamState,
    GradientCheckError,
    LayerNorm,
    LSTMLayer,
    MultiHeadAttention,
    Parameter,
    ShapeError,
    Tensor,
    TransformerBlock,
    activation,
    adam_step,
    bce_with_logits,
    dense,
    gradient_check,
    layer_norm,
    loss,
    mse,
    positional_encoding,
    weighted_bce,
)
from i2e.nn.autograd import mean, relu, sigmoid, stable_sigmoid

F64 = np.float64


def scalar_loss(out: Tensor, coeffs: np.ndarray) -> Tensor:
    """Deterministic scalar readout: mean((out * c)^2) touches every element."""
    weighted = out * Tensor(coeffs.astype(out.values.dtype))
    return mean(weighted * weighted)


class TestDense:
    def test_identity_weights(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        w = Tensor(np.eye(2))
        b = Tensor(np.zeros(2))
        assert np.array_equal(dense(x, w, b).values, x.values)

    def test_hand_multiplied(self):
        x = Tensor(np.array([1.0, 2.0]))
        w = Tensor(np.array([[1.0, 0.0], [0.0, 2.0]]))
        b = Tensor(np.array([1.0, 1.0]))
        assert np.array_equal(dense(x, w, b).values, np.array([2.0, 5.0]))

    def test_equal_rows_equal_outputs(self):
        rng = np.random.default_rng(0)
        w = Tensor(rng.normal(size=(4, 3)))
        b = Tensor(rng.normal(size=3))
        row = rng.normal(size=4)
        x = Tensor(np.stack([row, row, row]))
        out = dense(x, w, b).values
        assert np.array_equal(out[0], out[1])
        assert np.array_equal(out[1], out[2])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as err:
            dense(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))
        assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)


class TestActivations:
    def test_relu_values(self):
        out = activation(Tensor(np.array([-1.0, 3.0])), "relu").values
        assert list(out) == [0.0, 3.0]

    def test_sigmoid_center(self):
        assert activation(Tensor(np.array([0.0])), "sigmoid").values[0] == 0.5

    def test_sigmoid_extreme_inputs_finite(self):
        import mpmath

        # Stability check: no overflow even far outside float range of exp,
        # and each value equals the correctly rounded high-precision result.
        xs = np.array([40.0, -40.0, 800.0, -800.0])
        out = activation(Tensor(xs), "sigmoid").values
        assert np.all(np.isfinite(out))
        assert out[1] > 0.0 and out[3] >= 0.0
        for x, got in zip(xs, out):
            exact = float(1 / (1 + mpmath.exp(-mpmath.mpf(x))))
            assert got == pytest.approx(exact, abs=1e-15)

    def test_linear_is_identity(self):
        x = Tensor(np.array([1.0, -2.0]))
        assert activation(x, "linear") is x


class TestLayerNorm:
    def test_constant_vector_zeros(self):
        x = Tensor(np.full((3, 8), 7.0))
        out = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
        assert np.allclose(out.values, 0.0)

    def test_moments(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(2.0, 3.0, size=(5, 16)))
        out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).values
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-7)
        assert np.allclose(out.var(axis=-1), 1.0, atol=1e-3)

    def test_zero_gain_gives_bias(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(4, 6)))
        bias = rng.normal(size=6)
        out = layer_norm(x, Tensor(np.zeros(6)), Tensor(bias)).values
        assert np.allclose(out, np.broadcast_to(bias, (4, 6)))


class TestPositionalEncoding:
    def test_position_zero(self):
        table = positional_encoding(4, 8, dtype=F64)
        assert np.allclose(table[0, 0::2], 0.0)
        assert np.allclose(table[0, 1::2], 1.0)

    def test_bounded(self):
        table = positional_encoding(50, 32, dtype=F64)
        assert table.min() >= -1.0 and table.max() <= 1.0

    def test_rows_distinct(self):
        table = positional_encoding(10, 16, dtype=F64)
        for i in range(10):
            for j in range(i + 1, 10):
                assert not np.allclose(table[i], table[j])

    def test_odd_dim_rejected(self):
        with pytest.raises(ShapeError):
            positional_encoding(4, 7)

    def test_formula_spot_values(self):
        table = positional_encoding(5, 4, dtype=F64)
        assert table[3, 0] == pytest.approx(math.sin(3.0))
        assert table[3, 1] == pytest.approx(math.cos(3.0))
        assert table[2, 2] == pytest.approx(math.sin(2.0 / 10_000.0 ** (2.0 / 4.0)))


def oracle_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Straight-line per-head attention with explicit loops; no shared code."""
    seq, d_model = x.shape
    d_head = d_model // heads
    q = x @ wq + bq
    k = x @ wk + bk
    v = x @ wv + bv
    merged = np.zeros((seq, d_model))
    for h in range(heads):
        qs = q[:, h * d_head : (h + 1) * d_head]
        ks = k[:, h * d_head : (h + 1) * d_head]
        vs = v[:, h * d_head : (h + 1) * d_head]
        for t in range(seq):
            scores = np.empty(seq)
            for u in range(seq):
                scores[u] = float(np.dot(qs[t], ks[u])) / math.sqrt(d_head)
            shifted = np.exp(scores - scores.max())
            weights = shifted / shifted.sum()
            ctx = np.zeros(d_head)
            for u in range(seq):
                ctx += weights[u] * vs[u]
            merged[t, h * d_head : (h + 1) * d_head] = ctx
    return merged @ wo + bo


class TestAttention:
    def make(self, d_model=8, heads=2, seed=0, dtype=F64):
        rng = np.random.default_rng(seed)
        return MultiHeadAttention("attn", d_model, heads, rng, dtype)

    def test_single_token_weight_one(self):
        attn = self.make()
        x = Tensor(np.random.default_rng(3).normal(size=(1, 1, 8)))
        weights = attn.attention_weights(x)
        assert np.allclose(weights, 1.0)
        # output equals the output projection of that token's value vector
        v = x.values[0] @ attn.wv.w.values + attn.wv.b.values
        expected = v @ attn.out.w.values + attn.out.b.values
        assert np.allclose(attn(x).values[0], expected)

    def test_identical_tokens_split_weights(self):
        attn = self.make()
        token = np.random.default_rng(4).normal(size=8)
        x = Tensor(np.stack([token, token])[None, :, :])
        weights = attn.attention_weights(x)
        assert np.allclose(weights, 0.5)

    def test_rows_sum_to_one_nonnegative(self):
        attn = self.make(d_model=16, heads=4)
        x = Tensor(np.random.default_rng(5).normal(size=(3, 7, 16)))
        weights = attn.attention_weights(x)
        assert np.all(weights >= 0.0)
        assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-6)

    def test_three_token_matches_loop_oracle(self):
        attn = self.make(d_model=8, heads=2, seed=6)
        x_np = np.random.default_rng(7).normal(size=(3, 8))
        out = attn(Tensor(x_np[None, :, :])).values[0]
        expected = oracle_attention(
            x_np,
            attn.wq.w.values,
            attn.wq.b.values,
            attn.wk.w.values,
            attn.wk.b.values,
            attn.wv.w.values,
            attn.wv.b.values,
            attn.out.w.values,
            attn.out.b.values,
            heads=2,
        )
        assert np.max(np.abs(out - expected)) < 1e-5

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ShapeError):
            self.make(d_model=8, heads=3)


class TestTransformerBlock:
    def test_zeroed_projections_identity(self):
        rng = np.random.default_rng(8)
        block = TransformerBlock("b", 8, 2, 16, rng, F64)
        block.attn.out.w.values = np.zeros_like(block.attn.out.w.values)
        block.attn.out.b.values = np.zeros_like(block.attn.out.b.values)
        block.ffn.fc2.w.values = np.zeros_like(block.ffn.fc2.w.values)
        block.ffn.fc2.b.values = np.zeros_like(block.ffn.fc2.b.values)
        x = rng.normal(size=(2, 5, 8))
        assert np.array_equal(block(Tensor(x)).values, x)

    def test_shape_preserved(self):
        rng = np.random.default_rng(9)
        block = TransformerBlock("b", 8, 2, 16, rng, F64)
        x = rng.normal(size=(3, 4, 8))
        assert block(Tensor(x)).shape == (3, 4, 8)


class TestLSTM:
    def test_zero_weights_zero_hiddens(self):
        rng = np.random.default_rng(10)
        layer = LSTMLayer("l", 4, 6, rng, F64)
        layer.wx.values = np.zeros_like(layer.wx.values)
        layer.wh.values = np.zeros_like(layer.wh.values)
        layer.b.values = np.zeros_like(layer.b.values)
        x = rng.normal(size=(2, 5, 4))
        assert np.allclose(layer(Tensor(x)).values, 0.0)

    def test_sequence_length_preserved(self):
        rng = np.random.default_rng(11)
        layer = LSTMLayer("l", 4, 6, rng, F64)
        out = layer(Tensor(rng.normal(size=(1, 7, 4))))
        assert out.shape == (1, 7, 6)

    def test_single_step_hand_recurrence(self):
        # Gate layout [i, f, g, o]; one step from zero state:
        #   c = sigmoid(zi) * tanh(zg), h = sigmoid(zo) * tanh(c)
        rng = np.random.default_rng(12)
        layer = LSTMLayer("l", 3, 2, rng, F64)
        x = rng.normal(size=(1, 1, 3))
        z = x[0, 0] @ layer.wx.values + layer.b.values
        zi, zf, zg, zo = z[0:2], z[2:4], z[4:6], z[6:8]
        c = stable_sigmoid(zi) * np.tanh(zg)
        h = stable_sigmoid(zo) * np.tanh(c)
        out = layer(Tensor(x)).values[0, 0]
        assert np.max(np.abs(out - h)) < 1e-6


class TestLosses:
    def test_bce_perfect_prediction(self):
        assert weighted_bce([1.0], [1.0]) == pytest.approx(0.0, abs=1e-9)

    def test_bce_chance_level(self):
        y = [0.0, 1.0] * 50
        assert weighted_bce([0.5] * 100, y) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_doubling_weights_doubles_loss(self):
        rng = np.random.default_rng(13)
        p = rng.uniform(0.05, 0.95, size=40)
        y = rng.integers(0, 2, size=40).astype(float)
        w = rng.uniform(0.5, 2.0, size=40)
        assert weighted_bce(p, y, 2 * w) == pytest.approx(2 * weighted_bce(p, y, w))

    def test_logit_form_matches_probability_form(self):
        rng = np.random.default_rng(14)
        z = rng.normal(size=30)
        y = rng.integers(0, 2, size=30).astype(float)
        w = rng.uniform(0.5, 2.0, size=30)
        graph = bce_with_logits(Tensor(z), y, w)
        assert float(graph.values) == pytest.approx(weighted_bce(stable_sigmoid(z), y, w), rel=1e-9)

    def test_mse_cases(self):
        assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert mse([1.5, 2.5], [1.0, 2.0]) == pytest.approx(0.25)
        rng = np.random.default_rng(15)
        a, b = rng.normal(size=100), rng.normal(size=100)
        direct = sum((x - y) ** 2 for x, y in zip(a, b)) / 100
        assert mse(a, b) == pytest.approx(direct, abs=1e-12)

    def test_dispatcher(self):
        assert loss("mse", [1.0], [2.0]) == 1.0
        assert loss("weighted_bce", [0.5, 0.5], [0.0, 1.0]) == pytest.approx(math.log(2.0))
        with pytest.raises(ValueError):
            loss("hinge", [0.0], [0.0])


class TestAdam:
    def make_param(self, values):
        return Parameter("p", np.array(values, dtype=F64))

    def test_zero_gradient_no_move(self):
        p = self.make_param([1.0, -2.0])
        state = AdamState()
        adam_step([p], {"p": np.zeros(2)}, state, lr=0.1)
        assert np.array_equal(p.values, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_magnitude(self):
        p = self.make_param([0.0])
        adam_step([p], {"p": np.array([1.0])}, AdamState(), lr=0.01)
        assert p.values[0] == pytest.approx(-0.01, rel=1e-6)

    def test_equal_grads_move_equally(self):
        a = Parameter("a", np.array([1.0]))
        b = Parameter("b", np.array([5.0]))
        adam_step([a, b], {"a": np.array([0.3]), "b": np.array([0.3])}, AdamState(), lr=0.05)
        assert (a.values[0] - 1.0) == pytest.approx(b.values[0] - 5.0)


class TestGradientCheck:
    def test_linear_model_near_exact(self):
        # Loss linear in the parameters: central differences are exact up to
        # rounding, so the checker must report essentially zero error.
        rng = np.random.default_rng(16)
        w = Parameter("w", rng.normal(size=(4, 3)))
        b = Parameter("b", rng.normal(size=3))
        x = Tensor(rng.normal(size=(5, 4)))
        coeffs = rng.normal(size=(5, 3))

        def loss_fn():
            return mean(dense(x, w.tensor, b.tensor) * Tensor(coeffs))

        assert gradient_check(loss_fn, [w, b]) < 1e-9

    def test_requires_float64(self):
        w = Parameter("w", np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(GradientCheckError):
            gradient_check(lambda: Tensor(np.array(0.0)), [w])

    def test_corrupted_gradient_detected(self):
        rng = np.random.default_rng(17)
        w = Parameter("w", rng.normal(size=(3, 2)))
        x = Tensor(rng.normal(size=(4, 3)))
        coeffs = rng.normal(size=(4, 2))

        class CorruptedLoss:
            def __call__(self):
                out = scalar_loss(dense(x, w.tensor, Tensor(np.zeros(2))), coeffs)
                inner = out._backward

                def tampered(g):
                    inner(g * 1.1)  # +10% systematic gradient error

                out._backward = tampered
                return out

        assert gradient_check(CorruptedLoss(), [w]) > 0.05

    @pytest.mark.parametrize("seed", range(3))
    def test_layer_norm_gradients(self, seed):
        rng = np.random.default_rng(seed)
        ln = LayerNorm("ln", 6, dtype=F64)
        ln.gain.values = rng.normal(1.0, 0.2, size=6)
        ln.bias.values = rng.normal(size=6)
        x = Tensor(rng.normal(size=(3, 6)))
        coeffs = rng.normal(size=(3, 6))

        def loss_fn():
            return scalar_loss(ln(x), coeffs)

        assert gradient_check(loss_fn, ln.parameters()) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_attention_gradients(self, seed):
        rng = np.random.default_rng(100 + seed)
        attn = MultiHeadAttention("a", 8, 2, rng, F64)
        x = Tensor(rng.normal(size=(2, 3, 8)))
        coeffs = rng.normal(size=(2, 3, 8))

        def loss_fn():
            return scalar_loss(attn(x), coeffs)

        assert gradient_check(loss_fn, attn.parameters()) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_lstm_gradients(self, seed):
        rng = np.random.default_rng(200 + seed)
        layer = LSTMLayer("l", 4, 5, rng, F64)
        x = Tensor(rng.normal(size=(2, 4, 4)))
        coeffs = rng.normal(size=(2, 4, 5))

        def loss_fn():
            return scalar_loss(layer(x), coeffs)

        assert gradient_check(loss_fn, layer.parameters()) < 1e-4

    def test_transformer_block_gradients(self):
        rng = np.random.default_rng(300)
        block = TransformerBlock("b", 8, 2, 12, rng, F64)
        x = Tensor(rng.normal(size=(2, 3, 8)))
        coeffs = rng.normal(size=(2, 3, 8))

        def loss_fn():
            return scalar_loss(block(x), coeffs)

        assert gradient_check(loss_fn, block.parameters()) < 1e-4

    def test_loss_gradients_through_bce(self):
        rng = np.random.default_rng(400)
        w = Parameter("w", rng.normal(size=(6, 1)))
        x = Tensor(rng.normal(size=(8, 6)))
        y = rng.integers(0, 2, size=8).astype(F64)
        weights = rng.uniform(0.5, 2.0, size=8)

        def loss_fn():
            from i2e.nn.autograd import reshape

            logits = reshape(dense(x, w.tensor, Tensor(np.zeros(1))), (8,))
            return bce_with_logits(logits, y, weights)

        assert gradient_check(loss_fn, [w]) < 1e-6

    def test_nonfinite_loss_rejected(self):
        w = Parameter("w", np.array([1.0]))

        def loss_fn():
            return Tensor(np.array(math.inf))

        with pytest.raises(GradientCheckError):
            gradient_check(loss_fn, [w])


class TestDeterminism:
    def test_forward_deterministic(self):
        rng = np.random.default_rng(500)
        block = TransformerBlock("b", 8, 2, 16, rng, F64)
        x = Tensor(rng.normal(size=(4, 5, 8)))
        a = block(x).values
        b = block(x).values
        assert np.array_equal(a, b)
