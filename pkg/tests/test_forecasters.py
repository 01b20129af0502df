"""Model assembly, training, weight transfer, head swap, persistence."""

import numpy as np
import pytest

from i2e.forecasters import (
    ModelConfig,
    TrainParams,
    TransferError,
    WeightsError,
    build,
    ensemble_predict,
    load_weights,
    model_digest,
    model_from_weights,
    param_digests,
    parameter_count,
    save_weights,
    snapshot_weights,
    swap_head,
    train,
    transfer_init,
)

TINY_TF = ModelConfig(backbone="transformer", blocks=2, head_widths=(8, 6, 4), d_model=8, heads=2, ffn_hidden=16, seed=1)
TINY_LSTM = ModelConfig(backbone="lstm", blocks=2, head_widths=(8, 6, 4), lstm_hidden=8, seed=1)


def toy_classification_data(n=32, seed=0):
    """Linearly separable toy set over the (10, 15) window shape."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 10, 15)).astype(np.float32)
    y = (x[:, -1, 0] > 0).astype(np.float32)
    return x, y


class TestBuild:
    def test_same_config_same_digests(self):
        a = build(TINY_TF)
        b = build(TINY_TF)
        assert param_digests(a) == param_digests(b)

    def test_different_seed_different_digests(self):
        a = build(TINY_TF)
        b = build(ModelConfig(**{**TINY_TF.to_dict(), "seed": 2, "head_widths": (8, 6, 4)}))
        assert model_digest(a) != model_digest(b)

    def test_transformer_parameter_count_closed_form(self):
        cfg = TINY_TF
        model = build(cfg)
        d, f, t, nf = cfg.d_model, cfg.ffn_hidden, 10, 15
        per_block = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d)
        head_in = t * d
        widths = [head_in, *cfg.head_widths]
        head = sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(cfg.head_widths)))
        out = cfg.head_widths[-1] * 1 + 1
        expected = (nf * d + d) + cfg.blocks * per_block + head + out
        assert parameter_count(model) == expected

    def test_lstm_backbone_has_stacked_layers(self):
        cfg = ModelConfig(backbone="lstm", blocks=4, lstm_hidden=8, head_widths=(8, 6, 4), seed=3)
        model = build(cfg)
        names = {p.name for p in model.parameters()}
        for i in range(4):
            assert f"lstm{i}.wx" in names and f"lstm{i}.wh" in names and f"lstm{i}.b" in names

    def test_lstm_parameter_count_closed_form(self):
        cfg = TINY_LSTM
        model = build(cfg)
        h, nf, t = cfg.lstm_hidden, 15, 10
        layer0 = nf * 4 * h + h * 4 * h + 4 * h
        layer_rest = h * 4 * h + h * 4 * h + 4 * h
        widths = [t * h, *cfg.head_widths]
        head = sum(widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(cfg.head_widths)))
        out = cfg.head_widths[-1] + 1
        assert parameter_count(model) == layer0 + (cfg.blocks - 1) * layer_rest + head + out

    def test_forget_gate_bias_initialized_to_one(self):
        model = build(TINY_LSTM)
        h = TINY_LSTM.lstm_hidden
        b = model.param_map()["lstm0.b"].values
        assert np.all(b[h : 2 * h] == 1.0)
        assert np.all(b[:h] == 0.0)

    def test_invalid_configs_rejected(self):
        with pytest.raises(Exception):
            ModelConfig(backbone="transformer", head_widths=())
        with pytest.raises(Exception):
            ModelConfig(backbone="mlp")
        with pytest.raises(Exception):
            ModelConfig(blocks=0)


class TestPredict:
    def test_zero_output_layer_gives_half_probability(self):
        model = build(TINY_TF)
        model.out_layer.w.values = np.zeros_like(model.out_layer.w.values)
        model.out_layer.b.values = np.zeros_like(model.out_layer.b.values)
        x, _ = toy_classification_data(8)
        assert np.all(model.predict(x) == 0.5)

    def test_batch_equals_per_sample(self):
        model = build(TINY_TF)
        x, _ = toy_classification_data(12)
        batch = model.predict_logits(x)
        singles = np.concatenate([model.predict_logits(x[i : i + 1]) for i in range(len(x))])
        np.testing.assert_allclose(batch, singles, atol=1e-6)

    def test_order_invariance(self):
        model = build(TINY_TF)
        x, _ = toy_classification_data(16)
        perm = np.random.default_rng(5).permutation(len(x))
        direct = model.predict_logits(x)[perm]
        permuted = model.predict_logits(x[perm])
        np.testing.assert_allclose(direct, permuted, atol=1e-6)


class TestTrain:
    def test_toy_overfit(self):
        x, y = toy_classification_data(32, seed=1)
        model = build(TINY_TF)
        schedule = TrainParams(lr=3e-3, batch_size=8, max_epochs=500, patience=500, data_order_seed=9)
        run = train(model, (x, y), (x, y), "weighted_bce", class_weights=(1.0, 1.0), schedule=schedule)
        assert run.epoch_log[-1]["train_loss"] < 0.05

    def test_zero_learning_rate_no_movement(self):
        x, y = toy_classification_data(16)
        model = build(TINY_TF)
        before = param_digests(model)
        schedule = TrainParams(lr=0.0, batch_size=8, max_epochs=3, patience=10)
        train(model, (x, y), (x, y), "weighted_bce", class_weights=(1.0, 1.0), schedule=schedule)
        assert param_digests(model) == before

    def test_deterministic_runs(self):
        x, y = toy_classification_data(24, seed=2)
        schedule = TrainParams(lr=1e-3, batch_size=8, max_epochs=5, patience=10, data_order_seed=3)
        runs = []
        digests = []
        for _ in range(2):
            model = build(TINY_TF)
            runs.append(train(model, (x, y), (x, y), "weighted_bce", (1.0, 1.0), schedule))
            digests.append(model_digest(model))
        assert runs[0].epoch_log == runs[1].epoch_log
        assert digests[0] == digests[1]

    def test_classification_without_weights_rejected(self):
        x, y = toy_classification_data(8)
        with pytest.raises(Exception):
            train(build(TINY_TF), (x, y), (x, y), "weighted_bce")

    def test_early_stop_records_best_epoch(self):
        x, y = toy_classification_data(32, seed=4)
        model = build(TINY_TF)
        schedule = TrainParams(lr=5e-3, batch_size=8, max_epochs=30, patience=3)
        run = train(model, (x, y), (x[:8], y[:8]), "weighted_bce", (1.0, 1.0), schedule)
        val_losses = [e["val_loss"] for e in run.epoch_log]
        assert run.early_stop_epoch == int(np.argmin(val_losses)) + 1

    def test_regression_mse_path(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(24, 10, 15)).astype(np.float32)
        y = x[:, -1, 1].astype(np.float32)
        model = build(ModelConfig(**{**TINY_TF.to_dict(), "task": "regression", "head_widths": (8, 6, 4)}))
        schedule = TrainParams(lr=2e-3, batch_size=8, max_epochs=50, patience=50)
        run = train(model, (x, y), (x, y), "mse", schedule=schedule)
        assert run.epoch_log[-1]["train_loss"] < run.epoch_log[0]["train_loss"]


class TestTransfer:
    def test_full_match_copies_bitwise(self):
        source = build(TINY_TF)
        weights = snapshot_weights(source)
        target = build(ModelConfig(**{**TINY_TF.to_dict(), "seed": 99, "head_widths": (8, 6, 4)}))
        assert model_digest(target) != model_digest(source)
        transfer_init(target, weights)
        assert param_digests(target) == param_digests(source)

    def test_transfer_preserves_predictions_bitwise(self):
        source = build(TINY_TF)
        target = build(ModelConfig(**{**TINY_TF.to_dict(), "seed": 77, "head_widths": (8, 6, 4)}))
        transfer_init(target, snapshot_weights(source))
        x, _ = toy_classification_data(10, seed=7)
        assert np.array_equal(source.predict_logits(x), target.predict_logits(x))

    def test_head_width_mismatch_names_offenders(self):
        source = build(TINY_TF)
        target = build(ModelConfig(**{**TINY_TF.to_dict(), "head_widths": (6, 5, 3)}))
        with pytest.raises(TransferError) as err:
            transfer_init(target, snapshot_weights(source))
        assert any("head.fc0" in m for m in err.value.mismatches)

    def test_backbone_mismatch_rejected(self):
        source = build(TINY_TF)
        target = build(TINY_LSTM)
        with pytest.raises(TransferError):
            transfer_init(target, snapshot_weights(source))


class TestSwapHead:
    def test_only_output_layer_changes(self):
        model = build(TINY_TF)
        before = param_digests(model)
        swap_head(model, "regression")
        after = param_digests(model)
        changed = {name for name in before if before[name] != after[name]}
        assert changed == {"head.out.W", "head.out.b"} - {n for n in before if before[n] == after[n]}
        assert all(name.startswith("head.out") for name in changed)
        assert model.config.task == "regression"

    def test_backbone_untouched_after_double_swap(self):
        model = build(TINY_TF)
        backbone_before = {p.name: p.values.copy() for p in model.backbone_parameters()}
        swap_head(model, "regression")
        swap_head(model, "classification")
        for p in model.backbone_parameters():
            assert np.array_equal(p.values, backbone_before[p.name])

    def test_same_task_swap_is_noop(self):
        model = build(TINY_TF)
        before = param_digests(model)
        swap_head(model, "classification")
        assert param_digests(model) == before


class TestFreezeBackbone:
    def test_frozen_backbone_untouched_by_training(self):
        from i2e.forecasters import freeze_backbone

        x, y = toy_classification_data(24, seed=9)
        model = build(TINY_TF)
        freeze_backbone(model)
        backbone_before = {p.name: p.values.copy() for p in model.backbone_parameters()}
        head_before = param_digests(model)
        schedule = TrainParams(lr=5e-3, batch_size=8, max_epochs=3, patience=5)
        train(model, (x, y), (x, y), "weighted_bce", (1.0, 1.0), schedule)
        for p in model.backbone_parameters():
            assert np.array_equal(p.values, backbone_before[p.name])
        after = param_digests(model)
        assert any(after[n] != head_before[n] for n in after if n.startswith("head."))


class TestEnsemble:
    def test_identity(self):
        p = np.array([0.1, 0.9])
        assert np.array_equal(ensemble_predict([p, p, p]), p)

    def test_simple_mean(self):
        out = ensemble_predict([np.array([0.2]), np.array([0.4]), np.array([0.6])])
        assert out[0] == pytest.approx(0.4)

    def test_bounded_by_members(self):
        rng = np.random.default_rng(8)
        members = [rng.normal(size=50) for _ in range(4)]
        out = ensemble_predict(members)
        lo = np.min(np.stack(members), axis=0)
        hi = np.max(np.stack(members), axis=0)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(Exception):
            ensemble_predict([np.zeros(3), np.zeros(4)])


class TestWeightFiles:
    def test_round_trip_bitwise(self, tmp_path):
        model = build(TINY_TF)
        path = save_weights(model, tmp_path / "m.i2ew")
        weights = load_weights(path)
        for p in model.parameters():
            assert np.array_equal(weights.params[p.name], p.values)
        restored = model_from_weights(weights)
        assert param_digests(restored) == param_digests(model)

    def test_flipped_byte_detected(self, tmp_path):
        model = build(TINY_TF)
        path = save_weights(model, tmp_path / "m.i2ew")
        blob = bytearray(path.read_bytes())
        blob[-1] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightsError, match="digest"):
            load_weights(path)

    def test_wrong_config_echo_rejected(self, tmp_path):
        model = build(TINY_TF)
        path = save_weights(model, tmp_path / "m.i2ew")
        with pytest.raises(WeightsError, match="config"):
            load_weights(path, expect_config=TINY_LSTM)

    def test_truncated_file_rejected(self, tmp_path):
        model = build(TINY_TF)
        path = save_weights(model, tmp_path / "m.i2ew")
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(WeightsError):
            load_weights(path)
