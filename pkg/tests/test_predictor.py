import threading

import numpy as np
import pytest

from driftstream.errors import ConfigError, DataError, WindowTooShortError
from driftstream.predictor import (
    LstmHyperparams,
    build_supervised_pairs,
    forward,
    init_model,
    load_model_npz,
    loss_and_gradients,
    model_from_json,
    model_to_json,
    retrain,
    save_model_npz,
    train,
)


def tiny_hp(**kwargs):
    base = dict(epochs=5, learning_rate=0.01, optimizer="adam",
                activation="tanh", loss="mse", batch_size=8, hidden_units=4,
                num_layers=1, time_step=3, weight_decay=0.0, seed=0)
    base.update(kwargs)
    return LstmHyperparams(**base)


def make_dataset(hp, n=12, input_dim=3, horizon=2, target_dim=2, seed=5):
    rng = np.random.default_rng(seed)
    ctx = rng.normal(size=(n, hp.time_step, input_dim))
    tgt = rng.normal(size=(n, horizon * target_dim))
    return ctx, tgt


class TestInit:
    def test_deterministic(self):
        hp = tiny_hp(seed=42)
        a = init_model(hp, 3, 2, 2)
        b = init_model(hp, 3, 2, 2)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_bound_from_hidden_units(self):
        hp = tiny_hp(hidden_units=16)
        model = init_model(hp, 3, 2, 2)
        k = 1.0 / np.sqrt(16)
        for name in ("Wx0", "Wh0", "Wy"):
            assert np.abs(model.params[name]).max() <= k

    def test_forget_bias_is_one(self):
        hp = tiny_hp(hidden_units=6)
        model = init_model(hp, 3, 2, 2)
        np.testing.assert_array_equal(model.params["b0"][6:12], np.ones(6))

    def test_bad_dims(self):
        with pytest.raises(ConfigError):
            init_model(tiny_hp(), 0, 2, 2)

    def test_output_dim(self):
        model = init_model(tiny_hp(), 3, horizon=4, target_dim=5)
        assert model.output_dim == 20
        assert model.params["Wy"].shape == (4, 20)


class TestForward:
    def test_zero_network_predicts_zero(self):
        model = init_model(tiny_hp(activation="tanh"), 3, 2, 2)
        for k in model.params:
            model.params[k][:] = 0.0
        out = forward(model, np.random.default_rng(0).normal(size=(3, 3)))
        np.testing.assert_array_equal(out, np.zeros((2, 2)))

    def test_matches_hand_unrolled_recurrence(self):
        # 2 hidden units, S=2, L=1: unroll the cell equations longhand
        hp = tiny_hp(hidden_units=2, time_step=2, activation="tanh", seed=9)
        model = init_model(hp, input_dim=2, horizon=1, target_dim=2)
        rng = np.random.default_rng(1)
        ctx = rng.normal(size=(2, 2))

        def sigmoid(x):
            return 1.0 / (1.0 + np.exp(-x))

        Wx, Wh, b = (model.params["Wx0"], model.params["Wh0"],
                     model.params["b0"])
        h = np.zeros(2)
        c = np.zeros(2)
        for t in range(2):
            z = ctx[t] @ Wx + h @ Wh + b
            i, f, g, o = (sigmoid(z[0:2]), sigmoid(z[2:4]), np.tanh(z[4:6]),
                          sigmoid(z[6:8]))
            c = f * c + i * g
            h = o * np.tanh(c)
        expected = h @ model.params["Wy"] + model.params["by"]
        got = forward(model, ctx)
        np.testing.assert_allclose(got.ravel(), expected, atol=1e-12)

    def test_pure_function(self):
        model = init_model(tiny_hp(), 3, 2, 2)
        ctx = np.random.default_rng(2).normal(size=(3, 3))
        np.testing.assert_array_equal(forward(model, ctx), forward(model, ctx))

    def test_shape_invariant(self):
        model = init_model(tiny_hp(), 3, horizon=4, target_dim=3)
        out = forward(model, np.zeros((3, 3)))
        assert out.shape == (4, 3)

    def test_dim_mismatch(self):
        model = init_model(tiny_hp(), 3, 2, 2)
        with pytest.raises(DataError):
            forward(model, np.zeros((3, 4)))

    def test_thread_safe_on_immutable_model(self):
        model = init_model(tiny_hp(), 3, 2, 2)
        ctx = np.random.default_rng(3).normal(size=(3, 3))
        expected = forward(model, ctx)
        results = [None] * 8

        def worker(slot):
            results[slot] = forward(model, ctx)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        for got in results:
            np.testing.assert_array_equal(got, expected)


def max_relative_gradient_error(model, hp, ctx, tgt, h=1e-5):
    _, grads = loss_and_gradients(model, ctx, tgt, hp)
    worst = 0.0
    for name in sorted(model.params):
        p = model.params[name]
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            lp, _ = loss_and_gradients(model, ctx, tgt, hp)
            p[idx] = orig - h
            lm, _ = loss_and_gradients(model, ctx, tgt, hp)
            p[idx] = orig
            numeric = (lp - lm) / (2 * h)
            denom = max(abs(numeric), abs(grads[name][idx]), 1e-8)
            worst = max(worst, abs(numeric - grads[name][idx]) / denom)
            it.iternext()
    return worst


class TestGradients:
    def test_finite_difference_check(self):
        hp = tiny_hp(hidden_units=2, time_step=3, activation="tanh",
                     weight_decay=6e-6, seed=7)
        model = init_model(hp, 3, 2, 2)
        ctx, tgt = make_dataset(hp, n=4, input_dim=3)
        assert max_relative_gradient_error(model, hp, ctx, tgt) < 1e-4

    def test_two_layer_and_mae(self):
        hp = tiny_hp(hidden_units=2, num_layers=2, time_step=2,
                     activation="tanh", loss="mae", seed=8)
        model = init_model(hp, 2, 1, 2)
        ctx, tgt = make_dataset(hp, n=3, input_dim=2, horizon=1)
        assert max_relative_gradient_error(model, hp, ctx, tgt) < 1e-4

    def test_relu_cell(self):
        hp = tiny_hp(hidden_units=3, time_step=2, activation="relu", seed=9)
        model = init_model(hp, 2, 2, 1)
        ctx = np.random.default_rng(4).normal(size=(4, 2, 2))
        tgt = np.random.default_rng(5).normal(size=(4, 2))
        assert max_relative_gradient_error(model, hp, ctx, tgt) < 1e-4

    def test_weight_decay_inert_at_origin(self):
        hp0 = tiny_hp(weight_decay=0.0)
        hp1 = tiny_hp(weight_decay=6e-6)
        model = init_model(hp0, 3, 2, 2)
        for k in model.params:
            model.params[k][:] = 0.0
        ctx, tgt = make_dataset(hp0, n=6, input_dim=3)
        r0 = train(model, ctx, tgt, hp0, epochs=2)
        r1 = train(model, ctx, tgt, hp1, epochs=2)
        for k in model.params:
            np.testing.assert_allclose(r0.model.params[k], r1.model.params[k],
                                       atol=1e-12)


class TestTrain:
    def test_constant_signal_learnable(self):
        hp = tiny_hp(epochs=100, learning_rate=0.01, hidden_units=8,
                     time_step=4, activation="relu", batch_size=16)
        feats = np.full((60, 3), 0.5)
        norm = np.full((60, 2), 0.5)
        ctx, tgt = build_supervised_pairs(feats, norm, 4, 2)
        model = init_model(hp, 3, 2, 2)
        result = train(model, ctx, tgt, hp)
        pred = forward(result.model, ctx[0])
        assert np.abs(pred - 0.5).max() < 1e-3

    def test_zero_epochs_leaves_model_unchanged(self):
        hp = tiny_hp()
        model = init_model(hp, 3, 2, 2)
        ctx, tgt = make_dataset(hp)
        result = train(model, ctx, tgt, hp, epochs=0)
        for k in model.params:
            np.testing.assert_array_equal(result.model.params[k],
                                          model.params[k])
        assert result.model.trained_on == model.trained_on

    def test_descent_sanity(self):
        hp = tiny_hp(epochs=100, learning_rate=0.001, optimizer="adam",
                     hidden_units=6, time_step=4)
        rng = np.random.default_rng(6)
        t = np.arange(80)
        series = np.sin(2 * np.pi * t / 8)[:, None] + rng.normal(0, 0.05, (80, 1))
        ctx, tgt = build_supervised_pairs(series, series, 4, 2)
        model = init_model(hp, 1, 2, 1)
        result = train(model, ctx, tgt, hp)
        assert result.epoch_losses[99] <= result.epoch_losses[0]

    def test_input_model_untouched(self):
        hp = tiny_hp(epochs=3)
        model = init_model(hp, 3, 2, 2)
        before = {k: v.copy() for k, v in model.params.items()}
        ctx, tgt = make_dataset(hp)
        train(model, ctx, tgt, hp)
        for k in before:
            np.testing.assert_array_equal(model.params[k], before[k])

    def test_deterministic(self):
        hp = tiny_hp(epochs=4, seed=11)
        model = init_model(hp, 3, 2, 2)
        ctx, tgt = make_dataset(hp)
        a = train(model, ctx, tgt, hp)
        b = train(model, ctx, tgt, hp)
        for k in a.model.params:
            np.testing.assert_array_equal(a.model.params[k], b.model.params[k])

    def test_sgd_optimizer(self):
        hp = tiny_hp(optimizer="sgd", epochs=5, learning_rate=0.05)
        model = init_model(hp, 3, 2, 2)
        ctx, tgt = make_dataset(hp)
        result = train(model, ctx, tgt, hp)
        assert result.epoch_losses[-1] < result.epoch_losses[0]


class TestRetrain:
    def _window(self, hp, n=20, d=2, seed=14):
        rng = np.random.default_rng(seed)
        norm = rng.normal(size=(n, d))
        feats = norm.copy()
        return feats, norm

    def test_window_boundary(self):
        hp = tiny_hp(time_step=3)
        feats, norm = self._window(hp, n=3 + 2 - 1)  # S + L - 1
        model = init_model(hp, 2, 2, 2)
        with pytest.raises(WindowTooShortError):
            retrain(model, feats, norm, hp, mode="warm")
        feats, norm = self._window(hp, n=3 + 2)
        result = retrain(model, feats, norm, hp, mode="warm")
        assert result.model is not model

    def test_warm_does_not_regress_much(self):
        # oracle: full-batch loss on the same fixed set, before vs after
        hp = tiny_hp(epochs=60, learning_rate=0.001, hidden_units=6,
                     time_step=4)
        rng = np.random.default_rng(15)
        series = np.sin(2 * np.pi * np.arange(120) / 12)[:, None]
        series = series + rng.normal(0, 0.02, series.shape)
        ctx, tgt = build_supervised_pairs(series, series, 4, 2)
        model = init_model(hp, 1, 2, 1)
        first = train(model, ctx, tgt, hp)
        loss_before, _ = loss_and_gradients(first.model, ctx, tgt, hp)
        warm = retrain(first.model, series, series, hp, mode="warm")
        loss_after, _ = loss_and_gradients(warm.model, ctx, tgt, hp)
        assert loss_after <= loss_before * 1.10

    def test_warm_epoch_budget(self):
        hp = tiny_hp(epochs=40)
        feats, norm = self._window(hp, n=30)
        model = init_model(hp, 2, 2, 2)
        result = retrain(model, feats, norm, hp, mode="warm")
        assert len(result.epoch_losses) == 10  # epochs // 4
        hp_small = tiny_hp(epochs=8)
        result = retrain(model, feats, norm, hp_small, mode="warm")
        assert len(result.epoch_losses) == 5  # floor of 5

    def test_cold_matches_fresh_training(self):
        hp = tiny_hp(epochs=6, seed=21)
        feats, norm = self._window(hp, n=30, seed=22)
        model = init_model(hp, 2, 2, 2)
        trained = train(model, *build_supervised_pairs(feats, norm, hp.time_step, 2), hp)
        cold = retrain(trained.model, feats, norm, hp, mode="cold")
        for k in cold.model.params:
            np.testing.assert_array_equal(cold.model.params[k],
                                          trained.model.params[k])

    def test_wall_time_reported(self):
        hp = tiny_hp()
        feats, norm = self._window(hp, n=30)
        result = retrain(init_model(hp, 2, 2, 2), feats, norm, hp)
        assert result.wall_seconds > 0

    def test_concurrent_forward_during_retrain(self):
        # scoring must be able to keep using a snapshot while a copy retrains
        hp = tiny_hp(epochs=30, hidden_units=8)
        feats, norm = self._window(hp, n=60)
        model = init_model(hp, 2, 2, 2)
        ctx = np.random.default_rng(16).normal(size=(hp.time_step, 2))
        expected = forward(model, ctx)
        errors = []

        def score_loop():
            try:
                for _ in range(200):
                    np.testing.assert_array_equal(forward(model, ctx), expected)
            except AssertionError as exc:  # pragma: no cover
                errors.append(exc)

        scorer = threading.Thread(target=score_loop)
        scorer.start()
        retrain(model, feats, norm, hp, mode="warm")
        scorer.join()
        assert not errors


class TestSerialization:
    def test_npz_round_trip_bit_exact(self, tmp_path):
        model = init_model(tiny_hp(seed=30), 3, 2, 2)
        path = tmp_path / "model.npz"
        save_model_npz(model, path)
        clone = load_model_npz(path)
        for k in model.params:
            assert np.array_equal(clone.params[k], model.params[k])
            assert clone.params[k].dtype == model.params[k].dtype
        assert clone.activation == model.activation
        assert clone.horizon == model.horizon

    def test_json_round_trip_value_exact(self):
        model = init_model(tiny_hp(seed=31), 3, 2, 2)
        clone = model_from_json(model_to_json(model))
        for k in model.params:
            np.testing.assert_allclose(clone.params[k], model.params[k],
                                       rtol=0, atol=1e-15)

    def test_format_guard(self):
        with pytest.raises(ConfigError):
            model_from_json('{"format": "other/9"}')


class TestHyperparams:
    def test_range_validation(self):
        LstmHyperparams(epochs=50, learning_rate=0.001,
                        batch_size=32).validate_ranges()
        with pytest.raises(ConfigError):
            LstmHyperparams(epochs=5).validate_ranges()
        with pytest.raises(ConfigError):
            LstmHyperparams(learning_rate=0.5).validate_ranges()
        with pytest.raises(ConfigError):
            LstmHyperparams(batch_size=200).validate_ranges()
