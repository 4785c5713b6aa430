import numpy as np
import pytest

from shredkit import datasets as ds
from shredkit import gradcore as gc
from shredkit import models as M
from shredkit.errors import InvalidArgumentError, ShapeError, TrainingDivergedError

from oracles import central_difference, lstm_loop, max_relative_error


def _zero_cell(hidden, inp):
    z = lambda *s: gc.Tensor(np.zeros(s), requires_grad=True)  # noqa: E731
    return M.LstmCellWeights(*(z(hidden, hidden + inp) for _ in range(4)), *(z(hidden) for _ in range(4)))


def _windowed(inputs, targets, n_train, n_val):
    n = len(inputs)
    split = ds.SplitSpec(np.arange(n_train), np.arange(n_train, n_train + n_val), np.arange(n_train + n_val, n), n)
    return ds.WindowedDataset(np.asarray(inputs, float), np.asarray(targets, float), np.arange(n), split, 1)


# ---------------------------------------------------------------------------
# LSTM cell and encoder


def test_cell_zero_weights_stay_zero():
    cell = _zero_cell(3, 2)
    h, c = np.zeros(3), np.zeros(3)
    for v in np.random.default_rng(0).standard_normal((4, 2)):
        h, c = M.lstm_cell_step(cell, h, c, v)
    assert np.all(h.value == 0) and np.all(c.value == 0)


def test_cell_saturated_forget_gate():
    cell = _zero_cell(1, 1)
    cell.b_f.value[:] = 20.0
    h, c = M.lstm_cell_step(cell, np.zeros(1), np.ones(1), np.zeros(1))
    assert float(c.value[0]) == pytest.approx(1.0, abs=1e-3)
    assert float(h.value[0]) == pytest.approx(0.5 * np.tanh(1.0), abs=1e-3)


def test_cell_matches_plain_loop_oracle():
    rng = np.random.default_rng(3)
    cell = M.LstmCellWeights.init(1, 1, rng)
    for b in (cell.b_o, cell.b_f, cell.b_i, cell.b_g):
        b.value[:] = rng.uniform(-1, 1, size=1)
    xs = rng.standard_normal((3, 1))
    ws = {g: w.value.tolist() for g, w in zip("ofig", (cell.w_o, cell.w_f, cell.w_i, cell.w_g))}
    bs = {g: b.value.tolist() for g, b in zip("ofig", (cell.b_o, cell.b_f, cell.b_i, cell.b_g))}
    expected = lstm_loop(ws, bs, xs, 1)
    h, c = np.zeros(1), np.zeros(1)
    for t in range(3):
        h, c = M.lstm_cell_step(cell, h, c, xs[t])
        assert float(h.value[0]) == pytest.approx(expected[t][0], abs=1e-12)


def test_fused_sequence_matches_plain_loop_multilayer():
    rng = np.random.default_rng(4)
    stack = M.LstmStack.init(2, 3, 2, rng)
    for layer in stack.layers:
        for b in (layer.b_o, layer.b_f, layer.b_i, layer.b_g):
            b.value[:] = rng.uniform(-0.5, 0.5, size=3)
    window = rng.standard_normal((5, 2))
    seq = window
    for layer in stack.layers:
        ws = {g: w.value.tolist() for g, w in zip("ofig", (layer.w_o, layer.w_f, layer.w_i, layer.w_g))}
        bs = {g: b.value.tolist() for g, b in zip("ofig", (layer.b_o, layer.b_f, layer.b_i, layer.b_g))}
        seq = np.array(lstm_loop(ws, bs, seq, 3))
    fused = M.lstm_encode(stack, window).value
    stepped = M.lstm_encode(stack, window, fused=False).value
    np.testing.assert_allclose(fused, seq[-1], atol=1e-12)
    np.testing.assert_allclose(stepped, seq[-1], atol=1e-12)


def test_encode_zero_weights_and_window_order():
    zero = M.LstmStack([_zero_cell(4, 2), _zero_cell(4, 4)])
    window = np.random.default_rng(1).standard_normal((6, 2))
    assert np.all(M.lstm_encode(zero, window).value == 0)
    stack = M.LstmStack.init(2, 4, 2, np.random.default_rng(2))
    delta = M.lstm_encode(stack, window).value - M.lstm_encode(stack, window[::-1]).value
    assert np.linalg.norm(delta) > 0


def test_encode_closed_forget_gate_forgets_history():
    cell = _zero_cell(1, 1)
    cell.b_f.value[:] = -20.0
    cell.w_g.value[:, 1] = 1.0  # input column only, so h cannot carry history
    cell.b_i.value[:] = 1.0
    stack = M.LstmStack([cell])
    one = M.lstm_encode(stack, np.full((1, 1), 0.7)).value
    two = M.lstm_encode(stack, np.full((2, 1), 0.7)).value
    assert abs(one[0] - two[0]) < 1e-6


def test_encode_wrong_length_and_width():
    stack = M.LstmStack.init(2, 3, 1, np.random.default_rng(0))
    with pytest.raises(InvalidArgumentError):
        M.lstm_encode(stack, np.zeros((4, 2)), lag=5)
    with pytest.raises(ShapeError):
        M.lstm_encode(stack, np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        M.lstm_cell_step(stack.layers[0], np.zeros(2), np.zeros(3), np.zeros(2))


def test_stack_and_decoder_invariants():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeError):
        M.LstmStack([M.LstmCellWeights.init(2, 3, rng), M.LstmCellWeights.init(2, 3, rng)])
    with pytest.raises(ShapeError):
        M.ShredModel(M.LstmStack.init(2, 3, 1, rng), M.ShallowDecoder.init(4, (5,), 6, rng), lag=2)


def test_initialization_scheme():
    rng = np.random.default_rng(0)
    cell = M.LstmCellWeights.init(5, 7, rng)
    bound = 1 / np.sqrt(12)
    assert np.abs(cell.w_o.value).max() <= bound and np.all(cell.b_f.value == 0)
    layer = M.DenseLayer.init(10, 4, rng)
    assert np.abs(layer.weight.value).max() <= 1 / np.sqrt(10) and np.all(layer.bias.value == 0)


# ---------------------------------------------------------------------------
# forward maps


def test_shred_forward_constant_network():
    model = M.build_shred(2, 5, lag=3, hidden_size=4, num_layers=1, decoder_sizes=())
    for _, t in model.encoder.named_parameters():
        t.value[:] = 0
    beta = np.arange(5.0)
    model.decoder.layers[0].bias.value[:] = beta
    out = M.shred_forward(model, np.random.default_rng(0).standard_normal((3, 2))).value
    np.testing.assert_array_equal(out, beta)


def test_shred_forward_inverse_scales():
    model = M.build_shred(1, 2, lag=2, hidden_size=2, num_layers=1, decoder_sizes=())
    for _, t in model.named_parameters():
        t.value[:] = 0
    model.decoder.layers[0].bias.value[:] = [0.0, 1.0]
    model.state_scaler = ds.Scaler(np.array([-2.0, 10.0]), np.array([2.0, 20.0]))
    np.testing.assert_allclose(M.shred_forward(model, np.zeros((2, 1))).value, [-2.0, 20.0])


def test_sdn_forward_identity_and_constant():
    dec = M.ShallowDecoder([M.DenseLayer(gc.Tensor(np.eye(3)), gc.Tensor(np.zeros(3)))])
    y = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(M.sdn_forward(dec, y).value, y)
    dec.layers[0].weight.value[:] = 0
    dec.layers[0].bias.value[:] = 4.0
    np.testing.assert_array_equal(M.sdn_forward(dec, y).value, [4.0, 4.0, 4.0])
    with pytest.raises(ShapeError):
        M.sdn_forward(dec, np.ones(2))


def test_shred_not_permutation_invariant():
    model = M.build_shred(2, 6, lag=4, hidden_size=5, num_layers=2, decoder_sizes=(7,), seed=3)
    w = np.random.default_rng(5).standard_normal((4, 2))
    a = M.shred_forward(model, w).value
    b = M.shred_forward(model, w[[2, 0, 3, 1]]).value
    assert np.linalg.norm(a - b) > 0


# ---------------------------------------------------------------------------
# gradients of full models


def _model_gradient_error(model, inputs, targets, params):
    def loss():
        return gc.mse_loss(model.forward_batch(inputs), gc.Tensor(targets))

    gc.backward(loss())
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    # Deep-layer gradients here are ~3e-5 against an O(1) loss, so h = 1e-6
    # leaves ~1e-5 relative rounding noise; h = 1e-5 balances truncation.
    numeric = central_difference(lambda: float(loss().value), [p.value for p in params], h=1e-5)
    return max_relative_error(analytic, numeric)


def test_shred_gradients_match_finite_differences():
    rng = np.random.default_rng(21)
    model = M.build_shred(2, 20, lag=5, hidden_size=4, num_layers=2, decoder_sizes=(6,), seed=1)
    err = _model_gradient_error(model, rng.standard_normal((3, 5, 2)), rng.standard_normal((3, 20)), model.parameters())
    assert err < 1e-5


def test_sdn_gradients_match_finite_differences():
    rng = np.random.default_rng(22)
    model = M.build_sdn(3, 20, hidden_sizes=(7, 6), seed=2)
    err = _model_gradient_error(model, rng.standard_normal((4, 3)), rng.standard_normal((4, 20)), model.parameters())
    assert err < 1e-5


# ---------------------------------------------------------------------------
# training


def test_train_zero_epochs_is_noop():
    model = M.build_sdn(2, 3, (4,), seed=0)
    before = [p.value.copy() for p in model.parameters()]
    data = _windowed(np.ones((10, 2)), np.ones((10, 3)), 6, 2)
    _, hist = M.train(model, data, M.TrainConfig(max_epochs=0))
    assert len(hist) == 0
    assert all(np.array_equal(a, p.value) for a, p in zip(before, model.parameters()))


def test_train_constant_target_reaches_tiny_loss():
    rng = np.random.default_rng(0)
    data = _windowed(rng.uniform(size=(40, 2)), np.full((40, 3), 0.25), 30, 5)
    model = M.build_sdn(2, 3, (8,), seed=1)
    _, hist = M.train(model, data, M.TrainConfig(max_epochs=1000, batch_size=8, learning_rate=3e-3, early_stop_patience=1000))
    assert min(hist.validation) < 1e-6


def test_train_is_deterministic_and_keeps_best():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(60, 3))
    y = np.sin(x @ rng.standard_normal((3, 4)))
    data = _windowed(x, y, 40, 10)
    cfg = M.TrainConfig(max_epochs=30, batch_size=8, learning_rate=5e-3, early_stop_patience=5, seed=4)
    m1, h1 = M.train(M.build_sdn(3, 4, (16,), seed=2), data, cfg)
    m2, h2 = M.train(M.build_sdn(3, 4, (16,), seed=2), data, cfg)
    assert h1.epochs == h2.epochs
    assert all(np.array_equal(a.value, b.value) for a, b in zip(m1.parameters(), m2.parameters()))
    final = M.evaluate_loss(m1, *data.subset(ds.VALIDATION))
    assert final == pytest.approx(min(h1.validation), rel=1e-12)
    assert all(final <= v + 1e-15 for v in h1.validation)


def test_train_errors():
    data = _windowed(np.ones((5, 2)), np.ones((5, 1)), 5, 0)
    with pytest.raises(InvalidArgumentError):
        M.train(M.build_sdn(2, 1, (3,)), data, M.TrainConfig(max_epochs=2, early_stop_patience=1))
    bad = _windowed(np.full((8, 2), 1e200), np.ones((8, 1)), 5, 2)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError) as info:
        M.train(M.build_sdn(2, 1, (3,)), bad, M.TrainConfig(max_epochs=3, early_stop_patience=1), context="probe")
    assert info.value.epoch == 0 and "probe" in str(info.value)


def test_train_config_validation():
    with pytest.raises(InvalidArgumentError):
        M.TrainConfig(max_epochs=5, early_stop_patience=6)
    with pytest.raises(InvalidArgumentError):
        M.TrainConfig(learning_rate=0)


def test_shred_learns_rank_one_field():
    t = np.arange(300)
    mode = np.sin(np.linspace(0, np.pi, 16)) + 0.2
    states = np.outer(np.sin(2 * np.pi * t / 37) + 1.5, mode)
    meas = states[:, [5]]
    wd = ds.make_windows(meas, states, 8, ds.split_interspersed(292, seed=0))
    sens, st = ds.fit_scaler(wd.subset("train")[0]), ds.fit_scaler(wd.subset("train")[1])
    model = M.build_shred(1, 16, 8, hidden_size=8, num_layers=1, decoder_sizes=(16,), seed=0)
    model.state_scaler = st
    scaled = wd.rescaled(sens, st)
    M.train(model, scaled, M.TrainConfig(max_epochs=60, batch_size=16, learning_rate=5e-3, early_stop_patience=20))
    x_in, _ = scaled.subset("test")
    pred, truth = model.predict(x_in), wd.subset("test")[1]
    err = np.mean(np.linalg.norm(pred - truth, axis=1) / np.linalg.norm(truth, axis=1))
    assert err < 0.05


def test_sdn_learns_rank_one_field():
    t = np.arange(300)
    mode = np.cos(np.linspace(0, 2, 16)) + 1.0
    states = np.outer(np.cos(2 * np.pi * t / 50) + 2.0, mode)
    wd = ds.make_windows(states[:, [1, 7, 12]], states, 1, ds.split_interspersed(299, seed=1))
    sens, st = ds.fit_scaler(wd.subset("train")[0]), ds.fit_scaler(wd.subset("train")[1])
    model = M.build_sdn(3, 16, (16,), seed=0)
    model.state_scaler = st
    scaled = wd.rescaled(sens, st).static()
    M.train(model, scaled, M.TrainConfig(max_epochs=80, batch_size=16, learning_rate=5e-3, early_stop_patience=20))
    pred, truth = model.predict(scaled.subset("test")[0]), wd.subset("test")[1]
    err = np.mean(np.linalg.norm(pred - truth, axis=1) / np.linalg.norm(truth, axis=1))
    assert err < 0.1


# ---------------------------------------------------------------------------
# forecasting


def test_forecaster_pairs():
    y = np.arange(10.0)
    w, t = M.forecaster_train_target(y, 9)
    assert len(w) == 1 and t[0, 0] == 9
    w, t = M.forecaster_train_target(y[:7], 4)
    assert len(w) == 3
    rebuilt = np.concatenate([w[0, :, 0], t[:, 0]])
    np.testing.assert_array_equal(rebuilt, y[:7])
    with pytest.raises(InvalidArgumentError):
        M.forecaster_train_target(y[:3], 3)


def test_rollout_single_step_and_constant_model():
    fc = M.build_forecaster(2, lag=3, hidden_size=4, num_layers=1, seed=0)
    seed_window = np.random.default_rng(0).standard_normal((3, 2))
    one = M.rollout(fc, seed_window, 1)
    np.testing.assert_allclose(one[0], fc.forward_batch(seed_window[None]).value[0])
    for _, t in fc.encoder.named_parameters():
        t.value[:] = 0
    fc.head.weight.value[:] = 0
    fc.head.bias.value[:] = [0.3, -0.1]
    np.testing.assert_array_equal(M.rollout(fc, seed_window, 5), np.tile([0.3, -0.1], (5, 1)))
    with pytest.raises(InvalidArgumentError):
        M.rollout(fc, seed_window, 0)


def test_rollout_sinusoid():
    t = np.arange(400)
    y = np.sin(2 * np.pi * t / 40)[:, None]
    scaler = ds.fit_scaler(y[:320])
    ys = scaler.transform(y)
    k = 40
    win, tgt = M.forecaster_train_target(ys[:320], k)
    n = len(win)
    split = ds.split_temporal(n, ((ds.TRAIN, n - 20), (ds.VALIDATION, 20)))
    data = ds.WindowedDataset(win, tgt, np.arange(k, 320), split, k)
    fc = M.build_forecaster(1, k, hidden_size=16, num_layers=1, seed=0)
    M.train(fc, data, M.TrainConfig(max_epochs=60, batch_size=16, learning_rate=5e-3, early_stop_patience=20))
    pred = scaler.inverse(M.rollout(fc, ys[320 - k:320], 40))
    truth = y[320:360]
    assert np.linalg.norm(pred - truth) / np.linalg.norm(truth) < 0.1
