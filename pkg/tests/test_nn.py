import numpy as np
import pytest

from appident.nn import (
    LSTM,
    Adam,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    MaxPool1D,
    Network,
    Param,
    ReLU,
    Softmax,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    manifest_hash,
    save_checkpoint,
    train_model,
)
from appident.nn.network import layer_from_spec


def test_zero_weight_dense_softmax_uniform():
    r = np.random.default_rng(0)
    net = Network([Dense(8, 5, rng=r), Softmax()], r)
    net.layers[0].w.value[...] = 0.0
    probs = net.forward(np.random.default_rng(1).random((6, 8), dtype=np.float32))
    assert np.allclose(probs, 1 / 5, atol=1e-7)


def test_softmax_rows_sum_to_one():
    r = np.random.default_rng(0)
    net = Network([Dense(8, 7, rng=r), Softmax()], r)
    probs = net.forward(np.random.default_rng(1).random((16, 8), dtype=np.float32))
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert probs.min() >= 0.0


def test_identity_conv_kernel():
    r = np.random.default_rng(0)
    conv = Conv1D(1, 1, 1, 1, rng=r)
    conv.w.value[...] = 1.0
    conv.b.value[...] = 0.0
    x = np.random.default_rng(2).random((3, 10, 1), dtype=np.float32)
    y = conv.forward(x)
    assert np.allclose(y, x, atol=1e-7)


def test_maxpool_definition():
    pool = MaxPool1D(2, 2)
    x = np.array([1.0, 3.0, 2.0, 0.0], dtype=np.float32).reshape(1, 4, 1)
    y = pool.forward(x)
    assert y.reshape(-1).tolist() == [3.0, 2.0]


def test_adam_zero_gradient_no_motion():
    p = Param(np.array([1.0, -2.0], dtype=np.float32))
    opt = Adam([p], lr=0.1)
    before = p.value.copy()
    p.grad[...] = 0.0
    opt.step()
    assert np.array_equal(p.value, before)


def test_adam_first_step_closed_form():
    # with constant gradient g, the bias-corrected first step is
    # -lr * g / (|g| + eps'), i.e. almost exactly -lr * sign(g)
    g = np.array([0.3, -0.7, 1.5], dtype=np.float64)
    p = Param(np.zeros(3, dtype=np.float64))
    lr = 0.01
    opt = Adam([p], lr=lr, eps=1e-8)
    p.grad[...] = g
    opt.step()
    expected = -lr * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.value, expected, rtol=1e-9)


def test_adam_constant_gradient_monotone():
    p = Param(np.array([0.0], dtype=np.float64))
    opt = Adam([p], lr=0.05)
    history = [p.value[0]]
    for _ in range(3):
        p.grad[...] = 2.0
        opt.step()
        history.append(p.value[0])
    assert history[0] > history[1] > history[2] > history[3]


class _ConstantLossModel:
    def __init__(self):
        self.p = Param(np.zeros(1, dtype=np.float32))
        self.calls = 0

    def parameters(self):
        return [self.p]

    def loss_and_backward(self, x, y):
        self.calls += 1
        self.p.grad[...] = 0.0
        return 1.0


def test_patience_stops_after_exactly_one_plus_patience_epochs():
    model = _ConstantLossModel()
    x = np.zeros((10, 2), dtype=np.float32)
    y = np.zeros(10, dtype=np.int64)
    cfg = TrainConfig(max_epochs=30, patience=5, batch_size=10, seed=0)
    result = train_model(model, (x,), y, cfg)
    assert result.epochs_run == 6  # 1 establishing epoch + 5 stale
    assert result.stopped_early


def test_divergence_raises_with_epoch():
    class NanModel(_ConstantLossModel):
        def loss_and_backward(self, x, y):
            return float("nan")

    with pytest.raises(TrainingDiverged) as err:
        train_model(NanModel(), (np.zeros((4, 1), np.float32),), np.zeros(4, np.int64), TrainConfig(seed=0))
    assert err.value.epoch == 0


def test_training_deterministic_for_seed():
    def run():
        r = np.random.default_rng(3)
        net = Network([Dense(6, 8, rng=r), ReLU(), Dropout(0.3), Dense(8, 3, rng=r), Softmax()], r)
        rng = np.random.default_rng(10)
        x = rng.random((40, 6), dtype=np.float32)
        y = rng.integers(0, 3, 40)
        res = train_model(net, (x,), y, TrainConfig(max_epochs=5, patience=5, batch_size=8, seed=11))
        return res.epoch_losses

    assert run() == run()


def test_linearly_separable_toy_reaches_full_accuracy():
    rng = np.random.default_rng(0)
    n = 60
    x = np.concatenate([rng.normal(-2, 0.3, (n, 4)), rng.normal(2, 0.3, (n, 4))]).astype(np.float32)
    y = np.concatenate([np.zeros(n, np.int64), np.ones(n, np.int64)])
    r = np.random.default_rng(1)
    net = Network([Dense(4, 8, rng=r), ReLU(), Dense(8, 2, rng=r), Softmax()], r)
    res = train_model(net, (x,), y, TrainConfig(max_epochs=30, patience=30, batch_size=16, seed=2))
    assert res.epochs_run <= 30
    acc = np.mean(np.argmax(net.predict_proba(x), 1) == y)
    assert acc == 1.0


def test_dropout_expectation_matches_inference():
    # on a linear readout, inverted dropout keeps E[train output] = eval output;
    # tested on the scalar sum statistic over 1e4 mask draws at 3 sigma
    rng = np.random.default_rng(0)
    drop = Dropout(0.4)
    drop.rng = np.random.default_rng(5)
    x = rng.random((1, 200), dtype=np.float64) + 0.5
    sums = np.array([drop.forward(x, training=True).sum() for _ in range(10000)])
    eval_sum = drop.forward(x, training=False).sum()
    se = sums.std(ddof=1) / np.sqrt(len(sums))
    assert abs(sums.mean() - eval_sum) <= 3 * se


def test_batchnorm_inference_bit_stable():
    r = np.random.default_rng(0)
    bn = BatchNorm(4)
    x = np.random.default_rng(1).random((32, 10, 4), dtype=np.float32)
    bn.forward(x, training=True)  # accumulate stats
    a = bn.forward(x, training=False)
    b = bn.forward(x, training=False)
    assert np.array_equal(a, b)


def test_batchnorm_calibration_sets_exact_moments():
    r = np.random.default_rng(0)
    net = Network([Dense(6, 4, rng=r), BatchNorm(4), Softmax()], r)
    x = np.random.default_rng(1).random((64, 6), dtype=np.float32)
    net.calibrate_stats(x, batch_size=16)
    bn = net.layers[1]
    pre = net.layers[0].forward(x)
    assert np.allclose(bn.running_mean, pre.mean(axis=0), atol=1e-5)
    assert np.allclose(bn.running_var, pre.var(axis=0), atol=1e-5)


def test_lstm_final_state_shape_and_determinism():
    r = np.random.default_rng(0)
    lstm = LSTM(5, 7, rng=r)
    x = np.random.default_rng(1).random((4, 3, 5), dtype=np.float32)
    h1 = lstm.forward(x, training=False)
    h2 = lstm.forward(x, training=False)
    assert h1.shape == (4, 7)
    assert np.array_equal(h1, h2)


def test_checkpoint_roundtrip_and_hash_guard(tmp_path):
    r = np.random.default_rng(0)
    net = Network(
        [Conv1D(1, 3, 3, 1, rng=r), ReLU(), MaxPool1D(2, 2), BatchNorm(3), Dense(4 * 3, 2, rng=r), Softmax()], r
    )
    x = np.random.default_rng(1).random((8, 10), dtype=np.float32)
    net.forward(x, training=True)

    from appident.classifier import network_state, restore_network

    specs, params, buffers = network_state(net)
    path = tmp_path / "model.ckpt"
    manifest = {"model_type": "test", "layers": specs, "seed": 3}
    save_checkpoint(path, manifest, params, buffers)
    blob = load_checkpoint(path)
    assert blob["manifest"]["layers"] == specs
    net2 = restore_network(blob["manifest"]["layers"], blob["params"], blob["buffers"])
    assert np.array_equal(net2.forward(x), net.forward(x))

    # corrupt the stored hash -> load must fail
    import numpy as _np
    import zipfile

    from appident.nn import CheckpointError

    with zipfile.ZipFile(path, "a") as zf:
        pass
    data = dict(np.load(path, allow_pickle=False))
    data["__hash__"] = np.frombuffer(b"0" * 64, dtype=np.uint8).copy()
    bad = tmp_path / "bad.ckpt"
    with open(bad, "wb") as fh:
        np.savez(fh, **data)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_layer_from_spec_roundtrip():
    specs = [
        {"kind": "conv1d", "in_channels": 2, "out_channels": 4, "kernel_size": 3, "stride": 1},
        {"kind": "relu"},
        {"kind": "maxpool1d", "kernel_size": 2, "stride": 2},
        {"kind": "batchnorm", "channels": 4, "momentum": 0.9, "eps": 1e-5},
        {"kind": "dense", "in_features": 8, "units": 3},
        {"kind": "dropout", "rate": 0.5},
        {"kind": "lstm", "input_size": 3, "units": 5, "dropout": 0.1},
        {"kind": "softmax"},
    ]
    for spec in specs:
        layer = layer_from_spec(spec)
        assert layer.spec() == spec
