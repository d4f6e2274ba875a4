import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import mae_loop
from roadlstm.network import Network, NetworkSpec, build_toy, conv
from roadlstm.pipeline import RoadSample
from roadlstm.tensor import Shape3, ShapeError, Tensor3, make_rng
from roadlstm.train import (AdamState, TrainConfig, TrainingError, adam_step, grad_check,
                            grad_check_layers, mae_loss, read_log, train, write_log)


def test_mae_examples():
    loss, g = mae_loss([0.2, 0.4], [0.0, 0.4])
    assert loss == pytest.approx(0.1)
    assert list(g) == [0.5, 0.0]
    loss, g = mae_loss([0.0, 1.0, 0.5], [1.0, 0.0, 0.5])
    assert loss == pytest.approx(2 / 3)
    np.testing.assert_allclose(g, [-1 / 3, 1 / 3, 0.0])


def test_mae_matches_loop_oracle():
    rng = make_rng(0)
    p, t = rng.uniform(size=600), rng.uniform(size=600)
    p[::50] = t[::50]
    loss, g = mae_loss(p, t)
    ref_loss, ref_g = mae_loop(p, t)
    assert loss == pytest.approx(ref_loss, rel=1e-12)
    np.testing.assert_array_equal(g, ref_g)


def test_mae_shape_mismatch():
    with pytest.raises(ShapeError):
        mae_loss([0.0, 1.0], [0.0])


def test_adam_zero_gradient_is_noop():
    p = [np.array([1.0, -2.0])]
    adam_step(AdamState(lr=0.1), p, [np.zeros(2)])
    assert list(p[0]) == [1.0, -2.0]


def test_adam_first_step():
    p = [np.array([1.0])]
    adam_step(AdamState(lr=0.1), p, [np.array([1.0])])
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert p[0][0] == pytest.approx(1.0 - 0.1 / (1 + 1e-8), abs=1e-12)


def test_adam_descends_quadratic():
    p = [np.array([3.0])]
    s = AdamState(lr=0.1)
    for _ in range(100):
        adam_step(s, p, [2 * p[0]])
    assert abs(p[0][0]) < 0.5


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_adam_scale_invariance(k):
    g = make_rng(1).normal(size=5)
    a, b = [np.zeros(5)], [np.zeros(5)]
    sa, sb = AdamState(lr=0.01, eps=1e-12), AdamState(lr=0.01, eps=1e-12)
    for _ in range(3):
        adam_step(sa, a, [g])
        adam_step(sb, b, [k * g])
    np.testing.assert_allclose(a[0], b[0], rtol=1e-6, atol=1e-12)


def test_adam_rejects_non_finite():
    p = [np.zeros(3), np.zeros(4)]
    g = [np.zeros(3), np.array([0.0, 0.0, np.nan, 0.0])]
    with pytest.raises(TrainingError, match="index 5"):
        adam_step(AdamState(), p, g)


def linear_toy():
    spec = NetworkSpec(Shape3(6, 3, 2), [conv("lin", 3, 3, 2, 1, (1, 3), "same")])
    net = Network.build(spec, seed=0)
    return net


def test_grad_check_linear_toy():
    net = linear_toy()
    rng = make_rng(2)
    x = rng.normal(size=(3, 6, 2))
    assert net.forward(x).shape == (6,)
    # keep residuals away from zero so the MAE kink is never crossed
    target = net.forward(x) + np.where(rng.uniform(size=6) > 0.5, 1.0, -1.0)
    # no truncation error for a linear loss, so a wide step only cuts rounding
    assert grad_check(net, x, target, eps=1e-3) < 1e-9


def toy_case(seed):
    net = Network.build(build_toy(Shape3(16, 8, 2)), seed=seed)
    rng = make_rng(seed + 100)
    x = rng.normal(size=(8, 16, 2))
    out = net.forward(x)
    target = np.clip(out + rng.choice([-0.3, 0.3], size=out.shape), 0, 1)
    return net, x, target


def test_grad_check_conv_lstm_toy():
    net, x, target = toy_case(3)
    errs = grad_check_layers(net, x, target)
    assert set(errs) == set(net.param_names())
    assert max(errs.values()) < 1e-4


def test_grad_check_detects_corruption():
    net, x, target = toy_case(4)
    errs = grad_check_layers(net, x, target, corrupt="lstm_a.U")
    # |2a - a| / max(|2a|, |a|) = 1/2
    assert errs["lstm_a.U"] == pytest.approx(0.5, abs=1e-3)
    assert max(v for k, v in errs.items() if k != "lstm_a.U") < 1e-4


def samples(n, seed=0):
    rng = make_rng(seed)
    return [RoadSample(Tensor3(rng.uniform(size=(8, 16, 2))), rng.uniform(0.2, 0.8, size=16)) for _ in range(n)]


def test_zero_learning_rate_keeps_weights():
    net = Network.build(build_toy(), seed=5)
    before = [p.copy() for p in net.params()]
    hist = train(net, samples(4), TrainConfig(batch_size=2, epochs=2, lr=0.0, noise_sd=0.01))
    assert len(hist) == 2
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params()))


def test_training_reduces_loss():
    net = Network.build(build_toy(), seed=6)
    data = samples(4, seed=1)
    hist = train(net, data, TrainConfig(batch_size=2, epochs=30, lr=1e-2, noise_sd=0.0))
    assert hist[-1].train_mae < hist[0].train_mae


def test_seeded_training_is_reproducible(tmp_path):
    logs = []
    weights = []
    for run in range(2):
        net = Network.build(build_toy(), seed=7)
        hist = train(net, samples(5), TrainConfig(batch_size=2, epochs=3, lr=1e-3, seed=11),
                     val=samples(2, seed=9))
        path = tmp_path / f"log{run}.csv"
        write_log(hist, path, timing=False)
        logs.append(path.read_bytes())
        weights.append(np.concatenate([p.ravel() for p in net.params()]))
    assert logs[0] == logs[1]
    assert np.array_equal(weights[0], weights[1])


def test_log_round_trip(tmp_path):
    net = Network.build(build_toy(), seed=8)
    hist = train(net, samples(2), TrainConfig(batch_size=1, epochs=2, lr=1e-3), val=samples(1))
    write_log(hist, tmp_path / "l.csv")
    back = read_log(tmp_path / "l.csv")
    assert [r.epoch for r in back] == [1, 2]
    assert [r.train_mae for r in back] == [r.train_mae for r in hist]
    assert [r.val_mae for r in back] == [r.val_mae for r in hist]


def test_early_stop_callback():
    net = Network.build(build_toy(), seed=9)
    hist = train(net, samples(2), TrainConfig(batch_size=1, epochs=10, lr=1e-3),
                 on_epoch=lambda r: r.epoch == 3)
    assert len(hist) == 3


def test_empty_dataset_and_bad_config():
    net = Network.build(build_toy(), seed=0)
    with pytest.raises(TrainingError):
        train(net, [], TrainConfig())
    with pytest.raises(ValueError):
        train(net, samples(1), TrainConfig(batch_size=0))
