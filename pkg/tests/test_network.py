import numpy as np
import pytest

from cimtrain import data, device as dev
from cimtrain.errors import StateError, TopologyError
from cimtrain.network import (BatchSchedule, MomentumState, QuantNet, TrainOptions,
                              evaluate, momentum_update, softmax_cross_entropy, train)
from cimtrain.topology import Conv2d, Flatten, Linear, MaxPool, NetworkTopology, ReLU

from oracles import finite_difference_check


def small_net():
    layers = [Conv2d(1, 2, 3), ReLU(), MaxPool(2), Flatten(), Linear(8, 3)]
    return NetworkTopology(layers, (1, 4, 4))


def float_net(topo=None, seed=0, **kw):
    opts = TrainOptions(full_precision=True, **kw)
    return QuantNet(topo or small_net(), None, seed=seed, options=opts)


def ideal_device(states=256):
    return dev.DeviceSpec("ideal", r_on=1e5, on_off_ratio=100, num_states=states)


# -- momentum -------------------------------------------------------------------

def test_momentum_first_step():
    s, delta = momentum_update(MomentumState(np.zeros(1), 0.9, 1.0), np.ones(1))
    assert s.v[0] == pytest.approx(0.1)
    assert delta[0] == pytest.approx(0.1)


def test_momentum_two_steps():
    s = MomentumState(np.zeros(2), 0.9, 1.0)
    s, _ = momentum_update(s, np.ones(2))
    s, _ = momentum_update(s, np.ones(2))
    np.testing.assert_allclose(s.v, [0.19, 0.19])


def test_momentum_zero_beta_is_sgd():
    g = np.array([0.3, -2.0])
    _, delta = momentum_update(MomentumState(np.zeros(2), 0.0, 0.5), g)
    np.testing.assert_allclose(delta, 0.5 * g)


def test_momentum_linear_in_gradient():
    rng = np.random.default_rng(0)
    g1, g2 = rng.normal(size=4), rng.normal(size=4)
    s = MomentumState(np.zeros(4), 0.9, 0.3)
    _, d12 = momentum_update(s, 2 * g1 + 3 * g2)
    _, d1 = momentum_update(s, g1)
    _, d2 = momentum_update(s, g2)
    np.testing.assert_allclose(d12, 2 * d1 + 3 * d2)


def test_momentum_shape_mismatch():
    with pytest.raises(TopologyError):
        momentum_update(MomentumState(np.zeros(2)), np.zeros(3))


# -- forward / backward -----------------------------------------------------------

def test_zero_error_gives_zero_errors():
    net = float_net()
    net.forward(np.random.default_rng(0).normal(size=(2, 1, 4, 4)))
    errors, grads, _ = net.backward(np.zeros((2, 3)))
    assert all(np.all(e == 0) for e in errors.values())
    assert all(np.all(g == 0) for g in grads.values())


def test_backward_requires_forward():
    with pytest.raises(StateError):
        float_net().backward(np.zeros((1, 3)))


def test_input_shape_checked():
    with pytest.raises(TopologyError):
        float_net().forward(np.zeros((1, 1, 5, 5)))


def test_gradient_check_full_precision():
    net = float_net(seed=3)
    assert sum(net.weights[i].w.size for i in net.weighted) <= 1000
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(4, 1, 4, 4)), rng.integers(0, 3, 4)
    assert finite_difference_check(net, x, y) < 1e-3


def test_gradient_check_two_layer_fc():
    topo = NetworkTopology([Linear(2, 2), ReLU(), Linear(2, 2)], (2,))
    net = float_net(topo, seed=5)
    assert sum(net.weights[i].w.size for i in net.weighted) <= 10
    x = np.random.default_rng(2).normal(size=(3, 2))
    assert finite_difference_check(net, x, np.array([0, 1, 1])) < 1e-3


# -- training -----------------------------------------------------------------------

def blobs_split(seed=0, n=200, classes=2):
    x, y = data.blobs(n=n, classes=classes, shape=(1, 4, 4), seed=seed)
    return x[:n // 2], y[:n // 2], x[n // 2:], y[n // 2:]


def test_loss_decreases_ideal_full_precision():
    topo = NetworkTopology([Conv2d(1, 2, 3), ReLU(), MaxPool(2), Flatten(), Linear(8, 2)],
                           (1, 4, 4))
    net = float_net(topo, seed=0, lr=0.1, momentum=None)
    xtr, ytr, xte, yte = blobs_split()
    traces = train(net, xtr, ytr, xte, yte, BatchSchedule(8, 5), seed=0)
    losses = [t.loss for t in traces]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_device_training_deterministic():
    topo = NetworkTopology([Flatten(), Linear(16, 2)], (1, 4, 4))
    spec = dev.DeviceSpec("n", r_on=1e5, on_off_ratio=100, num_states=64, nl_ltp=2,
                          nl_ltd=-2, c2c_sigma=0.01, d2d_sigma=0.2)
    xtr, ytr, xte, yte = blobs_split()

    def run():
        net = QuantNet(topo, spec, seed=4, options=TrainOptions(lr=0.5, adc_bits=6))
        train(net, xtr, ytr, xte, yte, BatchSchedule(8, 2), seed=4)
        return net.snapshot()

    a, b = run(), run()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_batch_one_updates_every_sample():
    topo = NetworkTopology([Flatten(), Linear(16, 2)], (1, 4, 4))
    net = QuantNet(topo, ideal_device(), seed=0, options=TrainOptions(lr=0.5))
    xtr, ytr, xte, yte = blobs_split(n=20)
    traces = train(net, xtr, ytr, xte, yte, BatchSchedule(1, 1), seed=0)
    assert traces[0].batches == len(xtr)


def test_trace_holds_last_iteration():
    net = QuantNet(small_net(), ideal_device(), seed=0, options=TrainOptions(lr=0.5))
    x, y = data.blobs(n=40, classes=3, shape=(1, 4, 4), seed=1)
    trace = train(net, x, y, x, y, BatchSchedule(8, 1), seed=0)[0]
    assert [lt.layer_index for lt in trace.layers] == net.weighted
    for lt in trace.layers:
        assert 0 <= lt.act_ones_fraction <= 1
        np.testing.assert_array_equal(lt.new_weights, net.weights[lt.layer_index].values())


def test_empty_dataset_rejected():
    net = float_net()
    with pytest.raises(TopologyError):
        train(net, np.zeros((0, 1, 4, 4)), np.zeros(0, int), np.zeros((0, 1, 4, 4)),
              np.zeros(0, int), BatchSchedule(4, 1))


def test_untrained_net_near_chance():
    topo = NetworkTopology([Flatten(), Linear(16, 4)], (1, 4, 4))
    accs = []
    for seed in range(20):
        net = float_net(topo, seed=seed)
        x = np.random.default_rng(100 + seed).normal(size=(500, 1, 4, 4))
        y = np.random.default_rng(200 + seed).integers(0, 4, 500)
        accs.append(evaluate(net, x, y))
    assert np.mean(accs) == pytest.approx(0.25, abs=0.03)


def test_evaluate_is_pure():
    net = QuantNet(small_net(), ideal_device(), seed=1)
    x, y = data.blobs(n=50, classes=3, shape=(1, 4, 4), seed=2)
    assert evaluate(net, x, y) == evaluate(net, x, y)


def test_separable_pair_fits():
    topo = NetworkTopology([Linear(2, 2)], (2,))
    net = float_net(topo, seed=0, lr=0.5, momentum=None)
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    y = np.array([0, 1])
    train(net, x, y, x, y, BatchSchedule(2, 50), seed=0)
    assert evaluate(net, x, y) == 1.0


def test_sram_weights_stay_on_grid():
    spec = dev.get_device("SRAM-32nm-parallel")
    net = QuantNet(small_net(), spec, seed=0, options=TrainOptions(lr=0.5))
    x, y = data.blobs(n=32, classes=3, shape=(1, 4, 4), seed=0)
    train(net, x, y, x, y, BatchSchedule(8, 1), seed=0)
    for i in net.weighted:
        lw = net.weights[i]
        k = (lw.w + 1) / (2 / lw.p_max)
        np.testing.assert_allclose(k, np.rint(k), atol=1e-9)
