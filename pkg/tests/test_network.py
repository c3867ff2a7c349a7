import numpy as np
import pytest

import oracles
from ulhm.errors import ConfigError, DimensionError, TrainingDivergedError
from ulhm.toy.network import Network, NetworkSpec, backward, forward, init_network
from ulhm.toy.optim import AdamState, adam_step, sgd_step


def test_init_deterministic():
    a = init_network(NetworkSpec((4, 8, 2), seed=3))
    b = init_network(NetworkSpec((4, 8, 2), seed=3))
    assert a.flat().tobytes() == b.flat().tobytes()
    assert [w.shape for w in a.weights] == [(8, 4), (2, 8)]
    c = init_network(NetworkSpec((4, 8, 2), seed=4))
    assert not np.array_equal(a.flat(), c.flat())


def test_spec_validation():
    with pytest.raises(ConfigError):
        NetworkSpec((4,))
    with pytest.raises(ConfigError):
        NetworkSpec((4, 2), activation="relu6")


def test_zero_network_outputs_zero():
    net = init_network(NetworkSpec((3, 5, 2)))
    net.set_flat(np.zeros(net.flat().size))
    assert not net(np.random.default_rng(0).standard_normal((4, 3))).any()


def test_identity_layer():
    net = Network(NetworkSpec((3, 3)), [np.eye(3)], [np.zeros(3)])
    x = np.random.default_rng(1).standard_normal((5, 3))
    assert np.array_equal(net(x), x)


@pytest.mark.parametrize("activation", ["tanh", "leaky_relu"])
def test_forward_matches_reimplementation(activation):
    rng = np.random.default_rng(2)
    net = init_network(NetworkSpec((4, 7, 5, 3), activation, 9))
    for b in net.biases:
        b[:] = rng.standard_normal(b.shape)
    x = rng.standard_normal((6, 4))
    ref = oracles.mlp_forward(net.weights, net.biases, x, activation)
    assert np.abs(net(x) - ref).max() <= 1e-12


@pytest.mark.parametrize("activation", ["tanh", "leaky_relu"])
def test_backward_finite_differences(activation):
    rng = np.random.default_rng(3)
    net = init_network(NetworkSpec((3, 6, 2), activation, 1))
    x = rng.standard_normal((5, 3))
    r = rng.standard_normal((5, 2))
    flat = net.flat()

    def f():
        net.set_flat(flat)
        return float((net(x) * r).sum())

    net.zero_grad()
    gx = backward(net, forward(net, x), r)
    analytic = np.concatenate([g.ravel() for g in net.grads()])
    assert oracles.rel_err(analytic, oracles.numeric_grad(f, flat)) < 1e-6
    net.set_flat(flat)
    assert oracles.rel_err(gx, oracles.numeric_grad(lambda: float((net(x) * r).sum()), x)) < 1e-6


def test_backward_frozen_leaves_grads():
    net = init_network(NetworkSpec((3, 4, 2)))
    x = np.ones((2, 3))
    net.zero_grad()
    backward(net, forward(net, x), np.ones((2, 2)), accumulate=False)
    assert not any(g.any() for g in net.grads())


def test_forward_shape_error():
    with pytest.raises(DimensionError):
        init_network(NetworkSpec((3, 2)))(np.ones((2, 4)))


def test_set_flat_size_check():
    net = init_network(NetworkSpec((3, 2)))
    with pytest.raises(DimensionError):
        net.set_flat(np.zeros(net.flat().size + 1))


def _scalar_net(value):
    return Network(NetworkSpec((1, 1)), [np.array([[value]])], [np.zeros(1)])


def test_zero_grads_unchanged():
    net = init_network(NetworkSpec((3, 4, 2)))
    before = net.flat()
    net.zero_grad()
    sgd_step(net, 0.1)
    adam_step(net, AdamState(), 0.1)
    assert np.array_equal(before, net.flat())


def test_sgd_single_step():
    net = _scalar_net(1.0)
    net.grad_w[0][:] = 1.0
    sgd_step(net, 0.1)
    assert net.weights[0][0, 0] == pytest.approx(0.9, abs=1e-15)


def test_adam_quadratic_bowl():
    net = _scalar_net(1.0)
    state = AdamState()
    for _ in range(500):
        net.grad_w[0][:] = 2.0 * net.weights[0]
        adam_step(net, state, 0.05)
    assert abs(net.weights[0][0, 0]) < 1e-3


def test_non_finite_gradient_raises():
    net = _scalar_net(1.0)
    net.grad_w[0][:] = np.nan
    with pytest.raises(TrainingDivergedError):
        sgd_step(net, 0.1)
    with pytest.raises(TrainingDivergedError):
        adam_step(net, AdamState(), 0.1)
