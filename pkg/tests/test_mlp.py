"""Network construction, forward evaluation, and parameter round-trips."""

import numpy as np
import pytest

from chokevfm import autodiff as ad
from chokevfm import mlp
from chokevfm.errors import ContractError


def test_he_variances_hidden_layer():
    # 100 inputs on a post-activation layer: element variance 2/100
    nets = [mlp.he_initialize([4, 100, 100, 1], seed=s) for s in range(30)]
    elements = np.concatenate([n.weights[1].ravel() for n in nets])
    assert abs(elements.var() - 0.02) < 0.002


def test_he_variance_first_layer():
    # raw inputs: variance 1/fan_in = 0.25 for 4 inputs
    nets = [mlp.he_initialize([4, 100, 1], seed=s) for s in range(30)]
    elements = np.concatenate([n.weights[0].ravel() for n in nets])
    assert abs(elements.var() - 0.25) < 0.01


def test_he_biases_zero_and_seed_deterministic():
    a = mlp.he_initialize([3, 8, 8, 1], seed=42)
    b = mlp.he_initialize([3, 8, 8, 1], seed=42)
    for la, lb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(la, lb)
    for bias in a.biases:
        assert not bias.any()


def test_layer_sigmas():
    sigmas = mlp.layer_sigmas([4, 100, 100, 1])
    assert sigmas[0] == pytest.approx(0.5)  # sqrt(1/4)
    assert sigmas[1] == pytest.approx(np.sqrt(0.02))
    assert sigmas[2] == pytest.approx(np.sqrt(0.02))


def test_forward_zero_network_is_zero():
    net = mlp.zero_network([3, 5, 1])
    out = mlp.forward_net(net, np.ones((4, 3)))
    np.testing.assert_array_equal(np.asarray(out), np.zeros(4))


def test_forward_single_affine_layer():
    net = mlp.Mlp(widths=[1, 1], weights=[np.array([[2.0]])], biases=[np.array([1.0])])
    assert mlp.forward_net(net, np.array([3.0])) == 7.0


def test_forward_dead_relu():
    net = mlp.Mlp(
        widths=[1, 1, 1],
        weights=[np.array([[1.0]]), np.array([[1.0]])],
        biases=[np.array([-1.0]), np.array([0.0])],
    )
    assert mlp.forward_net(net, np.array([0.5])) == 0.0


def test_forward_dimension_mismatch():
    net = mlp.zero_network([3, 4, 1])
    with pytest.raises(ContractError):
        mlp.forward_net(net, np.ones((2, 5)))


def test_piecewise_linearity_second_differences():
    """Without flipping any ReLU, the map is linear: second differences vanish."""
    net = mlp.he_initialize([3, 20, 20, 1], seed=5)
    x = np.array([0.3, -0.2, 0.7])
    direction = np.array([1.0, 0.5, -0.25])
    h = 1e-6  # far smaller than any preactivation margin here
    f = lambda v: float(np.asarray(mlp.forward_net(net, v.reshape(1, -1)))[0])
    second = f(x + 2 * h * direction) - 2.0 * f(x + h * direction) + f(x)
    assert abs(second) < 1e-12 * max(abs(f(x)), 1.0)


def test_forward_matches_tape_path():
    net = mlp.he_initialize([4, 10, 10, 1], seed=11)
    x = np.random.default_rng(0).standard_normal((6, 4))
    plain = np.asarray(mlp.forward_net(net, x))
    leaves_w = [ad.parameter(w) for w in net.weights]
    leaves_b = [ad.parameter(b) for b in net.biases]
    taped = ad.value_of(mlp.forward(leaves_w, leaves_b, ad.constant(x)))
    assert plain.tobytes() == taped.tobytes()


def test_serialization_round_trip_lossless(tmp_path):
    net = mlp.he_initialize([4, 7, 6, 1], seed=123)
    path = tmp_path / "net.txt"
    mlp.save_network(net, path)
    loaded = mlp.load_network(path)
    assert loaded.widths == net.widths
    assert loaded.seed == net.seed
    for a, b in zip(net.weights + net.biases, loaded.weights + loaded.biases):
        assert a.tobytes() == b.tobytes()
