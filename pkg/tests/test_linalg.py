import math

import numpy as np
import pytest

from subspace_mtl.linalg import (NetworkSpec, ShapeError, accuracy, derive_seed, forward, gaussian,
                                 init_params, loss_and_grad, make_rng)


def _straight_line_forward(spec, theta, x):
    """Scalar loops over the same arithmetic, independent of the vectorised code."""
    dims = [spec.input_dim, *spec.hidden, spec.output_dim]
    h = [float(v) for v in x]
    pos = 0
    for layer in range(len(dims) - 1):
        fan_in, fan_out = dims[layer], dims[layer + 1]
        weights = theta[pos:pos + fan_in * fan_out]
        pos += fan_in * fan_out
        bias = theta[pos:pos + fan_out]
        pos += fan_out
        out = []
        for o in range(fan_out):
            s = float(bias[o])
            for i in range(fan_in):
                s += float(weights[o * fan_in + i]) * h[i]
            if layer < len(dims) - 2:
                if spec.activation == "relu":
                    s = max(s, 0.0)
                else:
                    s = s if s > 0 else math.expm1(s)
            out.append(s)
        h = out
    return h


def test_parameter_count():
    spec = NetworkSpec(784, (100, 50), 10)
    assert spec.D == 784 * 100 + 100 + 100 * 50 + 50 + 50 * 10 + 10
    assert NetworkSpec(3, (), 2).D == 8


def test_invalid_spec():
    with pytest.raises(ValueError):
        NetworkSpec(0, (4,), 2)
    with pytest.raises(ValueError):
        NetworkSpec(3, (4,), 2, "tanh")


def test_linear_identity_column():
    spec = NetworkSpec(3, (), 3)
    theta = np.zeros(spec.D)
    W, _ = spec.unpack(theta)[0]
    W[:] = np.arange(9).reshape(3, 3)
    out = forward(spec, theta, np.array([[1.0, 0.0, 0.0]]))
    np.testing.assert_array_equal(out[0], W[:, 0])


def test_zero_theta_gives_zero_logits():
    spec = NetworkSpec(5, (7, 4), 3)
    out = forward(spec, np.zeros(spec.D), make_rng(0).standard_normal((6, 5)))
    assert np.all(out == 0)


@pytest.mark.parametrize("act", ["relu", "elu"])
def test_forward_matches_straight_line(act):
    spec = NetworkSpec(5, (8, 6), 4, act)
    rng = make_rng(3)
    theta = rng.standard_normal(spec.D)
    x = rng.standard_normal(5)
    got = forward(spec, theta, x[None, :])[0]
    np.testing.assert_allclose(got, _straight_line_forward(spec, theta, x), rtol=1e-12, atol=1e-12)


def test_forward_shape_errors():
    spec = NetworkSpec(4, (3,), 2)
    with pytest.raises(ShapeError, match="expects"):
        forward(spec, np.zeros(spec.D + 1), np.zeros((1, 4)))
    with pytest.raises(ShapeError):
        forward(spec, np.zeros(spec.D), np.zeros((1, 5)))


@pytest.mark.parametrize("act", ["relu", "elu"])
def test_cross_entropy_gradient_finite_difference(act):
    spec = NetworkSpec(4, (5,), 3, act)
    rng = make_rng(5)
    theta = rng.standard_normal(spec.D) * 0.5
    x = rng.standard_normal((7, 4))
    y = rng.integers(0, 3, 7)
    _, g = loss_and_grad(spec, theta, x, y)
    eps = 1e-6
    fd = np.empty(spec.D)
    for i in range(spec.D):
        e = np.zeros(spec.D)
        e[i] = eps
        fd[i] = (loss_and_grad(spec, theta + e, x, y, grad=False)[0]
                 - loss_and_grad(spec, theta - e, x, y, grad=False)[0]) / (2 * eps)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


def test_zero_one_loss():
    spec = NetworkSpec(2, (), 2)
    theta = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [0.0, 3.0]])
    y = np.array([0, 1, 1, 1])
    loss, grad = loss_and_grad(spec, theta, x, y, kind="zero_one", grad=False)
    assert loss == 0.25 and grad is None
    with pytest.raises(ValueError, match="no gradient"):
        loss_and_grad(spec, theta, x, y, kind="zero_one")
    assert accuracy(spec, theta, x, y) == 0.75


def test_label_range_checked():
    spec = NetworkSpec(2, (), 2)
    with pytest.raises(ValueError):
        loss_and_grad(spec, np.zeros(spec.D), np.zeros((1, 2)), np.array([2]))


def test_rng_determinism_and_independence():
    a = make_rng(42).standard_normal(5)
    b = make_rng(42).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert len({derive_seed(1, "a"), derive_seed(1, "b"), derive_seed(2, "a"), derive_seed(1, "a", 0)}) == 4
    assert 0 <= derive_seed(7, "x") < 2**63


def test_gaussian_statistics():
    g = gaussian(11, 400, 500)
    assert abs(g.mean()) < 0.01
    assert abs(g.std() - 1.0) < 0.01
    with pytest.raises(ShapeError):
        gaussian(0, 0, 3)


def test_init_params_fan_in_range():
    spec = NetworkSpec(16, (4,), 2)
    theta = init_params(spec, 0)
    (W1, b1), (W2, _) = spec.unpack(theta)
    assert np.all(np.abs(W1) <= 0.25) and np.all(np.abs(b1) <= 0.25)
    assert np.all(np.abs(W2) <= 0.5)
    np.testing.assert_array_equal(theta, init_params(spec, 0))
