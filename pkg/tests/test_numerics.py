import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgda import numerics
from mgda.numerics import Adam, Mlp, adam_for, project_weights, spectral_norm
from oracles import central_difference, jacobi_singular_values, rel_error


def test_zero_network_outputs_zero():
    m = Mlp([3, 4, 2], zero=True)
    np.testing.assert_array_equal(m.forward(np.ones(3)), np.zeros(2))


def test_single_identity_layer():
    m = Mlp([3, 3], zero=True)
    m.weights[0] = np.eye(3)
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(m.forward(x), x)


def test_hand_set_two_two_one_network():
    m = Mlp([2, 2, 1], "relu", zero=True)
    m.weights[0] = np.array([[1.0, -1.0], [2.0, 1.0]])
    m.biases[0] = np.array([0.5, 0.0])
    m.weights[1] = np.array([[3.0], [-2.0]])
    m.biases[1] = np.array([0.25])
    # hidden = relu([1 + 2*2 + 0.5, -1 + 2]) = [5.5, 1]; out = 16.5 - 2 + 0.25
    assert m.forward(np.array([1.0, 2.0]))[0] == pytest.approx(14.75)


def test_input_dimension_checked():
    with pytest.raises(ValueError, match="dimension"):
        Mlp([3, 2]).forward(np.ones(4))


def test_linear_layer_gradient_closed_form():
    m = Mlp([3, 2], rng=0)
    x = np.array([1.0, -2.0, 0.5])
    up = np.array([0.3, -0.7])
    m.forward(x)
    tape = m.backward(up)
    np.testing.assert_allclose(tape.dW[0], np.outer(x, up))
    np.testing.assert_allclose(tape.db[0], up)


def test_zero_upstream_gives_zero_tape():
    m = Mlp([4, 8, 2], rng=1)
    m.forward(np.ones(4))
    assert not m.backward(np.zeros(2)).flat().any()


def test_backward_shape_mismatch():
    m = Mlp([4, 2], rng=1)
    m.forward(np.ones(4))
    with pytest.raises(ValueError):
        m.backward(np.zeros(3))


def _mlp_fd_error(m, x, up):
    m.forward(x)
    tape = m.backward(up)
    worst = 0.0
    for k, p in enumerate(m.params()):
        def f(v, k=k):
            saved = m.params()[k].copy()
            m.params()[k][...] = v
            out = float(np.sum(m.forward(x) * up))
            m.params()[k][...] = saved
            return out
        worst = max(worst, rel_error(tape.arrays()[k], central_difference(f, p.copy())))
    return worst


def test_backward_matches_finite_differences_relu():
    rng = np.random.default_rng(0)
    m = Mlp([4, 8, 8, 2], "relu", rng=rng)
    x = rng.standard_normal((5, 4))
    assert _mlp_fd_error(m, x, rng.standard_normal((5, 2))) < 1e-4


@given(st.integers(0, 2**31))
def test_backward_matches_finite_differences_tanh(seed):
    rng = np.random.default_rng(seed)
    m = Mlp([4, 8, 8, 2], "tanh", rng=rng)
    x = rng.standard_normal((3, 4))
    assert _mlp_fd_error(m, x, rng.standard_normal((3, 2))) < 1e-4


def test_adam_zero_gradient_is_a_no_op():
    w = np.array([1.0, -2.0])
    opt = Adam([w], lr=0.1)
    opt.step([np.zeros(2)])
    np.testing.assert_array_equal(w, [1.0, -2.0])


def test_adam_descends():
    w = np.array([1.0])
    Adam([w], lr=0.1).step([np.array([1.0])])
    assert w[0] < 1.0


def test_adam_non_finite_names_layer():
    m = Mlp([2, 3, 1], rng=0)
    opt = adam_for(m)
    grads = [np.zeros_like(p) for p in m.params()]
    grads[2][0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="layer 1 weight"):
        opt.step(grads)


def test_adam_least_squares_converges():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((64, 3))
    y = X @ np.array([[1.0], [-2.0], [0.5]]) + 0.3
    m = Mlp([3, 1], rng=1)
    opt = adam_for(m, lr=0.05)
    for _ in range(200):
        diff = m.forward(X) - y
        opt.step(m.backward(2 * diff / len(X)).arrays())
    assert np.mean((m.forward(X) - y) ** 2) < 1e-3


def test_spectral_norm_examples():
    assert spectral_norm(np.eye(5))[0] == pytest.approx(1.0)
    assert spectral_norm(np.diag([2.0, 1.0]))[0] == pytest.approx(2.0)
    assert spectral_norm(np.zeros((3, 4)))[0] == 0.0
    with pytest.raises(ValueError):
        spectral_norm(np.eye(2), iters=0)


@given(st.integers(0, 2**31), st.integers(2, 10), st.integers(2, 10))
def test_spectral_norm_matches_jacobi_svd(seed, r, c):
    W = np.random.default_rng(seed).standard_normal((r, c))
    exact = jacobi_singular_values(W)[0]
    assert abs(spectral_norm(W, iters=200, seed=seed)[0] - exact) / exact < 1e-3


def test_spectral_norm_random_8x8():
    W = np.random.default_rng(8).standard_normal((8, 8))
    exact = jacobi_singular_values(W)[0]
    assert abs(spectral_norm(W, iters=50)[0] - exact) / exact < 1e-3


def test_projection_examples():
    m = Mlp([2, 2], zero=True)
    m.weights[0] = np.diag([0.5, 0.25])
    project_weights(m, 1.0)
    np.testing.assert_array_equal(m.weights[0], np.diag([0.5, 0.25]))
    m.weights[0] = np.diag([2.0, 1.0])
    m.biases[0] = np.array([7.0, 7.0])
    project_weights(m, 1.0)
    np.testing.assert_allclose(m.weights[0], np.diag([1.0, 0.5]))
    np.testing.assert_array_equal(m.biases[0], [7.0, 7.0])
    with pytest.raises(ValueError):
        project_weights(m, 0.0)


@given(st.integers(0, 2**31), st.floats(0.2, 3.0))
def test_projection_bound_and_idempotence(seed, lam):
    m = Mlp([5, 7, 6, 3], rng=seed)
    for W in m.weights:
        W *= 3.0
    project_weights(m, lam)
    once = [W.copy() for W in m.weights]
    for W in once:
        assert jacobi_singular_values(W)[0] <= lam * (1 + 1e-3)
    project_weights(m, lam)
    for a, b in zip(once, m.weights):
        np.testing.assert_allclose(a, b, rtol=2e-3)


@given(st.integers(0, 2**31))
def test_lipschitz_certificate_bounds_slopes(seed):
    rng = np.random.default_rng(seed)
    m = project_weights(Mlp([3, 16, 16, 2], "relu", rng=rng), 1.0)
    bound = m.lipschitz_bound()
    assert bound <= 1.0 + 3e-3
    x = rng.standard_normal((200, 3))
    y = x + 0.1 * rng.standard_normal((200, 3))
    slopes = np.linalg.norm(m.forward(x) - m.forward(y), axis=1) / np.linalg.norm(x - y, axis=1)
    assert slopes.max() <= bound + 1e-12


def test_checkpoint_round_trip(tmp_path):
    m = Mlp([3, 4, 2], "tanh", rng=0)
    numerics.save_mlp(m, tmp_path / "m.json", lam=1.0)
    m2, header = numerics.load_mlp(tmp_path / "m.json")
    assert header == {"lam": 1.0}
    x = np.random.default_rng(1).standard_normal((4, 3))
    np.testing.assert_array_equal(m.forward(x), m2.forward(x))
