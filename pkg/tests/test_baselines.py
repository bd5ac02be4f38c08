import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from fluxobs import baselines, gpebo
from fluxobs.gpebo import RegressorSample


def test_consistency_error_examples():
    assert np.array_equal(baselines.consistency_error(np.array([1.0, 1.0, 0.0, 0.0, 0.0])), [1, 1, 1])
    assert np.array_equal(baselines.consistency_error(np.zeros(5)), [0, 0, 0])
    T = np.array([[2.0, 3.0, 6.0, 4.0, 9.0]])
    assert np.array_equal(baselines.consistency_error_squared(T), [[0, 0, 0]])


def test_verbatim_error_nonzero_at_true_parameter():
    e = baselines.consistency_error(gpebo.theta_vector(np.array([0.4, 0.3])))
    assert e[0] == pytest.approx(0.0, abs=1e-16)
    assert e[1] == pytest.approx(0.4 - 0.16 ** 2) and e[2] == pytest.approx(0.3 - 0.09 ** 2)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_squared_error_vanishes_on_manifold(a, b):
    e = baselines.consistency_error_squared(gpebo.theta_vector(np.array([a, b])))
    assert np.allclose(e, 0, atol=1e-9 * (1 + a * a + b * b) ** 2)


def test_gain_matrix_validation():
    assert np.array_equal(baselines.as_gain_matrix(3.0, 2), 3 * np.eye(2))
    assert np.array_equal(baselines.as_gain_matrix([1, 2], 2), np.diag([1.0, 2.0]))
    for bad in ([[1, 2], [0, 1]], [[1, 0], [0, -1]], -1.0, [1, 2, 3], 0.0):
        with pytest.raises(ValueError):
            baselines.as_gain_matrix(bad, 2)


def test_overparam_update_examples():
    r = RegressorSample(psi=np.array([0, 0, 0, 1.0, 1.0]), yE=0.25)
    d = baselines.overparam_update(np.zeros(5), 2.0 * np.eye(5), r)
    assert np.allclose(d, [0, 0, 0, 0.5, 0.5])
    Th = np.array([0.1, 0.2, 0.02, 0.01, 0.04])
    r = RegressorSample(psi=np.arange(5.0), yE=float(np.arange(5.0) @ Th))
    assert np.allclose(baselines.overparam_update(Th, np.eye(5), r), 0)


def test_overparam_exact_step_matches_expm(rng):
    psi = rng.standard_normal(5)
    yE = 0.7
    G = np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
    Th = rng.standard_normal(5)
    h = 0.3
    # augmented affine flow d/dt [Th; 1] = [[-G psi psi^T, G psi yE], [0, 0]] [Th; 1]
    M = np.zeros((6, 6))
    M[:5, :5] = -np.outer(G @ psi, psi)
    M[:5, 5] = G @ psi * yE
    ref = (expm(M * h) @ np.append(Th, 1.0))[:5]
    assert np.allclose(baselines.overparam_step_exact(Th, G, psi, yE, h), ref, rtol=1e-12, atol=1e-12)


def test_overparam_exact_step_zero_regressor():
    Th = np.arange(5.0)
    assert np.array_equal(baselines.overparam_step_exact(Th, np.eye(5), np.zeros(5), 0.0, 0.1), Th)


def test_overparam_exact_step_huge_gain_projects():
    psi = np.array([1.0, 2.0, 0.0, 0.0, 1.0])
    new = baselines.overparam_step_exact(np.zeros(5), 1e8 * np.eye(5), psi, 3.0, 1e-3)
    assert psi @ new == pytest.approx(3.0, rel=1e-12)
    assert np.allclose(new, psi * 3.0 / (psi @ psi))


def test_grad_cost_and_fd_gradient(rng):
    for _ in range(20):
        x = rng.standard_normal(2)
        Y1 = abs(rng.standard_normal()) + 0.1
        g = np.zeros(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = 1e-6
            g[i] = (baselines.grad_cost(Y1, *(x + e)) - baselines.grad_cost(Y1, *(x - e))) / 2e-6
        # with A = 0 and u2 = 0 the observer field is exactly -grad of the cost
        f = baselines.grad_observer_rhs(x, np.eye(2), Y1, np.zeros((2, 2)), 0.0, 0.1116)
        assert np.allclose(f, -g, atol=1e-6)
    assert baselines.grad_cost(1.0, 0.6, 0.8) == 0.0


def test_grad_observer_copy_term():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    f = baselines.grad_observer_rhs(np.array([0.6, 0.8]), np.eye(2), 1.0, A, 0.5, 0.2)
    assert np.allclose(f, A @ [0.6, 0.8] + [0.0, 0.1])
