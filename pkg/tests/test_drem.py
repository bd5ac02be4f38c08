import itertools

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fluxobs import drem
from fluxobs.sim import rk4_step


def laplace(M):
    """Plain recursive first-row expansion (test oracle)."""
    n = len(M)
    if n == 1:
        return M[0][0]
    return sum((-1) ** j * M[0][j] * laplace([row[:j] + row[j + 1:] for row in M[1:]])
               for j in range(n))


def test_filter_bank_validation():
    with pytest.raises(ValueError):
        drem.FilterBank((1, 2, 3))
    with pytest.raises(ValueError):
        drem.FilterBank((1, 2, 2, 3))
    with pytest.raises(ValueError):
        drem.FilterBank((1, 2, -3, 4))
    assert drem.FilterBank().d == (2.0, 4.0, 6.0, 8.0)
    assert drem.FilterBank().initial_state().shape == (4, 6)


def test_filter_rest_and_dc_gain():
    z = np.zeros((4, 6))
    assert np.array_equal(drem.filter_rhs(z, 0.0, np.zeros(5)), z)
    c = np.full((4, 6), 1.5)
    assert np.array_equal(drem.filter_rhs(c, 1.5, np.full(5, 1.5)), np.zeros((4, 6)))


def test_filter_step_response():
    d = drem.DEFAULT_FILTER_CONSTANTS
    h, n = 1e-3, 3000
    x = np.zeros(24)
    for k in range(n):
        x = rk4_step(lambda t, y: drem.filter_rhs(y.reshape(4, 6), 0.7, np.full(5, 0.7), d).ravel(),
                     x, k * h, h)
    expect = 0.7 * (1 - np.exp(-np.array(d) * n * h))
    assert np.allclose(x.reshape(4, 6), expect[:, None], atol=1e-9)


def test_identity_mix():
    YE = np.arange(1.0, 6.0)
    m = drem.mix(drem.ExtendedRegression(YE, np.eye(5)))
    assert m.Delta == 1.0 and np.array_equal(m.calY, YE)


def test_det_against_oracles(rng):
    M = rng.standard_normal((50, 5, 5))
    for A in M:
        ref = laplace(A.tolist())
        assert drem.det(A) == pytest.approx(ref, rel=1e-12, abs=1e-12)
        assert drem.det_cofactor(A) == pytest.approx(ref, rel=1e-12, abs=1e-12)
    assert np.allclose(drem.det(M), np.linalg.det(M))


def test_det_rejects_nonsquare():
    with pytest.raises(ValueError):
        drem.det(np.zeros((3, 4)))


def test_adjugate_identity_random(rng):
    M = rng.standard_normal((1000, 5, 5))
    adj = drem.adjugate(M)
    d = drem.det(M)
    scale = np.abs(adj).max((1, 2)) * np.abs(M).max((1, 2))
    err = np.abs(adj @ M - d[:, None, None] * np.eye(5)).max((1, 2))
    assert np.all(err <= 1e-9 * scale)
    assert np.allclose(adj, drem.adjugate_cofactor(M), rtol=1e-9, atol=1e-9 * scale.max())


def test_adjugate_singular_matrix():
    M = np.zeros((5, 5))
    M[0] = [1, 2, 3, 4, 5]
    M[1:, 1:] = np.diag([1.0, 2.0, 3.0, 4.0])
    M[1:, 0] = 0
    M[:, 0] = 0  # column of zeros: rank 4, adj has rank one
    adj = drem.adjugate(M)
    assert drem.det(M) == 0
    assert np.allclose(adj @ M, 0) and np.allclose(M @ adj, 0)
    assert np.linalg.matrix_rank(adj) == 1
    assert np.array_equal(drem.adjugate(np.zeros((5, 5))), np.zeros((5, 5)))


def test_cramer_agrees_with_adjugate(rng):
    P = rng.standard_normal((1000, 5, 5))
    Y = rng.standard_normal((1000, 5))
    a = drem.mix(drem.ExtendedRegression(Y, P))
    c = drem.mix_cramer(drem.ExtendedRegression(Y, P))
    scale = np.abs(drem.adjugate(P)).max((1, 2)) * np.abs(Y).max(1)
    assert np.all(np.abs(a.calY - c.calY).max(1) <= 1e-10 * scale)
    assert np.array_equal(a.Delta, c.Delta)


def test_cramer_uses_column_replacement():
    P = np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
    P[0, 1] = 7.0
    Y = np.ones(5)
    c = drem.mix_cramer(drem.ExtendedRegression(Y, P))
    assert np.allclose(c.calY / c.Delta, np.linalg.solve(P, Y))


def test_mixing_is_exact_on_ill_conditioned_trajectory(short_traj):
    """calY / Delta recovers Theta to ~1e-9 where Delta is ~1e-7 and |Psi| ~ 400."""
    tr = short_traj
    k = int(round(1.75 / tr.h))
    Psi, YE = tr.extended.Psi[k], tr.extended.YE[k]
    mp.mp.dps = 40
    P = mp.matrix(Psi.tolist())
    D = mp.det(P)
    y = mp.lu_solve(P, mp.matrix(YE.tolist()))
    m = drem.mix(drem.ExtendedRegression(YE, Psi))
    assert float(abs(m.Delta - D) / abs(D)) < 1e-8
    assert np.allclose(m.calY / m.Delta, [float(v) for v in y], rtol=1e-8, atol=0)


def test_mixing_identity_along_trajectory(short_traj):
    m = short_traj.mixed
    Th = short_traj.Theta_true
    res = np.abs(m.calY - m.Delta[:, None] * Th).max(1)
    assert np.all(res <= 1e-6 * (1 + np.abs(m.calY).max(1)))


def test_scalar_update_examples():
    m = drem.MixedRegression(np.float64(0.0), np.ones(5))
    assert np.array_equal(drem.scalar_update(np.array([1.0, 2.0]), 5.0, m), [0.0, 0.0])
    Th = np.array([0.4, 0.3, 0.12, 0.16, 0.09])
    m = drem.MixedRegression(np.float64(0.3), 0.3 * Th)
    assert np.allclose(drem.scalar_update(Th, 7.0, m), 0.0)
    assert np.allclose(drem.scalar_update(Th[:2], (1.0, 2.0), m), 0.0)
    m = drem.MixedRegression(np.float64(2.0), np.zeros(5))
    assert np.allclose(drem.scalar_update(np.array([1.0, 1.0]), np.array([1.0, 3.0]), m), [-4.0, -12.0])


def test_exact_step_matches_closed_form():
    th0 = np.array([1.0, -2.0])
    deltas = [0.5, 0.6, 0.6, 0.7]
    Th = np.array([0.3, 0.1])
    calys = [d * Th for d in deltas]
    h, g = 0.1, 3.0
    a = sum(w * d * d for w, d in zip(drem.RK4_WEIGHTS, deltas))
    new = drem.scalar_step_exact(th0, g, deltas, calys, h)
    assert np.allclose(new - Th, np.exp(-g * a * h) * (th0 - Th), rtol=1e-14)


def test_exact_step_no_excitation():
    th0 = np.array([1.0, -2.0])
    assert np.array_equal(drem.scalar_step_exact(th0, 1e18, [0.0] * 4, [np.zeros(5)] * 4, 1e-3), th0)


def test_exact_step_small_gain_matches_rk4():
    th = np.array([1.0, 0.5])
    Th = np.array([0.2, -0.1])
    g, h, d = 0.7, 1e-2, 1.3
    m = drem.MixedRegression(np.float64(d), d * np.array([*Th, 0, 0, 0]))
    rk = rk4_step(lambda t, y: drem.scalar_update(y, g, m), th, 0.0, h)
    ex = drem.scalar_step_exact(th, g, [d] * 4, [m.calY] * 4, h)
    assert np.allclose(rk, ex, rtol=1e-10)


def test_excitation_integral_examples():
    assert drem.excitation_integral(np.zeros(11), 0.1) == 0.0
    assert drem.excitation_integral(np.ones(1001), 1e-2) == pytest.approx(10.0, abs=1e-12)
    t = np.linspace(0, 10, 10001)
    assert drem.excitation_integral(np.exp(-t), t=t) == pytest.approx((1 - np.exp(-20)) / 2, abs=1e-6)
    cum = drem.excitation_integral(np.ones(5), 0.5, cumulative=True)
    assert np.allclose(cum, [0, 0.5, 1.0, 1.5, 2.0])
    with pytest.raises(TypeError):
        drem.excitation_integral(np.ones(3))


def test_predicted_error_shapes():
    p = drem.predicted_error(np.array([1.0, -1.0]), np.array([1.0, 2.0]), np.array([0.0, 1.0]))
    assert np.allclose(p, [[1, -1], [np.exp(-1), -np.exp(-2)]])


def test_decay_law_on_trajectory(smib_traj):
    tr = smib_traj
    mask = tr.t >= 5 / min(tr.scenario.filters.d)
    th0 = -tr.theta_true
    pred = drem.predicted_error(th0, tr.drem_gains[0][:2], tr.int_delta_sq_trapz)
    act = tr.drem_est[0][:, :2] - tr.theta_true
    assert np.max(np.abs(act[mask] - pred[mask]) / np.abs(pred[mask])) <= 1e-4


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 5), elements=st.floats(-5, 5)))
def test_adjugate_property(M):
    adj = drem.adjugate(M)
    d = drem.det(M)
    scale = max(np.abs(adj).max() * np.abs(M).max(), 1e-300)
    assert np.abs(adj @ M - d * np.eye(5)).max() <= 1e-9 * scale + 1e-12


def test_all_minor_masks_consistent(rng):
    # every 2x2 minor in the table of the last two rows equals the direct formula
    M = rng.standard_normal((2, 5))
    D = drem._minor_table(M)
    for i, j in itertools.combinations(range(5), 2):
        mask = (1 << i) | (1 << j)
        assert D[mask] == pytest.approx(M[0, i] * M[1, j] - M[0, j] * M[1, i])
