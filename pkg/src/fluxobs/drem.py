"""Dynamic regressor extension and mixing.

The scalar regression ``yE = psi . Theta`` is passed through the filter
bank ``H(s) = col(1, d2/(s+d2), ..., d5/(s+d5))``, giving ``YE = Psi Theta``
with a square ``Psi``.  Multiplying by ``adj(Psi)`` decouples it into five
scalar regressions ``calY_i = Delta Theta_i`` with ``Delta = det(Psi)``.

Along a trajectory ``Psi`` is badly conditioned: its entries are O(100)
while ``Delta`` is O(1e-7).  Unpivoted cofactor expansion then loses about
four significant digits of ``calY / Delta``, so determinants, adjugates
and Cramer determinants go through LU with partial pivoting (LAPACK).
The memoised cofactor expansion is kept for exactly singular matrices,
where ``adj(Psi)`` is still defined but ``inv(Psi)`` is not.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "DEFAULT_FILTER_CONSTANTS",
    "RK4_WEIGHTS",
    "FilterBank",
    "ExtendedRegression",
    "MixedRegression",
    "det",
    "det_cofactor",
    "adjugate",
    "adjugate_cofactor",
    "filter_rhs",
    "extended_regression",
    "mix",
    "mix_cramer",
    "scalar_update",
    "scalar_step_exact",
    "excitation_integral",
    "predicted_error",
]

DEFAULT_FILTER_CONSTANTS = (2.0, 4.0, 6.0, 8.0)
RK4_WEIGHTS = (1 / 6, 1 / 3, 1 / 3, 1 / 6)


@dataclass(frozen=True)
class FilterBank:
    """Constants ``d2..d5`` of the first-order lags following the identity row."""

    d: tuple = DEFAULT_FILTER_CONSTANTS

    def __post_init__(self):
        d = tuple(float(v) for v in self.d)
        if len(d) != 4:
            raise ValueError(f"need exactly four filter constants, got {len(d)}")
        if any(not np.isfinite(v) or v <= 0 for v in d):
            raise ValueError(f"filter constants must be positive: {d}")
        if len(set(d)) != len(d):
            raise ValueError(f"filter constants must be pairwise distinct: {d}")
        object.__setattr__(self, "d", d)

    @property
    def n_states(self):
        # four filters, channels (yE, psi_1..psi_5)
        return 4 * 6

    def initial_state(self):
        return np.zeros((4, 6))


class ExtendedRegression(NamedTuple):
    YE: np.ndarray   # (..., 5)
    Psi: np.ndarray  # (..., 5, 5)


class MixedRegression(NamedTuple):
    Delta: np.ndarray  # (...)
    calY: np.ndarray   # (..., 5)


def _minor_table(M):
    """Determinants of the trailing-row blocks of ``M`` over every column subset.

    For ``M`` of shape ``(..., m, n)`` returns ``D`` with ``D[mask]`` the
    determinant of rows ``m - popcount(mask) .. m - 1`` restricted to the
    columns in ``mask``, for every mask with ``popcount(mask) <= m``.
    """
    m, n = M.shape[-2], M.shape[-1]
    D = {0: np.ones(M.shape[:-2])}
    masks = sorted((mk for mk in range(1, 1 << n) if bin(mk).count("1") <= m),
                   key=lambda mk: bin(mk).count("1"))
    for mask in masks:
        k = m - bin(mask).count("1")
        acc = 0.0
        sign = 1.0
        for j in range(n):
            if mask >> j & 1:
                acc = acc + sign * M[..., k, j] * D[mask ^ (1 << j)]
                sign = -sign
        D[mask] = acc
    return D


def _square(M):
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-2] != M.shape[-1]:
        raise ValueError(f"square matrix required, got shape {M.shape}")
    return M


def det_cofactor(M):
    """Determinant by memoised cofactor expansion; ``M`` has shape ``(..., n, n)``."""
    M = _square(M)
    n = M.shape[-1]
    return np.asarray(_minor_table(M)[(1 << n) - 1])


def adjugate_cofactor(M):
    """Transpose of the cofactor matrix, computed from the minors directly."""
    M = _square(M)
    n = M.shape[-1]
    full = (1 << n) - 1
    adj = np.empty(M.shape)
    for i in range(n):
        table = _minor_table(np.delete(M, i, axis=-2))
        for j in range(n):
            adj[..., j, i] = (-1.0) ** (i + j) * table[full ^ (1 << j)]
    return adj


def det(M):
    """Determinant via LU with partial pivoting, batched over leading axes."""
    return np.asarray(np.linalg.det(_square(M)))


def adjugate(M):
    """``adj(M)``, so that ``adj(M) @ M == det(M) I``.

    ``det(M) inv(M)`` where M is invertible, cofactors where it is exactly
    singular.
    """
    M = _square(M)
    d = np.linalg.det(M)
    adj = np.empty(M.shape)
    ok = d != 0
    if np.any(ok):
        adj[ok] = np.asarray(d)[ok][..., None, None] * np.linalg.inv(M[ok])
    if not np.all(ok):
        adj[~ok] = adjugate_cofactor(M[~ok])
    return adj


def filter_rhs(states, yE, psi, d=DEFAULT_FILTER_CONSTANTS):
    """Derivative of the filter states, shape ``(..., 4, 6)``.

    Each lag is ``dx/dt = -d_i x + d_i u`` (unity DC gain); channel 0 filters
    ``yE`` and channels 1..5 filter ``psi``.
    """
    states = np.asarray(states, dtype=float)
    d = np.asarray(d, dtype=float)[:, None]
    u = np.concatenate([np.asarray(yE, dtype=float)[..., None], np.asarray(psi, dtype=float)], -1)
    return d * (u[..., None, :] - states)


def extended_regression(yE, psi, states) -> ExtendedRegression:
    """Stack the unfiltered regression on top of the four filtered copies."""
    states = np.asarray(states, dtype=float)
    YE = np.concatenate([np.asarray(yE, dtype=float)[..., None], states[..., :, 0]], -1)
    Psi = np.concatenate([np.asarray(psi, dtype=float)[..., None, :], states[..., :, 1:]], -2)
    return ExtendedRegression(YE, Psi)


def mix(r: ExtendedRegression) -> MixedRegression:
    """``Delta = det(Psi)``, ``calY = adj(Psi) YE``.

    Computed as ``Delta * solve(Psi, YE)``, which is the same vector without
    forming the adjugate.
    """
    Psi = _square(r.Psi)
    YE = np.asarray(r.YE, dtype=float)
    Delta = np.linalg.det(Psi)
    calY = np.empty(YE.shape)
    ok = Delta != 0
    if np.any(ok):
        x = np.linalg.solve(Psi[ok], YE[ok][..., None])[..., 0]
        calY[ok] = np.asarray(Delta)[ok][..., None] * x
    if not np.all(ok):
        calY[~ok] = np.einsum("...ij,...j->...i", adjugate_cofactor(Psi[~ok]), YE[~ok])
    return MixedRegression(np.asarray(Delta), calY)


def mix_cramer(r: ExtendedRegression) -> MixedRegression:
    """Same as :func:`mix` without forming the adjugate.

    ``calY_i`` is the determinant of ``Psi`` with its i-th column replaced
    by ``YE`` (equivalently the i-th row of ``Psi.T`` replaced by ``YE.T``).
    """
    Psi = np.asarray(r.Psi, dtype=float)
    n = Psi.shape[-1]
    calY = np.empty(Psi.shape[:-1])
    for i in range(n):
        Pi = Psi.copy()
        Pi[..., :, i] = r.YE
        calY[..., i] = det(Pi)
    return MixedRegression(det(Psi), calY)


def scalar_update(theta_hat, gamma, m: MixedRegression):
    """``d theta_k/dt = -gamma_k Delta (Delta theta_k - calY_k)``.

    ``theta_hat`` may hold the two physical components or all five; gains
    broadcast against it.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    k = theta_hat.shape[-1]
    Delta = np.asarray(m.Delta, dtype=float)[..., None]
    return -np.asarray(gamma, dtype=float) * Delta * (Delta * theta_hat - np.asarray(m.calY)[..., :k])


def scalar_step_exact(theta_hat, gamma, Delta_stages, calY_stages, h, weights=RK4_WEIGHTS):
    """Advance the scalar estimators by ``h`` without a stability limit.

    The stage values of ``Delta`` and ``calY`` are averaged with the RK4
    weights and frozen over the step, where the linear scalar ODE has a
    closed-form solution.  If ``calY = Delta Theta`` at every stage the error
    contracts by exactly ``exp(-gamma h sum_s w_s Delta_s^2)``.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    k = theta_hat.shape[-1]
    gamma = np.asarray(gamma, dtype=float)
    a = sum(w * d * d for w, d in zip(weights, Delta_stages))
    b = sum(w * d * np.asarray(y)[..., :k] for w, d, y in zip(weights, Delta_stages, calY_stages))
    a = gamma * a
    b = gamma * b
    z = a * h
    with np.errstate(divide="ignore", invalid="ignore"):
        phi1 = np.where(z > 0, -np.expm1(-z) / np.where(z > 0, z, 1.0), 1.0)
    return theta_hat - (a * theta_hat - b) * h * phi1


def excitation_integral(delta, h=None, t=None, cumulative=False):
    """Trapezoidal integral of ``Delta^2`` on a uniform grid of spacing ``h``.

    With ``cumulative=True`` returns the running integral (same length as
    ``delta``, starting at 0).
    """
    d2 = np.asarray(delta, dtype=float) ** 2
    if t is not None:
        h = np.diff(np.asarray(t, dtype=float))
    if h is None:
        raise TypeError("excitation_integral needs the grid spacing h or the times t")
    if d2.size < 2:
        return np.zeros_like(d2) if cumulative else 0.0
    pieces = 0.5 * (d2[1:] + d2[:-1]) * h
    if cumulative:
        return np.concatenate([[0.0], np.cumsum(pieces)])
    return float(np.sum(pieces))


def predicted_error(theta_tilde0, gamma, int_delta_sq):
    """Closed-form parameter error ``exp(-gamma int Delta^2) theta_tilde(0)``."""
    I = np.asarray(int_delta_sq, dtype=float)[..., None]
    return np.exp(-np.asarray(gamma, dtype=float) * I) * np.asarray(theta_tilde0, dtype=float)
