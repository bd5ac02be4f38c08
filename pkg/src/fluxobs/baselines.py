"""Comparison schemes: overparameterised gradient estimator and the
gradient-descent state observer."""
from __future__ import annotations

import numpy as np

from .gpebo import RegressorSample

__all__ = [
    "overparam_update",
    "overparam_step_exact",
    "consistency_error",
    "consistency_error_squared",
    "grad_cost",
    "grad_observer_rhs",
    "as_gain_matrix",
]


def as_gain_matrix(gain, n):
    """Scalar -> ``gain * I_n``; vector -> diagonal; matrix checked SPD."""
    g = np.asarray(gain, dtype=float)
    if g.ndim == 0:
        G = g * np.eye(n)
    elif g.ndim == 1:
        G = np.diag(g)
    else:
        G = g
    if G.shape != (n, n):
        raise ValueError(f"gain must be scalar, length-{n} or {n}x{n}, got shape {g.shape}")
    if not np.allclose(G, G.T, rtol=1e-12, atol=0):
        raise ValueError("gain matrix must be symmetric")
    if np.any(np.linalg.eigvalsh(G) <= 0):
        raise ValueError("gain matrix must be positive definite")
    return G


def overparam_update(Theta_hat, Gamma, r: RegressorSample):
    """``dTheta/dt = -Gamma psi (psi . Theta - yE)``."""
    psi = np.asarray(r.psi, dtype=float)
    err = np.einsum("...i,...i->...", psi, Theta_hat) - r.yE
    return -np.einsum("ij,...j->...i", np.asarray(Gamma, dtype=float), psi) * np.asarray(err)[..., None]


def overparam_step_exact(Theta_hat, Gamma, psi, yE, h):
    """Advance the gradient estimator by ``h`` with ``psi, yE`` frozen.

    ``Gamma psi psi^T`` has rank one, so the flow is available in closed form:
    the residual ``psi . Theta - yE`` decays at rate ``psi^T Gamma psi`` while
    Theta moves along ``Gamma psi``.  Stable for any gain, which matters for
    ``Gamma = 1e8 I``.
    """
    Gpsi = np.asarray(Gamma, dtype=float) @ np.asarray(psi, dtype=float)
    lam = float(np.dot(psi, Gpsi))
    r = float(np.dot(psi, Theta_hat)) - yE
    z = lam * h
    phi1 = -np.expm1(-z) / z if z > 0 else 1.0
    return np.asarray(Theta_hat, dtype=float) - Gpsi * r * h * phi1


def consistency_error(Theta):
    """``e = (T1 T2 - T3, T1 - T4^2, T2 - T5^2)``, the form used for the figures.

    Rows 2 and 3 do not vanish at the true parameter; see
    :func:`consistency_error_squared` for the variant that does.
    """
    T = np.asarray(Theta, dtype=float)
    return np.stack([T[..., 0] * T[..., 1] - T[..., 2],
                     T[..., 0] - T[..., 3] ** 2,
                     T[..., 1] - T[..., 4] ** 2], -1)


def consistency_error_squared(Theta):
    """``(T1 T2 - T3, T1^2 - T4, T2^2 - T5)``: zero on ``Theta(theta)`` for every theta."""
    T = np.asarray(Theta, dtype=float)
    return np.stack([T[..., 0] * T[..., 1] - T[..., 2],
                     T[..., 0] ** 2 - T[..., 3],
                     T[..., 1] ** 2 - T[..., 4]], -1)


def grad_cost(Y1, x3, x4):
    r = Y1 - (x3 * x3 + x4 * x4)
    return 0.25 * r * r


def grad_observer_rhs(x34_hat, Gamma2, Y1, A, u2, c1):
    """Gradient descent on ``(Y1 - |x|^2)^2 / 4`` plus a copy of the linear dynamics."""
    x = np.asarray(x34_hat, dtype=float)
    r = Y1 - np.sum(x * x, axis=-1)
    grad_term = np.einsum("ij,...j->...i", np.asarray(Gamma2, dtype=float), x) * np.asarray(r)[..., None]
    copy = np.einsum("...ij,...j->...i", np.asarray(A, dtype=float), x)
    copy = copy + np.stack([np.zeros_like(np.asarray(u2, dtype=float)), c1 * np.asarray(u2, dtype=float)], -1)
    return grad_term + copy
