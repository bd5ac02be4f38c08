"""Parameter-estimation-based observer for (E_d', E_q').

The LTV error ``eps = (x3, x4) - xi`` obeys ``d eps/dt = A(t) eps``, so
``(x3, x4) = xi + Phi theta`` with the constant ``theta = eps(0)``.  Squaring
and using the measured ``Y1 = x3^2 + x4^2`` gives the regression
``yE = psi . Theta`` in ``Theta = (t1, t2, t1 t2, t1^2, t2^2)``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ObservabilityLossError, ReconstructionDomainError
from .pmu import Y1_TOLERANCE, DerivedSignals

__all__ = [
    "ExtensionState",
    "RegressorSample",
    "ARCSIN_SLACK",
    "extension_rhs",
    "build_regressor",
    "theta_vector",
    "reconstruct_states",
]

ARCSIN_SLACK = 1e-9


class ExtensionState(NamedTuple):
    xi: np.ndarray   # (..., 2)
    phi: np.ndarray  # (..., 2, 2)

    @classmethod
    def initial(cls):
        return cls(np.zeros(2), np.eye(2))


class RegressorSample(NamedTuple):
    yE: float
    psi: np.ndarray  # (..., 5)


def extension_rhs(e: ExtensionState, A, u2, c1) -> ExtensionState:
    A = np.asarray(A, dtype=float)
    dxi = np.einsum("...ij,...j->...i", A, e.xi)
    dxi = dxi + np.stack([np.zeros_like(np.asarray(u2, dtype=float)), c1 * np.asarray(u2)], -1)
    return ExtensionState(dxi, A @ e.phi)


def build_regressor(e: ExtensionState, Y1) -> RegressorSample:
    xi = np.asarray(e.xi, dtype=float)
    P = np.asarray(e.phi, dtype=float)
    x1, x2 = xi[..., 0], xi[..., 1]
    p11, p12, p21, p22 = P[..., 0, 0], P[..., 0, 1], P[..., 1, 0], P[..., 1, 1]
    psi = np.stack([
        2 * (p11 * x1 + p21 * x2),
        2 * (p12 * x1 + p22 * x2),
        2 * (p11 * p12 + p21 * p22),
        p11 * p11 + p21 * p21,
        p12 * p12 + p22 * p22,
    ], -1)
    return RegressorSample(Y1 - (x1 * x1 + x2 * x2), psi)


def theta_vector(theta) -> np.ndarray:
    """Overparameterised ``Theta`` for the two-vector ``theta``."""
    theta = np.asarray(theta, dtype=float)
    t1, t2 = theta[..., 0], theta[..., 1]
    return np.stack([t1, t2, t1 * t2, t1 * t1, t2 * t2], -1)


def reconstruct_states(e: ExtensionState, theta_hat, d: DerivedSignals, mode="arcsin", strict=True):
    """Estimates ``(x1_hat, x3_hat, x4_hat)`` from the extension and ``theta_hat``.

    ``mode="arcsin"`` takes the principal branch of
    ``arcsin((x3 Y3 - x4 Y2) / Y1)`` (valid for ``|x1| < pi/2``).
    ``mode="atan2"`` also uses ``x3 Y2 + x4 Y3 = Y1 cos x1`` and is valid on
    the whole circle.  With ``strict=False`` an out-of-domain arcsin
    argument yields NaN instead of raising.
    """
    Y1 = np.asarray(d.Y1, dtype=float)
    if np.any(Y1 <= Y1_TOLERANCE):
        raise ObservabilityLossError(f"Y1={np.min(Y1):.3e} below {Y1_TOLERANCE:g}")
    x34 = np.asarray(e.xi) + np.einsum("...ij,...j->...i", np.asarray(e.phi), np.asarray(theta_hat, dtype=float))
    x3, x4 = x34[..., 0], x34[..., 1]
    sin_part = x3 * d.Y3 - x4 * d.Y2
    if mode == "atan2":
        x1 = np.arctan2(sin_part, x3 * d.Y2 + x4 * d.Y3)
    elif mode == "arcsin":
        arg = sin_part / Y1
        bad = np.abs(arg) > 1.0 + ARCSIN_SLACK
        if strict and np.any(bad):
            raise ReconstructionDomainError(f"arcsin argument {np.max(np.abs(arg)):.6g} outside [-1, 1]")
        x1 = np.where(bad, np.nan, np.arcsin(np.clip(arg, -1.0, 1.0)))
    else:
        raise ValueError(f"unknown reconstruction mode {mode!r}")
    return x1, x3, x4
