"""PMU output map and the measurable signals built from it.

Everything here is vectorised: pass arrays of states/samples and get arrays
back.  Scalars come back as numpy scalars.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InconsistentStateError, ObservabilityLossError
from .model import DerivedCoefficients, PlantState

__all__ = [
    "PmuSample",
    "DerivedSignals",
    "Y1_TOLERANCE",
    "RADICAND_TOLERANCE",
    "measure",
    "electrical_power",
    "dq_currents",
    "derived_signals",
    "meas_matrix",
    "rotation",
    "n_map",
    "m_map",
    "noninjectivity_certificate",
]

Y1_TOLERANCE = 1e-9
RADICAND_TOLERANCE = 1e-12


class PmuSample(NamedTuple):
    y1: float  # theta_t, terminal voltage phase
    y2: float  # V_t, terminal voltage magnitude
    y3: float  # phi_t, terminal current phase
    y4: float  # I_t, terminal current magnitude
    y5: float  # P_t, active power
    y6: float  # Q_t, reactive power


class DerivedSignals(NamedTuple):
    z0: float
    Y1: float  # = x3^2 + x4^2
    Y2: float
    Y3: float


def _any(mask):
    return bool(np.any(mask))


def electrical_power(x, y1, y2, x_qp):
    x1, _, x3, x4 = x
    d = np.subtract(x1, y1)
    return (y2 / x_qp) * (x4 * np.sin(d) - x3 * np.cos(d))


def dq_currents(x, y1, y2, x_dp, x_qp):
    """Direct- and quadrature-axis stator currents ``(Id, Iq)``."""
    x1, _, x3, x4 = x
    d = np.subtract(x1, y1)
    Id = (x4 - y2 * np.cos(d)) / x_dp
    Iq = (-x3 + y2 * np.sin(d)) / x_qp
    return Id, Iq


def measure(x: PlantState, y1, y2, x_qp) -> PmuSample:
    """PMU sample produced by plant state ``x`` behind bus voltage ``(y1, y2)``.

    ``y4`` is the nonnegative root of its defining quadratic form; radicands
    down to ``-RADICAND_TOLERANCE`` are clamped to zero.  ``y3`` is the phase
    of the terminal current phasor ``(Id + j Iq) exp(j (x1 - pi/2))`` wrapped
    to ``(-pi, pi]``; nothing downstream consumes it.
    """
    if _any(np.asarray(y2) <= 0):
        raise InconsistentStateError("terminal voltage magnitude y2 must be positive")
    x1, _, x3, x4 = x
    d = np.subtract(x1, y1)
    s, c = np.sin(d), np.cos(d)
    k = y2 / x_qp
    y4sq = (x3 * x3 + x4 * x4 + y2 * y2 - 2.0 * y2 * (x4 * c + x3 * s)) / (x_qp * x_qp)
    if _any(y4sq < -RADICAND_TOLERANCE):
        raise InconsistentStateError(f"negative current-magnitude radicand {np.min(y4sq):.3e}")
    y4 = np.sqrt(np.maximum(y4sq, 0.0))
    y5 = k * (x4 * s - x3 * c)
    y6 = k * (x4 * c + x3 * s - y2)
    Id, Iq = dq_currents(x, y1, y2, x_qp, x_qp)
    y3 = np.angle(np.exp(1j * (np.add(x1, np.arctan2(Iq, Id)) - np.pi / 2)))
    return PmuSample(np.broadcast_to(y1, np.shape(y5)) * 1.0,
                     np.broadcast_to(y2, np.shape(y5)) * 1.0, y3, y4, y5, y6)


def rotation(angle):
    """``exp(J angle)`` with ``J = [[0, -1], [1, 0]]``; shape ``(..., 2, 2)``."""
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def derived_signals(s: PmuSample, x_qp, check=True) -> DerivedSignals:
    """Measurable ``(z0, Y1, Y2, Y3)``.

    ``Y1`` equals ``x3^2 + x4^2`` and ``(Y2, Y3)`` equals ``exp(J x1)(x3, x4)``
    for the state that produced the sample.
    """
    y1, y2, _, y4, y5, y6 = s
    if _any(np.asarray(y2) <= 0):
        raise InconsistentStateError("terminal voltage magnitude y2 must be positive")
    z0 = y6 + y2 * y2 / x_qp
    Y1 = x_qp * x_qp * y4 * y4 + 2.0 * x_qp * y6 + y2 * y2
    if check and _any(Y1 <= Y1_TOLERANCE):
        raise ObservabilityLossError(f"Y1={np.min(Y1):.3e} below {Y1_TOLERANCE:g}")
    p = -x_qp * y5 / y2
    q = x_qp * y6 / y2 + y2
    c, sn = np.cos(y1), np.sin(y1)
    return DerivedSignals(z0, Y1, c * p - sn * q, sn * p + c * q)


def meas_matrix(d: DerivedSignals, s: PmuSample, c: DerivedCoefficients, x_qp) -> np.ndarray:
    """Time-varying matrix A with ``d/dt (x3, x4) = A (x3, x4) + (0, c1 u2)``."""
    Y1 = np.asarray(d.Y1)
    if _any(Y1 <= Y1_TOLERANCE):
        raise ObservabilityLossError(f"Y1={np.min(Y1):.3e} below {Y1_TOLERANCE:g}")
    k = x_qp / Y1
    z0, y5 = d.z0, s.y5
    return np.stack([
        np.stack([-c.a2 + c.b2 * k * z0, c.b2 * k * y5], -1),
        np.stack([-c.b1 * k * y5, -c.a1 + c.b1 * k * z0], -1),
    ], -2)


def m_map(v, y2):
    """Map ``v = (x1 - y1, x3, x4) -> z`` of normalised PMU outputs."""
    v = np.asarray(v, dtype=float)
    v1, v2, v3 = v[..., 0], v[..., 1], v[..., 2]
    c, s = np.cos(v1), np.sin(v1)
    return np.stack([v2 * v2 + v3 * v3 - 2 * y2 * (v2 * c + v3 * s),
                     v2 * s - v3 * c, v2 * c + v3 * s], -1)


def n_map(v, y2):
    """``m_map`` with the measurable ``v2^2 + v3^2`` removed from row one."""
    v = np.asarray(v, dtype=float)
    v1, v2, v3 = v[..., 0], v[..., 1], v[..., 2]
    c, s = np.cos(v1), np.sin(v1)
    return np.stack([-2 * y2 * (v2 * c + v3 * s), v2 * s - v3 * c, v2 * c + v3 * s], -1)


def noninjectivity_certificate(v, y2):
    """Jacobian of ``n_map``, its null vector ``(1, -v3, v2)`` and the residual.

    The residual is ``max |J @ null|`` per sample; it vanishes identically,
    which is why ``(x1, x3, x4)`` cannot be recovered algebraically.
    """
    v = np.asarray(v, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    v1, v2, v3 = v[..., 0], v[..., 1], v[..., 2]
    c, s = np.cos(v1), np.sin(v1)
    y2 = np.broadcast_to(y2, v1.shape)
    jac = np.stack([
        np.stack([2 * y2 * (v2 * s - v3 * c), -2 * y2 * c, -2 * y2 * s], -1),
        np.stack([v2 * c + v3 * s, s, -c], -1),
        np.stack([-v2 * s + v3 * c, c, s], -1),
    ], -2)
    null = np.stack([np.ones_like(v1), -v3, v2], -1)
    residual = np.max(np.abs(np.einsum("...ij,...j->...i", jac, null)), axis=-1)
    return jac, null, residual
