"""Fourth-order flux-decay synchronous generator.

State ``x = (delta, omega, E_d', E_q')``, inputs ``u = (P_m, E_f)`` and the
exogenous terminal-bus signals ``(theta_t, V_t)``.  All functions accept
scalars or numpy arrays (broadcast elementwise).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import InvalidParametersError

__all__ = [
    "MachineParams",
    "DerivedCoefficients",
    "PlantState",
    "Inputs",
    "SMIB_COEFFICIENTS",
    "derive_coefficients",
    "plant_rhs",
]


@dataclass(frozen=True)
class MachineParams:
    """Physical generator constants (per unit, seconds, rad/s)."""

    D: float
    H: float
    T_d0p: float
    T_q0p: float
    x_d: float
    x_dp: float
    x_q: float
    x_qp: float
    omega0: float = 314.16

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidParametersError(f"{f.name} must be positive and finite, got {v!r}")
        # transient saliency neglected: x_d' and x_q' must coincide
        if not math.isclose(self.x_dp, self.x_qp, rel_tol=1e-12):
            raise InvalidParametersError(
                f"x_dp ({self.x_dp}) and x_qp ({self.x_qp}) must be equal"
            )


@dataclass(frozen=True)
class DerivedCoefficients:
    a0: float
    b0: float
    a1: float
    b1: float
    c1: float
    a2: float
    b2: float

    def __post_init__(self):
        bad = [f.name for f in fields(self)
               if not (math.isfinite(getattr(self, f.name)) and getattr(self, f.name) > 0)]
        if bad:
            raise InvalidParametersError(
                "coefficients must be strictly positive: "
                + ", ".join(f"{n}={getattr(self, n)!r}" for n in bad)
            )


class PlantState(NamedTuple):
    x1: float  # rotor angle, rad
    x2: float  # shaft speed deviation, rad/s
    x3: float  # E_d', pu
    x4: float  # E_q', pu


class Inputs(NamedTuple):
    u1: float      # mechanical power P_m
    u2: float      # field voltage E_f
    y1_bus: float  # terminal voltage phase theta_t
    y2_bus: float  # terminal voltage magnitude V_t


# Coefficients of the single-machine infinite-bus benchmark.
SMIB_COEFFICIENTS = DerivedCoefficients(
    a0=13.2893, b0=6.6447, a1=0.268, b1=0.1564, c1=0.1116, a2=7.7462, b2=4.5204
)


def derive_coefficients(p: MachineParams) -> DerivedCoefficients:
    """Map physical parameters to the rate coefficients of the plant.

    Raises InvalidParametersError when a coefficient is not strictly
    positive, e.g. ``b2 = 0`` for ``x_q == x_qp``.
    """
    return DerivedCoefficients(
        a0=p.omega0 * p.D / (2.0 * p.H),
        b0=p.omega0 / (2.0 * p.H),
        a1=(p.x_d / p.x_dp) / p.T_d0p,
        b1=((p.x_d - p.x_dp) / p.x_dp) / p.T_d0p,
        c1=1.0 / p.T_d0p,
        a2=(p.x_q / p.x_qp) / p.T_q0p,
        b2=((p.x_q - p.x_qp) / p.x_qp) / p.T_q0p,
    )


def plant_rhs(x: PlantState, u: Inputs, c: DerivedCoefficients, y5=None, x_qp=None) -> PlantState:
    """Right-hand side of the flux-decay dynamics.

    ``y5`` is the electrical power delivered at the terminal.  When omitted
    it is computed from ``x`` through the PMU map, which needs ``x_qp``.
    """
    x1, x2, x3, x4 = x
    u1, u2, y1, y2 = u
    if y5 is None:
        if x_qp is None:
            raise TypeError("plant_rhs needs either y5 or x_qp")
        from .pmu import electrical_power

        y5 = electrical_power(x, y1, y2, x_qp)
    delta = np.subtract(x1, y1)
    return PlantState(
        x2,
        -c.a0 * x2 + c.b0 * (u1 - y5),
        -c.a2 * x3 + c.b2 * y2 * np.sin(delta),
        -c.a1 * x4 + c.b1 * y2 * np.cos(delta) + c.c1 * u2,
    )
