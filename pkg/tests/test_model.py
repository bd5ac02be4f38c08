import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxobs import (SMIB_COEFFICIENTS, DerivedCoefficients, Inputs, InvalidParametersError,
                     MachineParams, PlantState, derive_coefficients, plant_rhs)
from fluxobs import pmu

BENCH = dict(D=2.0, H=23.64, T_d0p=8.96, x_d=0.146, x_dp=0.0608, omega0=314.16)
# x_q and T_q0p are not tabulated; these reproduce the listed a2, b2
BENCH_Q = dict(x_q=0.146, x_qp=0.0608, T_q0p=0.31)


def params(**kw):
    return MachineParams(**{**BENCH, **BENCH_Q, **kw})


def test_benchmark_parameters_give_listed_coefficients():
    c = derive_coefficients(params())
    assert c.a0 == pytest.approx(13.2893, abs=5e-5)
    assert c.b0 == pytest.approx(6.6447, abs=5e-5)
    assert c.c1 == pytest.approx(0.1116, abs=5e-5)
    assert c.a1 == pytest.approx(0.268, abs=5e-4)
    assert c.b1 == pytest.approx(0.1564, abs=5e-5)


def test_back_derived_q_axis_is_close_to_listed():
    c = derive_coefficients(params())
    assert c.a2 == pytest.approx(SMIB_COEFFICIENTS.a2, rel=2e-3)
    assert c.b2 == pytest.approx(SMIB_COEFFICIENTS.b2, rel=2e-3)


def test_coefficients_exact_formulas():
    c = derive_coefficients(params())
    assert c.a0 == pytest.approx(314.16 * 2 / (2 * 23.64), rel=1e-15)
    assert c.b1 == pytest.approx(((0.146 - 0.0608) / 0.0608) / 8.96, rel=1e-15)


def test_equal_q_reactances_rejected():
    with pytest.raises(InvalidParametersError):
        derive_coefficients(params(x_q=0.0608))


@pytest.mark.parametrize("field", ["D", "H", "T_d0p", "x_d"])
def test_nonpositive_parameter_rejected(field):
    with pytest.raises(InvalidParametersError):
        params(**{field: 0.0})


def test_transient_saliency_rejected():
    with pytest.raises(InvalidParametersError):
        params(x_qp=0.07)


def test_nonpositive_coefficient_rejected():
    with pytest.raises(InvalidParametersError):
        DerivedCoefficients(1, 1, 1, 0.0, 1, 1, 1)


def test_doubling_inertia_halves_a0_b0():
    c1, c2 = derive_coefficients(params()), derive_coefficients(params(H=2 * 23.64))
    assert c2.a0 == c1.a0 / 2 and c2.b0 == c1.b0 / 2


def test_rhs_at_bus_angle_zero_flux():
    x = PlantState(0.3, 0.0, 0.0, 0.0)
    d = plant_rhs(x, Inputs(0.0, 0.0, 0.3, 1.7), SMIB_COEFFICIENTS, y5=0.0)
    assert np.allclose(d, (0, 0, 0, SMIB_COEFFICIENTS.b1 * 1.7), atol=0, rtol=1e-15)


def test_rhs_pure_damping():
    x = PlantState(0.0, 1.0, 0.0, 0.0)
    d = plant_rhs(x, Inputs(0.25, 0.0, 0.0, 1.0), SMIB_COEFFICIENTS, y5=0.25)
    assert d[1] == -SMIB_COEFFICIENTS.a0


def test_rhs_benchmark_point():
    # 30-digit evaluation of the four equations at x(0), u = (0.1, 0.1), bus (0, 1)
    x = PlantState(0.1, 0.2, 0.4, 0.3)
    d = plant_rhs(x, Inputs(0.1, 0.1, 0.0, 1.0), SMIB_COEFFICIENTS, x_qp=0.0608)
    expect = (0.2, 38.230174798210615, -2.647193023389678, 0.08637865144948323)
    assert np.allclose(d, expect, rtol=1e-13, atol=0)


def test_rhs_needs_y5_or_x_qp():
    with pytest.raises((TypeError, ValueError)):
        plant_rhs(PlantState(0, 0, 0, 0), Inputs(0, 0, 0, 1), SMIB_COEFFICIENTS)


def test_mechanical_equilibrium():
    x = PlantState(0.2, 0.0, 0.5, 0.4)
    y5 = float(pmu.electrical_power(x, 0.0, 1.0, 0.0608))
    d = plant_rhs(x, Inputs(y5, 0.0, 0.0, 1.0), SMIB_COEFFICIENTS, y5=y5)
    assert d[0] == 0.0 and d[1] == 0.0


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.tuples(finite, finite, finite, finite), st.tuples(finite, finite, finite, finite),
       finite, finite)
def test_rhs_affine_in_inputs(x1, x2, du1, du2):
    u = Inputs(0.1, 0.2, 0.0, 1.0)
    up = Inputs(0.1 + du1, 0.2 + du2, 0.0, 1.0)
    c = SMIB_COEFFICIENTS

    def diff(x):
        x = PlantState(*x)
        y5 = 0.37
        return np.asarray(plant_rhs(x, up, c, y5=y5)) - np.asarray(plant_rhs(x, u, c, y5=y5))

    assert np.allclose(diff(x1), diff(x2), atol=1e-12)
    assert math.isclose(diff(x1)[1], c.b0 * du1, abs_tol=1e-12)
