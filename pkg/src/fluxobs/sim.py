"""Scenario definition, fixed-step RK4 and the composite plant + observer run."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernel, baselines, drem, gpebo, pmu
from .errors import IntegrationDivergedError, ObservabilityLossError
from .model import DerivedCoefficients, Inputs, PlantState, plant_rhs

log = logging.getLogger(__name__)

__all__ = [
    "Signal",
    "Scenario",
    "Trajectory",
    "rk4_step",
    "run_scenario",
    "n_records",
    "OBSERVERS",
    "PHI_COND_WARN",
]

OBSERVERS = ("drem", "overparam", "gradient")
PHI_COND_WARN = 1e8


def rk4_step(rhs, state, t, h):
    """One classical Runge-Kutta step of ``dx/dt = rhs(t, x)``.

    Raises IntegrationDivergedError if any stage derivative is not finite.
    """
    state = np.asarray(state, dtype=float)
    k1 = np.asarray(rhs(t, state), dtype=float)
    if not np.all(np.isfinite(k1)):
        raise IntegrationDivergedError("non-finite derivative", t)
    k2 = np.asarray(rhs(t + 0.5 * h, state + 0.5 * h * k1), dtype=float)
    if not np.all(np.isfinite(k2)):
        raise IntegrationDivergedError("non-finite derivative", t + 0.5 * h)
    k3 = np.asarray(rhs(t + 0.5 * h, state + 0.5 * h * k2), dtype=float)
    if not np.all(np.isfinite(k3)):
        raise IntegrationDivergedError("non-finite derivative", t + 0.5 * h)
    k4 = np.asarray(rhs(t + h, state + h * k3), dtype=float)
    if not np.all(np.isfinite(k4)):
        raise IntegrationDivergedError("non-finite derivative", t + h)
    return state + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def n_records(T, h):
    """``floor(T/h) + 1``, tolerant of T being an exact multiple of h in decimal."""
    return int(math.floor(T / h * (1 + 1e-12))) + 1


@dataclass(frozen=True)
class Signal:
    """Piecewise-constant time table, sampled left-continuously.

    ``values[k]`` is in force on ``(times[k], times[k+1]]``; at or before
    ``times[0]`` the first value applies.  A step listed at ``t_k`` is
    therefore first seen by samples strictly after ``t_k``.
    """

    times: tuple = (0.0,)
    values: tuple = (0.0,)

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        values = tuple(float(v) for v in self.values)
        if not times or len(times) != len(values):
            raise ValueError("signal needs matching, non-empty times and values")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"signal breakpoints must be strictly increasing: {times}")
        if not all(math.isfinite(v) for v in values + times):
            raise ValueError("signal entries must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value):
        return cls((0.0,), (float(value),))

    @property
    def is_constant(self):
        return len(self.values) == 1

    def __call__(self, t):
        k = np.searchsorted(self.times, t, side="left") - 1
        return np.asarray(self.values)[np.maximum(k, 0)]

    def arrays(self):
        return np.asarray(self.times, dtype=float), np.asarray(self.values, dtype=float)


def _drem_gains(gains):
    out = np.zeros((len(gains), 5))
    for i, g in enumerate(gains):
        g = np.asarray(g, dtype=float)
        if g.ndim == 0:
            g = np.full(5, float(g))
        elif g.shape == (2,):
            # the three diagnostic components follow gamma_1
            g = np.array([g[0], g[1], g[0], g[0], g[0]])
        if g.shape != (5,) or np.any(g <= 0) or not np.all(np.isfinite(g)):
            raise ValueError(f"DREM gain must be positive scalar, pair or 5-vector, got {g!r}")
        out[i] = g
    return out


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one simulation run."""

    coeffs: DerivedCoefficients
    x_qp: float
    x0: PlantState = PlantState(0.1, 0.2, 0.4, 0.3)
    u1: Signal = Signal.constant(0.1)
    u2: Signal = Signal.constant(0.1)
    y1: Signal = Signal.constant(0.0)
    y2: Signal = Signal.constant(1.0)
    h: float = 1e-3
    T: float = 50.0
    filters: drem.FilterBank = drem.FilterBank()
    drem_gains: tuple = ()
    overparam_gains: tuple = ()
    gradient_gains: tuple = ()
    observers: tuple = OBSERVERS
    theta_hat0: tuple = (0.0, 0.0)
    Theta_hat0: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    x34_hat0: tuple = (0.0, 0.0)
    gradient_offset: float = 0.0
    estimator_step: str = "exact"
    x1_mode: str = "arcsin"
    x_dp: float | None = None
    label: str = ""

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"step size h must be positive, got {self.h}")
        if not (self.T >= self.h):
            raise ValueError(f"horizon T={self.T} must be at least h={self.h}")
        if not self.x_qp > 0:
            raise ValueError("x_qp must be positive")
        if any(v <= 0 for v in self.y2.values):
            raise ValueError("terminal voltage magnitude y2 must stay positive")
        unknown = set(self.observers) - set(OBSERVERS)
        if unknown:
            raise ValueError(f"unknown observers {sorted(unknown)}; choose from {OBSERVERS}")
        if self.estimator_step not in ("exact", "rk4"):
            raise ValueError("estimator_step must be 'exact' or 'rk4'")
        if self.x1_mode not in ("arcsin", "atan2"):
            raise ValueError("x1_mode must be 'arcsin' or 'atan2'")
        object.__setattr__(self, "x0", PlantState(*map(float, self.x0)))
        if not all(math.isfinite(v) for v in self.x0):
            raise ValueError("initial plant state must be finite")
        # validate gain shapes early
        _drem_gains(self.drem_gains)
        for g in self.overparam_gains:
            baselines.as_gain_matrix(g, 5)
        for g in self.gradient_gains:
            baselines.as_gain_matrix(g, 2)

    @property
    def n_records(self):
        return n_records(self.T, self.h)

    @property
    def active_drem(self):
        return self.drem_gains if "drem" in self.observers else ()

    @property
    def active_overparam(self):
        return self.overparam_gains if "overparam" in self.observers else ()

    @property
    def active_gradient(self):
        return self.gradient_gains if "gradient" in self.observers else ()

    def inputs_at(self, t):
        return Inputs(self.u1(t), self.u2(t), self.y1(t), self.y2(t))

    @property
    def theta_true(self):
        # xi(0) = 0, so eps(0) = (x3, x4)(0)
        return np.array([self.x0.x3, self.x0.x4])


def _gain_label(g):
    g = np.asarray(g, dtype=float)
    if g.ndim == 0 or np.all(g == g.flat[0]) or (g.ndim == 2 and np.allclose(g, g[0, 0] * np.eye(len(g)))):
        return f"{float(g.flat[0]):g}"
    return "custom"


@dataclass
class Trajectory:
    """Recorded run on the uniform grid ``t_n = n h``.

    Raw integrator states are stored; measurement, regression, mixing and
    estimate quantities are recomputed from them with the public (numpy)
    functions on first access.
    """

    scenario: Scenario
    t: np.ndarray
    plant: np.ndarray        # (N, 4)
    xi: np.ndarray           # (N, 2)
    phi: np.ndarray          # (N, 2, 2)
    filters: np.ndarray      # (N, 4, 6)
    int_delta_sq: np.ndarray  # (N,) co-integrated
    drem_est: np.ndarray     # (n_drem, N, 5)
    overparam_est: np.ndarray  # (n_op, N, 5)
    gradient_est: np.ndarray   # (n_grad, N, 2)
    drem_gains: np.ndarray = field(default=None)
    overparam_gains: np.ndarray = field(default=None)
    gradient_gains: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.t)

    @property
    def h(self):
        return self.scenario.h

    @cached_property
    def state(self):
        return PlantState(*self.plant.T)

    @cached_property
    def inputs(self):
        return self.scenario.inputs_at(self.t)

    @cached_property
    def pmu(self):
        u = self.inputs
        return pmu.measure(self.state, u.y1_bus, u.y2_bus, self.scenario.x_qp)

    @cached_property
    def signals(self):
        return pmu.derived_signals(self.pmu, self.scenario.x_qp)

    @cached_property
    def A(self):
        return pmu.meas_matrix(self.signals, self.pmu, self.scenario.coeffs, self.scenario.x_qp)

    @cached_property
    def extension(self):
        return gpebo.ExtensionState(self.xi, self.phi)

    @cached_property
    def regressor(self):
        return gpebo.build_regressor(self.extension, self.signals.Y1)

    @cached_property
    def extended(self):
        return drem.extended_regression(self.regressor.yE, self.regressor.psi, self.filters)

    @cached_property
    def mixed(self):
        return drem.mix(self.extended)

    @cached_property
    def mixed_cramer(self):
        return drem.mix_cramer(self.extended)

    @property
    def Delta(self):
        return self.mixed.Delta

    @cached_property
    def int_delta_sq_trapz(self):
        return drem.excitation_integral(self.Delta, self.h, cumulative=True)

    @property
    def theta_true(self):
        return self.scenario.theta_true

    @property
    def Theta_true(self):
        return gpebo.theta_vector(self.theta_true)

    @cached_property
    def phi_cond(self):
        return np.linalg.cond(self.phi)

    def _reconstruct(self, theta_hat):
        return gpebo.reconstruct_states(self.extension, theta_hat, self.signals,
                                        mode=self.scenario.x1_mode, strict=False)

    @cached_property
    def drem_estimates(self):
        """Per DREM entry: array ``(N, 3)`` of ``(x1_hat, x3_hat, x4_hat)``."""
        return [np.stack(self._reconstruct(e[:, :2]), -1) for e in self.drem_est]

    @cached_property
    def overparam_estimates(self):
        return [np.stack(self._reconstruct(e[:, :2]), -1) for e in self.overparam_est]

    def errors(self, observer, index):
        """``(N, 2)`` errors of ``(x3_hat, x4_hat)`` for one observer entry."""
        x34 = self.plant[:, 2:4]
        if observer == "drem":
            return self.drem_estimates[index][:, 1:] - x34
        if observer == "overparam":
            return self.overparam_estimates[index][:, 1:] - x34
        if observer == "gradient":
            return self.gradient_est[index] - x34
        raise KeyError(observer)

    def x1_error(self, observer, index):
        est = {"drem": self.drem_estimates, "overparam": self.overparam_estimates}[observer]
        return est[index][:, 0] - self.plant[:, 0]

    def consistency(self, index, squared=False):
        f = baselines.consistency_error_squared if squared else baselines.consistency_error
        return f(self.overparam_est[index])

    def entries(self):
        """``(observer, index, gain_label)`` for every simulated observer entry."""
        out = [("drem", i, _gain_label(g)) for i, g in enumerate(self.drem_gains)]
        out += [("overparam", i, _gain_label(g)) for i, g in enumerate(self.overparam_gains)]
        out += [("gradient", i, _gain_label(g)) for i, g in enumerate(self.gradient_gains)]
        return out


def _kernel_inputs(s: Scenario):
    c = s.coeffs
    coef = np.array([c.a0, c.b0, c.a1, c.b1, c.c1, c.a2, c.b2, s.x_qp])
    gam_drem = _drem_gains(s.active_drem)
    gam_op = np.array([baselines.as_gain_matrix(g, 5) for g in s.active_overparam]).reshape(-1, 5, 5)
    gam_grad = np.array([baselines.as_gain_matrix(g, 2) for g in s.active_gradient]).reshape(-1, 2, 2)
    y0 = np.zeros(_kernel.N_CORE + 2 * len(gam_grad))
    y0[0:4] = s.x0
    y0[6] = y0[9] = 1.0
    x34 = np.asarray(s.x34_hat0, dtype=float) + s.gradient_offset
    for g in range(len(gam_grad)):
        y0[_kernel.N_CORE + 2 * g:_kernel.N_CORE + 2 * g + 2] = x34
    theta0 = np.zeros(5)
    theta0[:2] = s.theta_hat0
    est0 = np.concatenate([np.tile(theta0, len(gam_drem)),
                           np.tile(np.asarray(s.Theta_hat0, dtype=float), len(gam_op))])
    return coef, gam_drem, gam_op, gam_grad, y0, est0


def _unpack(s, Y, E, gam_drem, gam_op, gam_grad):
    N = Y.shape[0]
    nd, no, ng = len(gam_drem), len(gam_op), len(gam_grad)
    return Trajectory(
        scenario=s,
        t=np.arange(N) * s.h,
        plant=Y[:, 0:4].copy(),
        xi=Y[:, 4:6].copy(),
        phi=Y[:, 6:10].reshape(N, 2, 2).copy(),
        filters=Y[:, 10:34].reshape(N, 4, 6).copy(),
        int_delta_sq=Y[:, 34].copy(),
        drem_est=E[:, :5 * nd].reshape(N, nd, 5).transpose(1, 0, 2).copy(),
        overparam_est=E[:, 5 * nd:5 * (nd + no)].reshape(N, no, 5).transpose(1, 0, 2).copy(),
        gradient_est=Y[:, _kernel.N_CORE:_kernel.N_CORE + 2 * ng].reshape(N, ng, 2).transpose(1, 0, 2).copy(),
        drem_gains=gam_drem,
        overparam_gains=gam_op,
        gradient_gains=gam_grad,
    )


def run_scenario(s: Scenario, engine="compiled") -> Trajectory:
    """Integrate plant, extension, filters and all enabled observers together.

    ``engine="python"`` composes the public per-module functions with
    :func:`rk4_step`; it is slow and exists as an independent reference.
    """
    if engine == "python":
        return _run_python(s)
    if engine != "compiled":
        raise ValueError(f"unknown engine {engine!r}")
    coef, gam_drem, gam_op, gam_grad, y0, est0 = _kernel_inputs(s)
    tables = [a for sig in (s.u1, s.u2, s.y1, s.y2) for a in sig.arrays()]
    Y, E, status, t_fail = _kernel.integrate(
        y0, est0, float(s.h), s.n_records - 1, coef, np.asarray(s.filters.d),
        gam_drem, gam_op, gam_grad, s.estimator_step == "exact", *tables, pmu.Y1_TOLERANCE)
    if status == _kernel.DIVERGED:
        raise IntegrationDivergedError("integration diverged", t_fail)
    if status == _kernel.UNOBSERVABLE:
        raise ObservabilityLossError(f"Y1 dropped below {pmu.Y1_TOLERANCE:g}", t_fail)
    traj = _unpack(s, Y, E, gam_drem, gam_op, gam_grad)
    worst = float(np.max(traj.phi_cond))
    if worst > PHI_COND_WARN:
        log.warning("transition matrix condition number reached %.3g (> %.0e)", worst, PHI_COND_WARN)
    return traj


def _run_python(s: Scenario) -> Trajectory:
    coef, gam_drem, gam_op, gam_grad, y0, est0 = _kernel_inputs(s)
    c = s.coeffs
    nd, no, ng = len(gam_drem), len(gam_op), len(gam_grad)
    exact = s.estimator_step == "exact"
    n_y = len(y0)

    def stage(t, z):
        y, est = z[:n_y], z[n_y:]
        u = s.inputs_at(t)
        x = PlantState(*y[0:4])
        sample = pmu.measure(x, u.y1_bus, u.y2_bus, s.x_qp)
        try:
            sig = pmu.derived_signals(sample, s.x_qp)
        except ObservabilityLossError as exc:
            raise ObservabilityLossError(str(exc), t) from None
        A = pmu.meas_matrix(sig, sample, c, s.x_qp)
        ext = gpebo.ExtensionState(y[4:6], y[6:10].reshape(2, 2))
        reg = gpebo.build_regressor(ext, sig.Y1)
        F = y[10:34].reshape(4, 6)
        m = drem.mix(drem.extended_regression(reg.yE, reg.psi, F))
        dext = gpebo.extension_rhs(ext, A, u.u2, c.c1)
        parts = [np.asarray(plant_rhs(x, u, c, y5=sample.y5)), dext.xi, dext.phi.ravel(),
                 drem.filter_rhs(F, reg.yE, reg.psi, s.filters.d).ravel(), [float(m.Delta) ** 2]]
        for g in range(ng):
            xh = y[_kernel.N_CORE + 2 * g:_kernel.N_CORE + 2 * g + 2]
            parts.append(baselines.grad_observer_rhs(xh, gam_grad[g], sig.Y1, A, u.u2, c.c1))
        if not exact:
            for e in range(nd):
                parts.append(drem.scalar_update(est[5 * e:5 * e + 5], gam_drem[e], m))
            for e in range(no):
                o = 5 * (nd + e)
                parts.append(baselines.overparam_update(est[o:o + 5], gam_op[e], reg))
        return np.concatenate([np.ravel(p) for p in parts]), (m, reg)

    N = s.n_records
    Y = np.empty((N, n_y))
    E = np.empty((N, len(est0)))
    Y[0], E[0] = y0, est0
    z = np.concatenate([y0, est0])
    for n in range(N - 1):
        t = n * s.h
        if exact:
            stages = []

            def rhs(tt, yy):
                d, info = stage(tt, np.concatenate([yy, z[n_y:]]))
                stages.append(info)
                return d

            ynew = rk4_step(rhs, z[:n_y], t, s.h)
            est = z[n_y:].copy()
            deltas = [float(m.Delta) for m, _ in stages]
            calys = [m.calY for m, _ in stages]
            for e in range(nd):
                est[5 * e:5 * e + 5] = drem.scalar_step_exact(est[5 * e:5 * e + 5], gam_drem[e],
                                                             deltas, calys, s.h)
            if no:
                w = drem.RK4_WEIGHTS
                psib = sum(wi * r.psi for wi, (_, r) in zip(w, stages))
                yEb = sum(wi * float(r.yE) for wi, (_, r) in zip(w, stages))
                for e in range(no):
                    o = 5 * (nd + e)
                    est[o:o + 5] = baselines.overparam_step_exact(est[o:o + 5], gam_op[e], psib, yEb, s.h)
            z = np.concatenate([ynew, est])
        else:
            z = rk4_step(lambda tt, zz: stage(tt, zz)[0], z, t, s.h)
        Y[n + 1], E[n + 1] = z[:n_y], z[n_y:]
    return _unpack(s, Y, E, gam_drem, gam_op, gam_grad)
