"""Run summaries, the CSV column registry and the cross-observer comparison."""
from __future__ import annotations

import csv
import fnmatch
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .sim import Trajectory

__all__ = [
    "ObserverResult",
    "RunReport",
    "convergence_time",
    "entry_labels",
    "column_registry",
    "select_columns",
    "emit_csv",
    "read_csv",
    "build_report",
    "compare_rows",
    "compare_report",
    "save_report",
    "load_report",
]

BASE_COLUMNS = ("t", "x1", "x2", "x3", "x4", "y1", "y2", "y3", "y4", "y5", "y6",
                "Y1", "Y2", "Y3", "Delta", "int_Delta_sq")


def convergence_time(t, err, threshold=1e-3, hold=0.5):
    """Earliest record time after which ``max|err| < threshold`` for good.

    The threshold must hold from that record to the end of the horizon, and
    that stretch must last at least ``hold`` seconds; otherwise ``None``.
    NaN errors count as above threshold.
    """
    t = np.asarray(t, dtype=float)
    e = np.asarray(err, dtype=float)
    if e.ndim > 1:
        e = np.max(np.abs(e), axis=tuple(range(1, e.ndim)))
    below = np.abs(e) < threshold
    if not below[-1]:
        return None
    bad = np.flatnonzero(~below)
    k = 0 if bad.size == 0 else bad[-1] + 1
    if t[-1] - t[k] < hold - 1e-12:
        return None
    return float(t[k])


@dataclass
class ObserverResult:
    observer: str
    label: str
    gain: list
    converged: bool
    convergence_time: float | None
    terminal_error: float
    peak_error: float
    nan_x1: int = 0
    extra: dict = field(default_factory=dict)


@dataclass
class RunReport:
    label: str
    h: float
    T: float
    records: int
    threshold: float
    hold: float
    int_delta_sq: float
    min_abs_delta: float
    max_abs_delta: float
    excitation_plateau: bool
    phi_cond_max: float
    checks: dict
    observers: list

    @property
    def passed(self):
        return all(self.checks.values())

    def results(self, observer):
        return [r for r in self.observers if r.observer == observer]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["observers"] = [ObserverResult(**o) for o in d["observers"]]
        return cls(**d)


def entry_labels(traj: Trajectory):
    """Unique column prefixes such as ``drem[1e+15]`` for every observer entry."""
    seen = {}
    out = []
    for obs, i, g in traj.entries():
        base = f"{obs}[{g}]"
        n = seen.get(base, 0) + 1
        seen[base] = n
        out.append((obs, i, base if n == 1 else f"{base}#{n}"))
    return out


def column_registry(traj: Trajectory):
    """Ordered ``{name: 1-D array}`` of every exportable column."""
    cols = {"t": traj.t}
    for k in range(4):
        cols[f"x{k + 1}"] = traj.plant[:, k]
    for k, name in enumerate(("y1", "y2", "y3", "y4", "y5", "y6")):
        cols[name] = np.asarray(traj.pmu[k], dtype=float) * np.ones(len(traj))
    sig = traj.signals
    cols["Y1"], cols["Y2"], cols["Y3"] = sig.Y1, sig.Y2, sig.Y3
    cols["Delta"] = traj.Delta
    cols["int_Delta_sq"] = traj.int_delta_sq
    for obs, i, lab in entry_labels(traj):
        err = traj.errors(obs, i)
        if obs in ("drem", "overparam"):
            est = traj.drem_estimates[i] if obs == "drem" else traj.overparam_estimates[i]
            cols[f"{lab}.x1_hat"] = est[:, 0]
            cols[f"{lab}.x3_hat"] = est[:, 1]
            cols[f"{lab}.x4_hat"] = est[:, 2]
        else:
            cols[f"{lab}.x3_hat"] = traj.gradient_est[i][:, 0]
            cols[f"{lab}.x4_hat"] = traj.gradient_est[i][:, 1]
        cols[f"{lab}.x3_err"] = err[:, 0]
        cols[f"{lab}.x4_err"] = err[:, 1]
        if obs == "drem":
            cols[f"{lab}.theta1_hat"] = traj.drem_est[i][:, 0]
            cols[f"{lab}.theta2_hat"] = traj.drem_est[i][:, 1]
        elif obs == "overparam":
            for k in range(5):
                cols[f"{lab}.Theta{k + 1}_hat"] = traj.overparam_est[i][:, k]
            e = traj.consistency(i)
            esq = traj.consistency(i, squared=True)
            for k in range(3):
                cols[f"{lab}.e{k + 1}"] = e[:, k]
            for k in range(3):
                cols[f"{lab}.e{k + 1}_sq"] = esq[:, k]
    return cols


def select_columns(names, patterns):
    """Apply shell-style patterns in order; each must match at least one column."""
    if not patterns:
        return list(names)
    out = []
    for p in patterns:
        hits = [n for n in names if fnmatch.fnmatchcase(n, p)]
        if not hits:
            raise KeyError(f"column pattern {p!r} matches nothing; known columns: {', '.join(names)}")
        out.extend(n for n in hits if n not in out)
    return out


def emit_csv(traj: Trajectory, path, columns=()):
    """Write one header row and one row per record, 17 significant digits."""
    reg = column_registry(traj)
    names = select_columns(list(reg), columns)
    data = np.column_stack([reg[n] for n in names])
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(names) + "\n")
            np.savetxt(fh, data, fmt="%.17g", delimiter=",")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write CSV: {exc.strerror}", str(path)) from None
    return names


def read_csv(path):
    """``{column: array}`` from a file written by :func:`emit_csv`."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return {name: data[:, k] for k, name in enumerate(header)}


def _plateau(int_d2, t):
    # excitation integral essentially flat over the final 10% of the horizon
    if len(t) < 3 or int_d2[-1] <= 0:
        return True
    k = np.searchsorted(t, 0.9 * t[-1])
    return bool(int_d2[-1] - int_d2[k] <= 1e-6 * int_d2[-1])


def build_report(traj: Trajectory, threshold=1e-3, hold=0.5) -> RunReport:
    s = traj.scenario
    x34 = traj.plant[:, 2:4]
    th = traj.theta_true
    Th = traj.Theta_true
    sig = traj.signals
    m = traj.mixed
    reg = traj.regressor
    checks = {
        "Y1_roundtrip": float(np.max(np.abs(sig.Y1 - np.sum(x34 ** 2, axis=1)))) <= 1e-9,
        "transition_identity": float(np.max(np.abs(
            x34 - traj.xi - np.einsum("nij,j->ni", traj.phi, th)))) <= 1e-6,
        "regression_identity": float(np.max(np.abs(reg.psi @ Th - reg.yE))) <= 1e-8,
        "mixing_identity": bool(np.all(
            np.max(np.abs(m.calY - m.Delta[:, None] * Th), axis=1)
            <= 1e-6 * (1 + np.max(np.abs(m.calY), axis=1)))),
    }
    results = []
    for obs, i, lab in entry_labels(traj):
        err = np.max(np.abs(traj.errors(obs, i)), axis=1)
        tc = convergence_time(traj.t, err, threshold, hold)
        gain = {"drem": traj.drem_gains, "overparam": traj.overparam_gains,
                "gradient": traj.gradient_gains}[obs][i]
        gain = np.asarray(gain).tolist()
        extra = {}
        nan_x1 = 0
        if obs in ("drem", "overparam"):
            nan_x1 = int(np.count_nonzero(np.isnan(traj.x1_error(obs, i))))
        if obs == "drem":
            extra["theta_error_final"] = (traj.drem_est[i][-1, :2] - th).tolist()
        if obs == "overparam":
            e = np.max(np.abs(traj.consistency(i)), axis=1)
            esq = np.max(np.abs(traj.consistency(i, squared=True)), axis=1)
            extra.update(e_peak=float(e.max()), e_final=float(e[-1]),
                         e_sq_peak=float(esq.max()), e_sq_final=float(esq[-1]),
                         Theta_error_final=(traj.overparam_est[i][-1] - Th).tolist())
        results.append(ObserverResult(
            observer=obs, label=lab, gain=gain, converged=tc is not None, convergence_time=tc,
            terminal_error=float(err[-1]), peak_error=float(np.nanmax(err)), nan_x1=nan_x1,
            extra=extra))
    absd = np.abs(traj.Delta)
    return RunReport(
        label=s.label or "run", h=s.h, T=float(traj.t[-1]), records=len(traj),
        threshold=threshold, hold=hold,
        int_delta_sq=float(traj.int_delta_sq[-1]),
        min_abs_delta=float(absd.min()), max_abs_delta=float(absd.max()),
        excitation_plateau=_plateau(traj.int_delta_sq, traj.t),
        phi_cond_max=float(np.max(traj.phi_cond)),
        checks=checks, observers=results)


def _scalar_gain(g):
    # ordering key for sweeps: mean of the (diagonal) gain entries
    a = np.asarray(g, dtype=float)
    return float(np.mean(np.diag(a) if a.ndim == 2 else a))


def compare_rows(reports):
    rows = []
    for r in reports:
        for o in r.observers:
            rows.append({
                "run": r.label, "observer": o.observer, "gain": o.label.split("[", 1)[1].rstrip("]"),
                "converged": o.converged,
                "t_conv": o.convergence_time, "terminal_error": o.terminal_error,
            })
    return rows


def _monotone_note(reports):
    notes = []
    for r in reports:
        drem = [o for o in r.results("drem") if o.converged]
        times = [o.convergence_time for o in sorted(drem, key=lambda o: _scalar_gain(o.gain))]
        if len(times) >= 2:
            dec = all(b < a for a, b in zip(times, times[1:]))
            notes.append(f"{r.label}: DREM convergence time strictly decreasing in gamma: "
                         f"{'yes' if dec else 'NO'}")
    return notes


def compare_report(reports):
    """Plain-text table of convergence times and terminal errors plus flags."""
    if not reports:
        raise ValueError("compare_report needs at least one report")
    rows = compare_rows(reports)
    buf = io.StringIO()
    w = max([len("run")] + [len(row["run"]) for row in rows])
    head = f"{'run':<{w}} {'observer':<10} {'gain':>10} {'t_conv [s]':>12} {'terminal':>11}  flag"
    buf.write(head + "\n" + "-" * len(head) + "\n")
    for row in rows:
        tc = f"{row['t_conv']:.3f}" if row["converged"] else "-"
        flag = "" if row["converged"] else "not converged"
        buf.write(f"{row['run']:<{w}} {row['observer']:<10} {row['gain']:>10} {tc:>12} "
                  f"{row['terminal_error']:>11.3e}  {flag}\n".rstrip() + "\n")
    notes = []
    for r in reports:
        for o in r.results("overparam"):
            if not o.converged:
                notes.append(f"{r.label}: {o.label} did not converge "
                             f"(final |e| = {o.extra.get('e_final', math.nan):.3g})")
    notes += _monotone_note(reports)
    for r in reports:
        d = [o.convergence_time for o in r.results("drem") if o.converged]
        g = [o.convergence_time for o in r.results("gradient") if o.converged]
        if d and g:
            faster = min(d) < min(g)
            notes.append(f"{r.label}: best DREM {min(d):.3f} s vs best gradient observer {min(g):.3f} s "
                         f"({'DREM faster' if faster else 'gradient observer not slower'})")
        if r.excitation_plateau:
            notes.append(f"{r.label}: excitation integral plateaued at {r.int_delta_sq:.4g}")
        failed = [k for k, v in r.checks.items() if not v]
        if failed:
            notes.append(f"{r.label}: FAILED checks: {', '.join(failed)}")
    if notes:
        buf.write("\n" + "\n".join(notes) + "\n")
    return buf.getvalue()


def save_report(report: RunReport, path):
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def load_report(path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text()))
