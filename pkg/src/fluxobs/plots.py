"""Figures drawn from exported columns (a ``{name: array}`` mapping).

Working from columns rather than a live Trajectory lets ``fluxobs report``
redraw figures from CSV files alone.
"""
from __future__ import annotations

import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["entry_prefixes", "render_figures"]


def entry_prefixes(cols, observer):
    """Column prefixes like ``drem[1e+15]`` present for one observer."""
    pat = re.compile(rf"^({re.escape(observer)}\[[^\]]*\](?:#\d+)?)\.")
    seen = []
    for name in cols:
        m = pat.match(name)
        if m and m.group(1) not in seen:
            seen.append(m.group(1))
    return seen


def _states(cols, observer, title):
    labs = [p for p in entry_prefixes(cols, observer) if f"{p}.x3_hat" in cols]
    if not labs or "x3" not in cols:
        return None
    t = cols["t"]
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(7, 5.5))
    for ax, k in zip(axes, ("3", "4")):
        ax.plot(t, cols[f"x{k}"], "k", lw=1.6, label=f"x{k}")
        for p in labs:
            ax.plot(t, cols[f"{p}.x{k}_hat"], lw=1.0, ls="--", label=p)
        ax.set_ylabel(f"x{k} [pu]")
        ax.grid(alpha=0.3)
    axes[0].set_title(title)
    axes[0].legend(fontsize=7, ncol=2)
    axes[-1].set_xlabel("t [s]")
    return fig


def _errors(cols):
    labs = [p for obs in ("drem", "overparam", "gradient") for p in entry_prefixes(cols, obs)
            if f"{p}.x3_err" in cols]
    if not labs:
        return None
    t = cols["t"]
    fig, ax = plt.subplots(figsize=(7, 4))
    for p in labs:
        e = np.maximum(np.abs(cols[f"{p}.x3_err"]), np.abs(cols[f"{p}.x4_err"]))
        ax.semilogy(t, np.maximum(e, 1e-16), lw=1.0, label=p)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("max(|x3 err|, |x4 err|) [pu]")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=7, ncol=2)
    return fig


def _consistency(cols):
    labs = [p for p in entry_prefixes(cols, "overparam") if f"{p}.e1" in cols]
    if not labs:
        return None
    t = cols["t"]
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(7, 6))
    for k, ax in enumerate(axes, 1):
        for p in labs:
            ax.plot(t, cols[f"{p}.e{k}"], lw=1.0, label=p)
        ax.set_ylabel(f"e{k}")
        ax.grid(alpha=0.3)
    axes[0].set_title("overparameterised estimator: consistency error")
    axes[0].legend(fontsize=7)
    axes[-1].set_xlabel("t [s]")
    return fig


def _excitation(cols):
    if "Delta" not in cols:
        return None
    t = cols["t"]
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    axes[0].plot(t, cols["Delta"], lw=1.0)
    axes[0].set_ylabel("Delta")
    if "int_Delta_sq" in cols:
        axes[1].plot(t, cols["int_Delta_sq"], lw=1.0)
    axes[1].set_ylabel("int Delta^2")
    axes[1].set_xlabel("t [s]")
    for ax in axes:
        ax.grid(alpha=0.3)
    return fig


FIGURES = {
    "drem_states": lambda c: _states(c, "drem", "GPEBO + DREM estimates"),
    "gradient_states": lambda c: _states(c, "gradient", "gradient-descent observer"),
    "overparam_states": lambda c: _states(c, "overparam", "overparameterised gradient estimator"),
    "errors": _errors,
    "consistency": _consistency,
    "excitation": _excitation,
}


def render_figures(cols, outdir, fmt="png"):
    """Write every figure whose columns are present; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, make in FIGURES.items():
        fig = make(cols)
        if fig is None:
            continue
        path = outdir / f"{name}.{fmt}"
        fig.tight_layout()
        # fixed metadata keeps repeated renders byte-identical
        fig.savefig(path, dpi=110, metadata={"Software": None} if fmt == "png" else None)
        plt.close(fig)
        paths.append(path)
    return paths
