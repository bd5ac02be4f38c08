"""INI scenario configuration.

Parsing is fail-closed: unknown sections or keys, duplicate keys and
malformed values are errors that carry the offending line number.  The
grammar is documented in README.md; every key below is listed in
``SCHEMA``.
"""
from __future__ import annotations

import configparser
import itertools
import math
import os
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from . import drem, sim
from .errors import ConfigError, InvalidParametersError
from .model import DerivedCoefficients, MachineParams, PlantState, derive_coefficients

__all__ = [
    "SCHEMA",
    "REQUIRED",
    "OUTPUT_ENV",
    "PRESETS",
    "RunConfig",
    "parse_config",
    "load_config",
    "preset_path",
    "expand_sweep",
]

OUTPUT_ENV = "FLUXOBS_OUTPUT_DIR"
PRESETS = ("smib_vi_a", "lemma1_cert", "drem_identities")

SCHEMA = {
    "scenario": ("label", "h", "T", "x0"),
    "machine": ("D", "H", "T_d0p", "T_q0p", "x_d", "x_dp", "x_q", "x_qp", "omega0"),
    "coefficients": ("a0", "b0", "a1", "b1", "c1", "a2", "b2", "x_qp"),
    "inputs": ("u1", "u2", "y1", "y2"),
    "observers": ("enabled", "x1_mode", "estimator_step", "theta_hat0", "Theta_hat0",
                  "x34_hat0", "gradient_offset"),
    "drem": ("filters", "gamma", "gamma_scale"),
    "overparam": ("gamma",),
    "gradient": ("gamma",),
    "output": ("dir", "columns", "figures"),
    "report": ("threshold", "hold", "settle"),
    "verify": ("suites", "samples", "matrices", "seed", "bound"),
    "sweep": (),  # keys are "section.key", checked against the other sections
}

REQUIRED = {"scenario": ("h", "T", "x0")}
COEFFICIENT_KEYS = ("a0", "b0", "a1", "b1", "c1", "a2", "b2")


@dataclass(frozen=True)
class ReportOptions:
    threshold: float = 1e-3
    hold: float = 0.5
    settle: float | None = None  # default 5 / min(filter constants)


@dataclass(frozen=True)
class VerifyOptions:
    suites: tuple = ()
    samples: int = 10_000
    matrices: int = 1_000
    seed: int = 0
    bound: float = 10.0


@dataclass(frozen=True)
class RunConfig:
    scenario: sim.Scenario | None
    output_dir: str = "fluxobs_out"
    columns: tuple = ()
    figures: bool = True
    report: ReportOptions = ReportOptions()
    verify: VerifyOptions = VerifyOptions()
    sweep: tuple = ()  # ((section, key, (v1, v2, ...)), ...)
    raw: dict = field(default_factory=dict, repr=False, compare=False)
    source: str = "<string>"

    @property
    def label(self):
        if self.scenario is not None:
            return self.scenario.label
        return Path(self.source.split(":")[-1]).stem or "verify"

    def resolved_output_dir(self, override=None):
        """CLI override, then ``$FLUXOBS_OUTPUT_DIR``, then ``[output] dir``."""
        return override or os.environ.get(OUTPUT_ENV) or self.output_dir


# value parsing ---------------------------------------------------------------

def _float(text, where):
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"{where}: expected a number, got {text!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{where}: value must be finite, got {text!r}")
    return v


def _floats(text, where, n=None):
    parts = [p.strip() for p in text.split(",") if p.strip()]
    vals = tuple(_float(p, where) for p in parts)
    if n is not None and len(vals) != n:
        raise ConfigError(f"{where}: expected {n} comma-separated numbers, got {len(vals)}")
    if not vals:
        raise ConfigError(f"{where}: empty list")
    return vals


def _bool(text, where):
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"{where}: expected yes/no, got {text!r}")


def _signal(text, where):
    """A number, or a table ``t0: v0; t1: v1; ...`` sampled left-continuously."""
    if ":" not in text:
        return sim.Signal.constant(_float(text, where))
    times, values = [], []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        if item.count(":") != 1:
            raise ConfigError(f"{where}: table entries are 'time: value', got {item!r}")
        t, v = item.split(":")
        times.append(_float(t, where))
        values.append(_float(v, where))
    try:
        return sim.Signal(tuple(times), tuple(values))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _words(text):
    return tuple(w for w in re.split(r"[,\s]+", text.strip()) if w)


# raw text -> sections ----------------------------------------------------------

def _line_numbers(text):
    """``{(section, key): line}`` and ``{section: line}`` for error messages."""
    keys, sections = {}, {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            sections.setdefault(section, n)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", s)
        if m and section is not None and not line[:1].isspace():
            keys.setdefault((section, m.group(1).strip()), n)
    return keys, sections


def _read_raw(text, source):
    cp = configparser.ConfigParser(strict=True, interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
                                   empty_lines_in_values=False)
    cp.optionxform = str  # keys are case-sensitive (T vs t, Theta_hat0)
    try:
        cp.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate key '{exc.option}' in [{exc.section}]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: key outside any [section]") from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else "?"
        raise ConfigError(f"{source}:{lineno}: cannot parse line") from None
    lines, sec_lines = _line_numbers(text)
    raw = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}:{sec_lines.get(sec, '?')}: unknown section [{sec}]; "
                              f"known sections: {', '.join(SCHEMA)}")
        raw[sec] = {}
        for key, value in cp.items(sec, raw=True):
            where = f"{source}:{lines.get((sec, key), '?')}: [{sec}] {key}"
            if sec == "sweep":
                target = key.split(".", 1)
                if len(target) != 2 or target[0] not in SCHEMA or target[1] not in SCHEMA[target[0]] \
                        or target[0] == "sweep":
                    raise ConfigError(f"{where}: sweep keys are 'section.key' naming a known setting")
            elif key not in SCHEMA[sec]:
                raise ConfigError(f"{where}: unknown key; [{sec}] accepts {', '.join(SCHEMA[sec])}")
            if not value.strip():
                raise ConfigError(f"{where}: empty value")
            raw[sec][key] = (value.strip(), where)
    return raw


# sections -> RunConfig ---------------------------------------------------------

def _get(raw, sec, key):
    return raw.get(sec, {}).get(key)


def _coefficients(raw):
    coef = raw.get("coefficients", {})
    mach = raw.get("machine", {})
    if coef:
        missing = [k for k in COEFFICIENT_KEYS + ("x_qp",) if k not in coef]
        if missing:
            raise ConfigError(f"[coefficients] is missing {', '.join(missing)}")
        vals = {k: _float(*coef[k]) for k in COEFFICIENT_KEYS}
        x_qp = _float(*coef["x_qp"])
        x_dp = _float(*mach["x_dp"]) if "x_dp" in mach else None
        try:
            c = DerivedCoefficients(**vals)
        except InvalidParametersError as exc:
            raise ConfigError(f"[coefficients]: {exc}") from None
        return c, x_qp, x_dp
    if mach:
        missing = [k for k in SCHEMA["machine"] if k not in mach and k != "omega0"]
        if missing:
            raise ConfigError(f"[machine] is missing {', '.join(missing)}")
        vals = {k: _float(*v) for k, v in mach.items()}
        try:
            p = MachineParams(**vals)
            return derive_coefficients(p), p.x_qp, p.x_dp
        except InvalidParametersError as exc:
            raise ConfigError(f"[machine]: {exc}") from None
    raise ConfigError("no machine description: give [coefficients] (a0, b0, a1, b1, c1, a2, b2, x_qp) "
                      "or [machine] (D, H, T_d0p, T_q0p, x_d, x_dp, x_q, x_qp)")


def _gain_list(raw, sec, scale=1.0):
    v = _get(raw, sec, "gamma")
    if v is None:
        return ()
    return tuple(scale * g for g in _floats(*v))


def _scenario(raw):
    sc = raw.get("scenario", {})
    missing = [k for k in REQUIRED["scenario"] if k not in sc]
    if missing:
        raise ConfigError(f"[scenario] is missing required key(s): {', '.join(missing)}")
    coeffs, x_qp, x_dp = _coefficients(raw)
    kw = dict(
        coeffs=coeffs,
        x_qp=x_qp,
        x_dp=x_dp,
        h=_float(*sc["h"]),
        T=_float(*sc["T"]),
        x0=PlantState(*_floats(*sc["x0"], n=4)),
        label=sc["label"][0] if "label" in sc else "run",
    )
    for name in ("u1", "u2", "y1", "y2"):
        v = _get(raw, "inputs", name)
        if v is not None:
            kw[name] = _signal(*v)

    obs = raw.get("observers", {})
    if "enabled" in obs:
        names = _words(obs["enabled"][0])
        if names == ("none",):
            names = ()
        bad = set(names) - set(sim.OBSERVERS)
        if bad:
            raise ConfigError(f"{obs['enabled'][1]}: unknown observer(s) {sorted(bad)}; "
                              f"choose from {', '.join(sim.OBSERVERS)} or 'none'")
        kw["observers"] = names
    for key in ("x1_mode", "estimator_step"):
        if key in obs:
            kw[key] = obs[key][0]
    for key, n in (("theta_hat0", 2), ("Theta_hat0", 5), ("x34_hat0", 2)):
        if key in obs:
            kw[key] = _floats(*obs[key], n=n)
    if "gradient_offset" in obs:
        kw["gradient_offset"] = _float(*obs["gradient_offset"])

    d = raw.get("drem", {})
    if "filters" in d:
        try:
            kw["filters"] = drem.FilterBank(_floats(*d["filters"], n=4))
        except ValueError as exc:
            raise ConfigError(f"{d['filters'][1]}: {exc}") from None
    scale = _float(*d["gamma_scale"]) if "gamma_scale" in d else 1.0
    if scale <= 0:
        raise ConfigError(f"{d['gamma_scale'][1]}: must be positive")
    kw["drem_gains"] = _gain_list(raw, "drem", scale)
    kw["overparam_gains"] = _gain_list(raw, "overparam")
    kw["gradient_gains"] = _gain_list(raw, "gradient")
    for sec in ("drem", "overparam", "gradient"):
        v = _get(raw, sec, "gamma")
        if v is not None and any(g <= 0 for g in kw[f"{sec}_gains"]):
            raise ConfigError(f"{v[1]}: gains must be positive")
    try:
        return sim.Scenario(**kw)
    except ValueError as exc:
        raise ConfigError(f"[scenario]: {exc}") from None


def _build(raw, source):
    if not raw:
        raise ConfigError(f"{source}: empty config; required: [scenario] with "
                          f"{', '.join(REQUIRED['scenario'])} plus [coefficients] or [machine], "
                          "or a [verify] section naming suites")
    has_verify = "suites" in raw.get("verify", {})
    scenario = _scenario(raw) if ("scenario" in raw or not has_verify) else None

    out = raw.get("output", {})
    columns = _words(out["columns"][0].replace(",", " ")) if "columns" in out else ()
    figures = _bool(*out["figures"]) if "figures" in out else True
    output_dir = out["dir"][0] if "dir" in out else "fluxobs_out"

    rep = raw.get("report", {})
    ropts = ReportOptions(
        threshold=_float(*rep["threshold"]) if "threshold" in rep else 1e-3,
        hold=_float(*rep["hold"]) if "hold" in rep else 0.5,
        settle=_float(*rep["settle"]) if "settle" in rep else None,
    )
    if ropts.threshold <= 0 or ropts.hold < 0:
        raise ConfigError("[report] threshold must be positive and hold non-negative")

    ver = raw.get("verify", {})

    def _int(key, default):
        if key not in ver:
            return default
        v = _float(*ver[key])
        if v != int(v) or v < 0:
            raise ConfigError(f"{ver[key][1]}: expected a non-negative integer")
        return int(v)

    vopts = VerifyOptions(
        suites=_words(ver["suites"][0]) if "suites" in ver else (),
        samples=_int("samples", 10_000),
        matrices=_int("matrices", 1_000),
        seed=_int("seed", 0),
        bound=_float(*ver["bound"]) if "bound" in ver else 10.0,
    )
    from .verify import SUITES  # local import: verify depends on this module
    bad = [s for s in vopts.suites if s not in SUITES]
    if bad:
        raise ConfigError(f"{ver['suites'][1]}: unknown suite(s) {bad}; known: {', '.join(SUITES)}")

    sweep = []
    for key, (value, where) in raw.get("sweep", {}).items():
        sec, name = key.split(".", 1)
        alts = tuple(a.strip() for a in value.split("|") if a.strip())
        if not alts:
            raise ConfigError(f"{where}: no alternatives (separate them with '|')")
        sweep.append((sec, name, alts))

    return RunConfig(scenario=scenario, output_dir=output_dir, columns=columns, figures=figures,
                     report=ropts, verify=vopts, sweep=tuple(sweep), raw=raw, source=source)


def parse_config(text, source="<string>") -> RunConfig:
    """Parse and validate configuration text."""
    return _build(_read_raw(text, source), source)


def preset_path(name):
    return resources.files("fluxobs") / "presets" / f"{name}.ini"


def load_config(name_or_path) -> RunConfig:
    """Load a config file, or a shipped preset by bare name."""
    p = Path(name_or_path)
    if not p.exists() and str(name_or_path) in PRESETS:
        res = preset_path(str(name_or_path))
        return parse_config(res.read_text(), source=f"preset:{name_or_path}")
    try:
        text = p.read_text()
    except OSError as exc:
        known = ", ".join(PRESETS)
        raise ConfigError(f"cannot read config {str(p)!r} ({exc.strerror}); presets: {known}") from None
    return parse_config(text, source=str(p))


def expand_sweep(cfg: RunConfig):
    """Cartesian product of the ``[sweep]`` alternatives as ``(tag, RunConfig)`` pairs."""
    if not cfg.sweep:
        return [(cfg.label, cfg)]
    out = []
    choices = [alts for _, _, alts in cfg.sweep]
    for combo in itertools.product(*choices):
        raw = {sec: dict(keys) for sec, keys in cfg.raw.items() if sec != "sweep"}
        parts = []
        for (sec, key, _), value in zip(cfg.sweep, combo):
            raw.setdefault(sec, {})[key] = (value, f"[sweep] {sec}.{key}")
            parts.append(f"{sec}.{key}={value}")
        tag = _slug(f"{cfg.label}__" + "__".join(parts))
        if "scenario" in raw:
            raw["scenario"]["label"] = (tag, "[sweep] label")
        sub = _build(raw, f"{cfg.source} ({', '.join(parts)})")
        out.append((tag, replace(sub, sweep=())))
    return out


def _slug(text):
    return re.sub(r"[^A-Za-z0-9_.+=-]+", "_", text)
