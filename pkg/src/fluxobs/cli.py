"""Command line front end: ``fluxobs run|sweep|verify|report``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import OUTPUT_ENV, PRESETS, RunConfig, expand_sweep, load_config
from .errors import FluxObsError
from .report import (build_report, compare_report, compare_rows, emit_csv, load_report,
                     read_csv, save_report)
from .sim import run_scenario
from .verify import SUITES, run_suite

log = logging.getLogger("fluxobs")


def _write_compare(reports, outdir):
    text = compare_report(reports)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "compare.txt").write_text(text)
    rows = compare_rows(reports)
    with open(outdir / "compare.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["run"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return text


def _run_verify(cfg, outdir):
    lines = []
    ok = True
    for suite in cfg.verify.suites:
        for name, chk in run_suite(suite, cfg):
            lines.append(f"[{name}] {chk.line()}")
            ok &= chk.passed
    if lines:
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "verify.txt").write_text("\n".join(lines) + "\n")
        print("\n".join(lines))
    return ok


def run_one(cfg: RunConfig, outdir, figures=True, engine="compiled"):
    """Simulate one config into ``outdir``; returns the report (or None)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if cfg.scenario is None:
        return None
    traj = run_scenario(cfg.scenario, engine=engine)
    emit_csv(traj, outdir / "trajectory.csv", cfg.columns)
    rep = build_report(traj, cfg.report.threshold, cfg.report.hold)
    save_report(rep, outdir / "report.json")
    if figures and cfg.figures:
        from .plots import render_figures
        from .report import column_registry
        render_figures(column_registry(traj), outdir / "figures")
    return rep


def _sweep_entry(args):
    tag, cfg, outdir, figures = args
    return run_one(cfg, Path(outdir) / tag, figures)


def cmd_run(a):
    cfg = load_config(a.config)
    outdir = Path(cfg.resolved_output_dir(a.output)) / cfg.label
    rep = run_one(cfg, outdir, not a.no_figures, a.engine)
    if rep is not None:
        print(_write_compare([rep], outdir), end="")
        print(f"wrote {outdir}")
    return 0 if _run_verify(cfg, outdir) else 1


def cmd_sweep(a):
    cfg = load_config(a.config)
    base = Path(cfg.resolved_output_dir(a.output)) / cfg.label
    entries = expand_sweep(cfg)
    jobs = [(tag, sub, str(base), not a.no_figures) for tag, sub in entries]
    if a.jobs == 1 or len(jobs) == 1:
        reports = [_sweep_entry(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=a.jobs) as ex:
            reports = list(ex.map(_sweep_entry, jobs))
    reports = [r for r in reports if r is not None]
    if reports:
        print(_write_compare(reports, base), end="")
    print(f"wrote {len(entries)} run(s) under {base}")
    return 0


def cmd_verify(a):
    cfg = load_config(a.config) if a.config else None
    failed = 0
    for name, chk in run_suite(a.suite, cfg):
        print(f"[{name}] {chk.line()}")
        failed += not chk.passed
    print(f"{'FAILED' if failed else 'OK'}: {failed} failing check(s)")
    return 1 if failed else 0


def cmd_report(a):
    root = Path(a.dir)
    if not root.is_dir():
        raise FluxObsError(f"not a directory: {root}")
    paths = sorted(root.rglob("report.json"))
    if not paths:
        raise FluxObsError(f"no report.json found under {root}")
    reports = [load_report(p) for p in paths]
    print(_write_compare(reports, root), end="")
    if not a.no_figures:
        from .plots import render_figures
        for p in paths:
            data = p.parent / "trajectory.csv"
            if data.exists():
                render_figures(read_csv(data), p.parent / "figures")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="fluxobs", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    out_help = f"output directory (overrides ${OUTPUT_ENV} and [output] dir)"
    r = sub.add_parser("run", help="simulate one config")
    r.add_argument("config", help=f"config file or preset name ({', '.join(PRESETS)})")
    r.add_argument("-o", "--output", help=out_help)
    r.add_argument("--no-figures", action="store_true")
    r.add_argument("--engine", choices=("compiled", "python"), default="compiled")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run the cartesian product of [sweep] alternatives")
    s.add_argument("config")
    s.add_argument("-o", "--output", help=out_help)
    s.add_argument("-j", "--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run a named check suite")
    v.add_argument("suite", choices=[*SUITES, "all"])
    v.add_argument("--config", help="config supplying the scenario and [verify] parameters")
    v.set_defaults(func=cmd_verify)

    rp = sub.add_parser("report", help="summarise the runs under a directory")
    rp.add_argument("dir")
    rp.add_argument("--no-figures", action="store_true")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except (FluxObsError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"fluxobs: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
