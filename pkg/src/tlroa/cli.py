"""Command-line entry point: ``tlroa <subcommand> ...``.

Every subcommand that produces files writes them into ``--out`` together with
``manifest.json``; ``roa member`` prints its verdict as JSON on stdout.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from tlroa.config import ConfigError, fitted_network_dict, load_config
from tlroa.pipeline import (STAGES, ChecksumError, MissingArtifactError, RunManifest, dumps,
                            run_pipeline, sha256)
from tlroa.roa import configure_workers

DEFAULT_OUT = "tlroa-out"


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _names(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_config(p, out=True):
    p.add_argument("config", help="JSON configuration file")
    p.add_argument("--network", help="fitted network JSON (used when the config has no network section)")
    p.add_argument("--seed", type=int, help="override analysis.seed")
    p.add_argument("--dt", type=float, help="override analysis.dt (s)")
    p.add_argument("--horizon", type=float, help="override analysis.horizon (s)")
    if out:
        p.add_argument("--out", default=DEFAULT_OUT, help=f"output directory (default {DEFAULT_OUT})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tlroa", description=__doc__.splitlines()[0])
    from tlroa import __version__

    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--workers", type=int, help="integration threads (default: env TLROA_WORKERS)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the RL network equivalent to an impedance scan CSV")
    p.add_argument("scan", help="scan CSV (f_hz, re_z11, im_z11, ..., im_z22), ohm")
    p.add_argument("--f-center", type=float, default=50.0)
    p.add_argument("--half-width", type=float, default=5.0)
    p.add_argument("--f-corner", type=float)
    p.add_argument("--out", default=DEFAULT_OUT)

    for name, text in (("loadflow", "solve the operating point"),
                       ("lyap", "Lyapunov matrix, ellipsoid and boundary samples")):
        _add_config(sub.add_parser(name, help=text))

    roa = sub.add_parser("roa", help="time-limited region of attraction")
    rsub = roa.add_subparsers(dest="roa_command", required=True)
    p = rsub.add_parser("build", help="reverse-integrate the boundary cloud")
    _add_config(p)
    p.add_argument("--samples", type=int, help="override analysis.n_samples")
    p = rsub.add_parser("member", help="membership of a single state (JSON on stdout)")
    _add_config(p, out=False)
    p.add_argument("--state", type=_floats, required=True, help="x1,x3,y1,y3")
    p.add_argument("--shifted", action="store_true",
                   help="state is relative to the operating point (default absolute)")
    p = rsub.add_parser("slice", help="hyperplane slice of the cloud")
    _add_config(p)
    p.add_argument("--normal", type=_floats, help="a,b,c,d")
    p.add_argument("--intercept", type=float)
    p.add_argument("--thickness", type=float)
    p.add_argument("--columns", type=_names, help="cloud columns the normal refers to")
    p = rsub.add_parser("project", help="2-D coordinate projection of the cloud")
    _add_config(p)
    p.add_argument("--axes", type=_names, help="e.g. x1,x2")

    p = sub.add_parser("cct", help="clearing-time estimate for a fault scenario")
    _add_config(p)
    p.add_argument("--t-on", type=float)
    p.add_argument("--duration", type=float, help="maximum fault duration (s)")
    p.add_argument("--v-fault", type=float, help="retained voltage during the fault (pu)")

    p = sub.add_parser("run", help="full pipeline")
    _add_config(p)
    p.add_argument("--stages", type=_names, default=list(STAGES),
                   help=f"comma-separated subset of {','.join(STAGES)}")
    return ap


def _config(args):
    cfg = load_config(args.config, network_file=args.network)
    return cfg.with_overrides(seed=args.seed, dt=args.dt, horizon=args.horizon)


def _cmd_fit(args):
    from tlroa.netfit import FitWindow, fit_rl, read_scan_csv

    t0 = time.perf_counter()
    window = FitWindow(args.f_center, args.half_width, args.f_corner)
    net = fit_rl(read_scan_csv(args.scan), window)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = fitted_network_dict(net, args.scan, window)
    path = out / "network.json"
    path.write_text(dumps(doc))
    scan_hash = sha256(args.scan)
    m = RunManifest(config_hash=scan_hash, version=_ver(), seed=0, subcommand="fit",
                    inputs=[str(args.scan)],
                    outputs={"network.json": {"stage": "fit", "sha256": sha256(path),
                                              "config": scan_hash}},
                    stages=["fit"], wall_time_s=round(time.perf_counter() - t0, 3))
    (out / "manifest.json").write_text(dumps(m.to_dict()))
    print(path)


def _ver():
    from tlroa import __version__

    return __version__


def _cmd_member(args):
    from tlroa.loadflow import solve_equilibrium
    from tlroa.lyapunov import build_initial_roa, linearize, solve_lyapunov
    from tlroa.roa import TlRoa, is_member

    cfg = _config(args)
    if len(args.state) != 4:
        raise ConfigError("--state needs 4 values: x1,x3,y1,y3")
    an = cfg.analysis
    eq = solve_equilibrium(cfg.plant)
    e = build_initial_roa(solve_lyapunov(linearize(cfg.plant, eq, an.coupling).a_full), an.level)
    roa = TlRoa(an.horizon, np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0, dtype=int), e, eq,
                cfg.plant, an.dt)
    m = is_member(np.asarray(args.state), roa, absolute=not args.shifted, escape=an.escape)
    t = float(m.time[0])
    print(dumps({"state": args.state, "coordinates": "shifted" if args.shifted else "absolute",
                 "inside": bool(m.inside[0]), "entry_time": None if np.isnan(t) else t,
                 "horizon": an.horizon}), end="")


def _run(args, stages, subcommand, cfg=None):
    cfg = cfg or _config(args)
    m = run_pipeline(cfg, args.out, stages, subcommand)
    for name in sorted(m.outputs):
        if m.outputs[name]["stage"] in stages:
            print(Path(args.out) / name)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_workers(args.workers)
    try:
        if args.command == "fit":
            _cmd_fit(args)
        elif args.command in ("loadflow", "lyap"):
            _run(args, [args.command], args.command)
        elif args.command == "roa":
            rc = args.roa_command
            if rc == "member":
                _cmd_member(args)
            elif rc == "build":
                cfg = _config(args).with_overrides(n_samples=args.samples)
                _run(args, ["roa"], "roa build", cfg)
            elif rc == "slice":
                cfg = _config(args).with_overrides(
                    slice_normal=args.normal, slice_intercept=args.intercept,
                    slice_thickness=args.thickness, slice_columns=args.columns)
                _run(args, ["slice"], "roa slice", cfg)
            else:
                cfg = _config(args).with_overrides(project_axes=args.axes)
                _run(args, ["project"], "roa project", cfg)
        elif args.command == "cct":
            cfg = _config(args).with_overrides("schedule", t_on=args.t_on,
                                               duration_max=args.duration, v_fault=args.v_fault)
            _run(args, ["cct"], "cct", cfg)
        else:
            _run(args, args.stages, "run")
    except (ConfigError, MissingArtifactError, ChecksumError, ValueError, OSError,
            ArithmeticError, RuntimeError) as exc:
        print(f"tlroa: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
