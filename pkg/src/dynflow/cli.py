"""Command-line entry point.

Subcommands: validate, simulate, certify, transform, report.  The config
file is the sole source of scenario truth; flags only override scalars.
Exit codes: 0 certified/ok, 1 refuted or validation failed, 2 inconclusive,
>2 usage or runtime errors.
"""
from __future__ import annotations

import argparse
import datetime
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, certify as certify_mod, entflow, io, mmspace, \
    propagate, scenarios, transport
from .certify import Budget
from .propagate import MeasureVec, SchemeConfig

USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(USAGE_EXIT)


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _parse_n(value: str) -> float:
    return math.inf if value in ("inf", "Inf", "infinity") else float(value)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("DYNFLOW_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _initial_field(spec, kind: str, t: float) -> np.ndarray:
    name, _, arg = kind.partition(":")
    pos = mmspace.node_positions(spec, t)
    extent = max(float(pos[-1]), 1e-300)
    if name == "ones":
        return np.ones(spec.n)
    if name == "sin":
        k = int(arg or 1)
        return np.sin(2.0 * np.pi * k * pos / extent)
    if name == "cos":
        k = int(arg or 1)
        return np.cos(np.pi * k * pos / extent)
    if name == "indicator":
        node = int(arg or 0)
        u = np.zeros(spec.n)
        u[node] = 1.0
        return u
    raise ValueError(f"unknown field kind {kind!r}")


def _initial_measure(spec, kind: str, t: float) -> MeasureVec:
    name, _, arg = kind.partition(":")
    if name == "delta":
        return MeasureVec.point_mass(spec.n, int(arg or 0), t)
    if name == "uniform":
        return MeasureVec.from_weights(mmspace.node_measures(spec, t), t)
    if name == "blob":
        parts = arg.split(",")
        center = int(parts[0])
        sigma = float(parts[1]) if len(parts) > 1 else 0.05 * float(
            np.max(mmspace.metric_at(spec, t).dist))
        d = mmspace.metric_at(spec, t).dist[center]
        return MeasureVec.from_weights(np.exp(-d * d / (2 * sigma * sigma)), t)
    raise ValueError(f"unknown measure kind {kind!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    spec = scenarios.from_config(_load_config(args.config))
    samples = np.linspace(spec.t_min, spec.t_max, args.samples)
    report = mmspace.validate_regularity(spec, samples)
    report["declared_L"] = spec.L
    report["declared_C"] = spec.C
    report["scenario"] = spec.name
    out = io.dumps_json(report)
    if args.out:
        Path(args.out).write_text(out)
    sys.stdout.write(out)
    return 0 if report["ok"] else 1


def cmd_simulate(args) -> int:
    spec = scenarios.from_config(_load_config(args.config))
    cfg = SchemeConfig(method=args.scheme, n_steps=args.steps)
    s, t = args.time_from, args.time_to
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.field:
        u0 = _initial_field(spec, args.field, s)
        _, traj = propagate.heat_forward(spec, u0, s, t, cfg,
                                         return_trajectory=True)
        io.write_trajectory_csv(outdir / "trajectory.csv",
                                traj.times, traj.values)
        kind = {"kind": "field", "initial": args.field}
    else:
        mu = _initial_measure(spec, args.measure, t)
        _, traj = propagate.dual_flow(spec, mu, t, s, cfg,
                                      return_trajectory=True)
        io.write_trajectory_csv(outdir / "trajectory.csv",
                                traj.times, traj.values)
        kind = {"kind": "measure", "initial": args.measure,
                "mass_per_knot": [float(np.sum(v)) for v in traj.values]}
    manifest = {"command": "simulate", "config": args.config,
                "scenario": spec.name, "from": s, "to": t,
                "scheme": str(cfg.method.value), "steps": cfg.n_steps,
                "outputs": ["trajectory.csv"], "tool_version": __version__}
    manifest.update(kind)
    io.write_json(outdir / "manifest.json", manifest)
    return 0


def cmd_certify(args) -> int:
    config = _load_config(args.config)
    spec = scenarios.from_config(config)
    budget = Budget.from_level(args.budget)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    start = datetime.datetime.now(datetime.timezone.utc).isoformat()
    report = certify_mod.certify(spec, K=args.K, N=args.N, budget=budget,
                                 seed=args.seed, n_workers=_threads(args))
    end = datetime.datetime.now(datetime.timezone.utc).isoformat()

    io.write_json(outdir / "certreport.json", report.to_dict())
    rows = [(e.condition, e.min_margin, e.tol["total"], e.ok, e.refuted)
            for e in report.entries]
    io.write_csv(outdir / "summary.csv",
                 ["condition", "min_margin", "tol", "ok", "refuted"], rows)
    manifest = {"command": "certify", "config": args.config,
                "scenario": spec.name, "K": args.K,
                "N": "inf" if math.isinf(args.N) else args.N,
                "seed": args.seed, "budget_level": args.budget,
                "outputs": ["certreport.json", "summary.csv"],
                "tool_version": __version__,
                "started": start, "finished": end}
    io.write_json(outdir / "manifest.json", manifest)
    sys.stdout.write(f"{spec.name}: {report.verdict}\n")
    return report.exit_code


def cmd_transform(args) -> int:
    config = _load_config(args.config)
    if abs(args.K) < 1e-12:
        out_config = config  # the rescaling degenerates to the identity
    else:
        out_config = {"transform": {"K": args.K, "C": args.C}, "base": config}
        scenarios.from_config(out_config)  # validate the mapped window
    io.write_json(args.out, out_config)
    return 0


def cmd_report(args) -> int:
    rundir = Path(args.rundir)
    manifest_path = rundir / "manifest.json"
    if not manifest_path.exists():
        sys.stderr.write(f"error: no manifest.json in {rundir}\n")
        return USAGE_EXIT
    manifest = json.loads(manifest_path.read_text())
    sys.stdout.write(f"run: {manifest.get('command')} on "
                     f"{manifest.get('scenario')}\n")
    report_path = rundir / "certreport.json"
    if report_path.exists():
        rep = json.loads(report_path.read_text())
        sys.stdout.write(f"verdict: {rep['verdict']}\n")
        for e in rep["entries"]:
            sys.stdout.write(
                f"  condition {e['condition']}: min margin "
                f"{io.fmt_float(e['min_margin'])} "
                f"(tol {io.fmt_float(e['tol']['total'])}, ok={e['ok']})\n")
        rows = [(e["condition"], e["min_margin"], e["tol"]["total"],
                 e["ok"], e["refuted"]) for e in rep["entries"]]
        io.write_csv(rundir / "report_table.csv",
                     ["condition", "min_margin", "tol", "ok", "refuted"], rows)
    for name in manifest.get("outputs", []):
        sys.stdout.write(f"output: {name}\n")
    return 0


def main(argv=None) -> int:
    parser = _Parser(prog="dynflow",
                     description="heat flow, transport, and curvature-flow "
                                 "certification on discretized "
                                 "time-dependent metric measure spaces")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check the declared regularity constants")
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("simulate", help="run the heat flow or the dual flow")
    p.add_argument("config")
    p.add_argument("--from", dest="time_from", type=float, required=True)
    p.add_argument("--to", dest="time_to", type=float, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--field", default=None,
                       help="initial field: ones | sin:k | cos:k | indicator:node")
    group.add_argument("--measure", default=None,
                       help="terminal measure: delta:node | uniform | blob:node,sigma")
    p.add_argument("--scheme", default="crank_nicolson",
                   choices=["crank_nicolson", "implicit_euler"])
    p.add_argument("--steps", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("certify", help="run the condition suite")
    p.add_argument("config")
    p.add_argument("--K", type=float, default=0.0)
    p.add_argument("--N", type=_parse_n, default=math.inf)
    p.add_argument("--budget", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("transform", help="apply the curvature-shift rescaling")
    p.add_argument("config")
    p.add_argument("--K", type=float, required=True)
    p.add_argument("--C", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_transform)

    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("rundir")
    p.set_defaults(fn=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 65


if __name__ == "__main__":
    sys.exit(main())
