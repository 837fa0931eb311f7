"""Command-line interface.

Verbs: gaits-list, classify, diagram, optimize, sweep, rollout, report.
A shared JSON config file supplies model parameters, mesh, solver options,
and the sweep grid; command-line flags override file values, which override
built-in defaults. Exit codes: 0 success, 1 domain errors (infeasible or
invalid input), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import GallopError
from .hybrid import StrideTrajectory, rollout_trajectory, system_for
from .model import RobotModel
from .report import emit_reports
from .solver import SolveOptions, solve
from .sweep import SweepConfig, SweepResult, sweep
from .taxonomy import FootfallSequence, classify, enumerate_gallops, find_template, phase_lags
from .transcription import (MeshConfig, audit_constraints, cost_of_transport,
                            extract_trajectory, initial_guess, transcribe)


def _load_config(path):
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _build_model(cfg: dict) -> RobotModel:
    if "model" in cfg:
        base = json.loads(
            __import__("importlib.resources", fromlist=["files"])
            .files("gallop.data").joinpath("a1_like.json").read_text())
        base.update(cfg["model"])
        return RobotModel.from_dict(base)
    return RobotModel.default()


def _build_mesh(cfg: dict, args) -> MeshConfig:
    kw = dict(cfg.get("mesh", {}))
    if getattr(args, "mesh", None):
        kw["points_per_domain"] = args.mesh
    if getattr(args, "scheme", None):
        kw["scheme"] = args.scheme
    return MeshConfig(**kw)


def _build_solver(cfg: dict, args) -> SolveOptions:
    kw = dict(cfg.get("solver", {}))
    if getattr(args, "tol", None):
        kw["constraint_tolerance"] = args.tol
    if getattr(args, "budget", None):
        kw["time_limit"] = args.budget
    if getattr(args, "verbose", False):
        kw["verbosity"] = 1
    return SolveOptions(**kw)


def _emit(args, payload: dict, table: str):
    if getattr(args, "format", "table") == "json":
        print(json.dumps(payload, indent=1, sort_keys=True))
    else:
        print(table, end="")


def cmd_gaits_list(args, cfg):
    templates = enumerate_gallops(args.leading)
    rows = []
    for t in templates:
        sched = ", ".join("".join(sorted(c)) if c else "flight"
                          for c in t.schedule.contact_sets)
        rows.append({"name": t.name, "category": t.label.category,
                     "footfall": t.label.footfall_type,
                     "leading": t.label.leading_foot,
                     "flight_phases": t.flight_count(),
                     "contact_sets": sched})
    width = max(len(r["name"]) for r in rows)
    lines = [f"{'name':<{width}}  flights  contact sets"]
    for r in rows:
        lines.append(f"{r['name']:<{width}}  {r['flight_phases']:^7d}  {r['contact_sets']}")
    _emit(args, {"templates": rows}, "\n".join(lines) + "\n")
    return 0


def cmd_classify(args, cfg):
    with open(args.sequence) as f:
        seq = FootfallSequence.from_json(f.read())
    try:
        label = classify(seq)
    except GallopError as exc:
        print(f"not a gallop: {exc}", file=sys.stderr)
        return 1
    m = phase_lags(seq)
    payload = {
        "category": label.category,
        "footfall_type": label.footfall_type,
        "leading_foot": label.leading_foot,
        "name": label.name,
        "duty_factor": m.duty_factor,
        "foreleg_lag": m.foreleg_lag,
        "hindleg_lag": m.hindleg_lag,
        "fore_hind_lag": m.fore_hind_lag,
    }
    table = (f"{label.name}\n  duty factor  {m.duty_factor:.4f}\n"
             f"  foreleg lag  {m.foreleg_lag:+.4f}\n"
             f"  hindleg lag  {m.hindleg_lag:+.4f}\n"
             f"  fore-hind    {m.fore_hind_lag:+.4f}\n")
    _emit(args, payload, table)
    return 0


def cmd_diagram(args, cfg):
    from .diagram import render_diagram, schedule_summary
    if args.sequence:
        with open(args.sequence) as f:
            seq = FootfallSequence.from_json(f.read())
    else:
        seq = find_template(args.gait).sequence
    art = render_diagram(seq)
    print(art.text)
    print(schedule_summary(seq))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "gait_diagram.svg")
        with open(path, "w") as f:
            f.write(art.svg)
        print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_optimize(args, cfg):
    model = _build_model(cfg)
    mesh = _build_mesh(cfg, args)
    opts = _build_solver(cfg, args)
    template = find_template(args.gait)
    problem = transcribe(template, model, args.speed, mesh)
    x0 = initial_guess(template, model, args.speed, mesh, problem=problem)
    res = solve(problem, x0, opts)
    print(f"status: {res.status} (outer {res.iterations}, "
          f"{res.wall_time:.1f}s)", file=sys.stderr)
    if not res.converged:
        print(f"solve failed: {res.status}: {res.message}", file=sys.stderr)
        return 1
    traj = extract_trajectory(problem, res.x)
    traj.meta["status"] = res.status
    cot = cost_of_transport(traj, model)
    traj.meta["cot"] = cot
    report = audit_constraints(problem, res.x)
    traj.meta["audit"] = {k: v for k, v in report.items() if k != "all_passed"}
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"trajectory_{args.gait}_{args.speed:g}.json")
    with open(path, "w") as f:
        f.write(traj.to_json())
    if args.csv:
        with open(path.replace(".json", ".csv"), "w") as f:
            f.write(traj.to_csv())
    print(f"CoT {cot:.4f}  stride {traj.stride_duration:.3f} s  "
          f"audit {'pass' if report['all_passed'] else 'FAIL'}")
    print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_sweep(args, cfg):
    model = _build_model(cfg)
    kw = dict(cfg.get("sweep", {}))
    if args.speeds:
        kw["speeds"] = [float(v) for v in args.speeds.split(",")]
    if args.seed_speed:
        kw["seed_speed"] = args.seed_speed
    if args.gaits:
        kw["templates"] = args.gaits.split(",")
    if args.jobs:
        kw["jobs"] = args.jobs
    kw["mesh"] = _build_mesh(cfg, args)
    kw["solver"] = _build_solver(cfg, args)
    config = SweepConfig(**kw)
    result = sweep(model, config)
    written = emit_reports(result, args.out,
                           rotation_speeds=cfg.get("rotation_speeds", (1.0, 5.0)))
    print(f"wrote {len(written)} files under {args.out}")
    return 0


def cmd_rollout(args, cfg):
    model = _build_model(cfg)
    with open(args.trajectory) as f:
        traj = StrideTrajectory.from_json(f.read())
    name = traj.meta.get("template")
    if not name:
        print("trajectory file lacks a template name", file=sys.stderr)
        return 1
    system = system_for(model, name)
    out = rollout_trajectory(system, traj)
    breaches = [b for d in out.domains for b in d.breaches]
    print(f"periodicity residual: {out.periodicity_residual:.3e}")
    print(f"breaches: {len(breaches)}")
    for b in breaches[:10]:
        print(f"  t={b.time:.4f}s {b.kind} {b.leg} value={b.value:.3e}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "rollout.json")
        with open(path, "w") as f:
            f.write(out.to_json())
        print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_report(args, cfg):
    with open(args.result) as f:
        result = SweepResult.from_dict(json.load(f))
    written = emit_reports(result, args.out,
                           rotation_speeds=cfg.get("rotation_speeds", (1.0, 5.0)))
    print(f"wrote {len(written)} files under {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gallop",
        description="Gallop gait taxonomy and minimum-CoT trajectory optimization")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="JSON config file", default=None)
    sub = p.add_subparsers(dest="verb", required=True)

    sp = sub.add_parser("gaits-list", help="enumerate the 16 gallop templates")
    sp.add_argument("--leading", choices=["FR", "FL"], default=None)
    sp.add_argument("--format", choices=["table", "json"], default="table")
    sp.set_defaults(fn=cmd_gaits_list)

    sp = sub.add_parser("classify", help="classify a footfall sequence JSON")
    sp.add_argument("--sequence", required=True, help="sequence JSON file")
    sp.add_argument("--format", choices=["table", "json"], default="table")
    sp.set_defaults(fn=cmd_classify)

    sp = sub.add_parser("diagram", help="render a Hildebrand gait diagram")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--sequence", help="sequence JSON file")
    g.add_argument("--gait", help="template name, e.g. G2-rotary-FR")
    sp.add_argument("--out", default=None, help="directory for the SVG")
    sp.set_defaults(fn=cmd_diagram)

    sp = sub.add_parser("optimize", help="optimize one gait at one speed")
    sp.add_argument("--gait", required=True)
    sp.add_argument("--speed", type=float, required=True)
    sp.add_argument("--out", default="out")
    sp.add_argument("--mesh", type=int, default=None, help="points per domain")
    sp.add_argument("--scheme", choices=["trapezoid", "hermite-simpson"],
                    default=None)
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--budget", type=float, default=None,
                    help="solver time limit in seconds")
    sp.add_argument("--csv", action="store_true", help="also write CSV samples")
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(fn=cmd_optimize)

    sp = sub.add_parser("sweep", help="speed sweep with continuation")
    sp.add_argument("--out", default="out")
    sp.add_argument("--speeds", default=None, help="comma-separated grid")
    sp.add_argument("--seed-speed", type=float, default=None)
    sp.add_argument("--gaits", default=None, help="comma-separated templates")
    sp.add_argument("--jobs", type=int, default=None)
    sp.add_argument("--mesh", type=int, default=None)
    sp.add_argument("--scheme", choices=["trapezoid", "hermite-simpson"],
                    default=None)
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--budget", type=float, default=None)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("rollout", help="open-loop validation of a trajectory")
    sp.add_argument("--trajectory", required=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_rollout)

    sp = sub.add_parser("report", help="re-emit reports from a sweep result")
    sp.add_argument("--result", required=True, help="sweep_result.json path")
    sp.add_argument("--out", default="out")
    sp.set_defaults(fn=cmd_report)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = {}
    try:
        cfg = _load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        return args.fn(args, cfg)
    except GallopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())
