"""Speed sweeps with warm-start continuation per gait template.

Each template's chain starts with a cold solve at the seed speed; the sweep
then marches outward through the grid in both directions, warm-starting
every solve from the nearest converged neighbor. Two consecutive failed
speeds close a direction and fix that end of the template's feasible range.
Template chains are independent and may run in parallel processes; within a
chain the continuation is inherently sequential.
"""

from __future__ import annotations

import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingPair, SeedFailure
from .model import RobotModel
from .solver import SolveOptions, solve
from .taxonomy import GaitTemplate, enumerate_gallops, find_template
from .transcription import (MeshConfig, audit_constraints, cost_of_transport,
                            extract_trajectory, initial_guess, transcribe)


@dataclass
class SweepConfig:
    speeds: list = field(default_factory=lambda: [round(0.5 + 0.1 * i, 1)
                                                  for i in range(62)])
    seed_speed: float = 2.0
    templates: list = field(default_factory=lambda: [t.name for t in
                                                     enumerate_gallops("FR")])
    mesh: MeshConfig = field(default_factory=MeshConfig)
    solver: SolveOptions = field(default_factory=SolveOptions)
    failure_run: int = 2          # consecutive failures that close a direction
    jobs: int = 1

    def __post_init__(self):
        self.speeds = sorted(float(v) for v in self.speeds)
        if any(v <= 0 for v in self.speeds):
            raise ValueError("sweep speeds must be positive")
        if not any(abs(v - self.seed_speed) < 1e-9 for v in self.speeds):
            raise ValueError("seed speed must lie on the speed grid")


@dataclass
class SolveRecord:
    template: str
    speed: float
    status: str
    objective: float | None = None
    cot: float | None = None
    stride_duration: float | None = None
    phase_durations: list | None = None
    euler_ranges_deg: dict | None = None
    iterations: int = 0
    wall_time: float = 0.0
    max_violation: float | None = None
    warm_started: bool = False
    trajectory: dict | None = None

    @property
    def converged(self) -> bool:
        return self.status in ("Optimal", "Feasible")


@dataclass
class SweepResult:
    records: dict               # (template, speed) -> SolveRecord
    feasible_ranges: dict       # template -> (lo, hi) or None
    config: dict

    def record(self, template: str, speed: float) -> SolveRecord:
        return self.records[(template, float(speed))]

    def converged_speeds(self, template: str) -> list:
        return sorted(v for (t, v), r in self.records.items()
                      if t == template and r.converged)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "feasible_ranges": {t: list(r) if r else None
                                for t, r in self.feasible_ranges.items()},
            "records": [{k: v for k, v in vars(r).items()
                         if not k.startswith("_")}
                        for r in self.records.values()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepResult":
        records = {}
        for rd in doc["records"]:
            rec = SolveRecord(**rd)
            records[(rec.template, float(rec.speed))] = rec
        ranges = {t: tuple(v) if v else None
                  for t, v in doc["feasible_ranges"].items()}
        return cls(records=records, feasible_ranges=ranges,
                   config=doc.get("config", {}))


def _euler_ranges(traj) -> dict:
    angles = traj.euler_angles_deg()
    names = ("yaw", "pitch", "roll")
    return {names[i]: [float(angles[:, i].min()), float(angles[:, i].max())]
            for i in range(3)}


def solve_single(model: RobotModel, template: GaitTemplate, speed: float,
                 mesh: MeshConfig, opts: SolveOptions, x_warm=None,
                 keep_trajectory: bool = True) -> SolveRecord:
    """One transcribe-and-solve, optionally warm-started."""
    t0 = time.perf_counter()
    try:
        problem = transcribe(template, model, speed, mesh)
        if x_warm is not None and x_warm.shape == (problem.n,):
            x0 = x_warm
            warm = True
        else:
            x0 = initial_guess(template, model, speed, mesh, problem=problem)
            warm = False
        res = solve(problem, x0, opts)
    except Exception as exc:  # noqa: BLE001 - a failed speed must not kill the chain
        return SolveRecord(template=template.name, speed=speed,
                           status="Diverged", wall_time=time.perf_counter() - t0,
                           max_violation=None, trajectory=None,
                           warm_started=x_warm is not None,
                           objective=None)
    record = SolveRecord(
        template=template.name, speed=speed, status=res.status,
        objective=float(res.objective),
        iterations=res.iterations,
        wall_time=time.perf_counter() - t0,
        max_violation=float(res.kkt["feasibility"]),
        warm_started=warm,
    )
    if res.converged:
        traj = extract_trajectory(problem, res.x)
        traj.meta["status"] = res.status
        record.cot = float(cost_of_transport(traj, model))
        traj.meta["cot"] = record.cot
        record.stride_duration = float(traj.stride_duration)
        record.phase_durations = [float(d.duration) for d in traj.domains]
        record.euler_ranges_deg = _euler_ranges(traj)
        record.trajectory = traj.to_dict() if keep_trajectory else None
        record._x = res.x
    return record


def _sweep_template(model: RobotModel, template: GaitTemplate,
                    config: SweepConfig, log=None) -> tuple:
    """Continuation chain for one template; returns (records, range)."""
    speeds = config.speeds
    seed_idx = min(range(len(speeds)),
                   key=lambda i: abs(speeds[i] - config.seed_speed))
    records = {}

    def note(msg):
        if log:
            print(msg, file=sys.stderr, flush=True)

    rec = solve_single(model, template, speeds[seed_idx], config.mesh,
                       config.solver)
    records[(template.name, speeds[seed_idx])] = rec
    note(f"[{template.name}] seed {speeds[seed_idx]:.2f} m/s -> {rec.status} "
         f"({rec.wall_time:.0f}s)")
    if not rec.converged:
        raise SeedFailure(f"{template.name}: seed solve at "
                          f"{speeds[seed_idx]} m/s ended {rec.status}")

    lo_ok = hi_ok = speeds[seed_idx]
    for direction in (1, -1):
        x_prev = getattr(rec, "_x", None)
        failures = 0
        i = seed_idx + direction
        while 0 <= i < len(speeds):
            r = solve_single(model, template, speeds[i], config.mesh,
                             config.solver, x_warm=x_prev)
            records[(template.name, speeds[i])] = r
            note(f"[{template.name}] {speeds[i]:.2f} m/s -> {r.status} "
                 f"({r.wall_time:.0f}s, warm={r.warm_started})")
            if r.converged:
                failures = 0
                x_prev = getattr(r, "_x", x_prev)
                if direction > 0:
                    hi_ok = speeds[i]
                else:
                    lo_ok = speeds[i]
            else:
                failures += 1
                if failures >= config.failure_run:
                    break
            i += direction
    return records, (lo_ok, hi_ok)


def _sweep_template_job(args):
    model_cfg, template_name, config = args
    model = RobotModel.from_dict(model_cfg) if isinstance(model_cfg, dict) \
        else model_cfg
    template = find_template(template_name)
    try:
        return template_name, _sweep_template(model, template, config, log=True), None
    except SeedFailure as exc:
        return template_name, None, str(exc)


def sweep(model: RobotModel, config: SweepConfig) -> SweepResult:
    """Run the continuation sweep for every configured template.

    A template whose seed solve fails is reported with an empty feasible
    range; the sweep continues for the others.
    """
    all_records = {}
    ranges = {}
    jobs = [(model, name, config) for name in config.templates]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            outputs = list(pool.map(_sweep_template_job, jobs))
    else:
        outputs = [_sweep_template_job(j) for j in jobs]
    for name, payload, error in outputs:
        if error is not None:
            ranges[name] = None
            print(f"sweep: {error}", file=sys.stderr)
            continue
        records, rng = payload
        all_records.update(records)
        ranges[name] = rng
    # fill explicit non-attempted rows so the report covers the full grid
    for name in config.templates:
        for v in config.speeds:
            all_records.setdefault((name, v),
                                   SolveRecord(template=name, speed=v,
                                               status="NotAttempted"))
    cfg = {
        "speeds": config.speeds,
        "seed_speed": config.seed_speed,
        "templates": config.templates,
        "points_per_domain": config.mesh.points_per_domain,
        "scheme": config.mesh.scheme,
    }
    return SweepResult(records=all_records, feasible_ranges=ranges, config=cfg)


def compare_footfall(result: SweepResult) -> dict:
    """Rotary-vs-transverse CoT gaps per category over common speeds.

    The relative gap at a speed is |CoT_rot - CoT_trans| / min(CoT_rot,
    CoT_trans). Raises MissingPair when no category has both footfall types.
    """
    by_cat = {}
    for (name, speed), rec in result.records.items():
        if not rec.converged or rec.cot is None:
            continue
        category, footfall, _ = name.split("-")
        by_cat.setdefault(category, {}).setdefault(footfall, {})[speed] = rec.cot

    out = {"categories": {}, "max_gap": 0.0, "mean_gap": None}
    gaps_all = []
    for category, sides in sorted(by_cat.items()):
        if "rotary" not in sides or "transverse" not in sides:
            continue
        common = sorted(set(sides["rotary"]) & set(sides["transverse"]))
        gaps = []
        for v in common:
            a, b = sides["rotary"][v], sides["transverse"][v]
            gaps.append(abs(a - b) / max(min(a, b), 1e-12))
        if gaps:
            out["categories"][category] = {
                "speeds": common,
                "gaps": gaps,
                "mean_gap": float(np.mean(gaps)),
                "max_gap": float(np.max(gaps)),
            }
            gaps_all.extend(gaps)
    if not out["categories"]:
        raise MissingPair("no category has both rotary and transverse results")
    out["mean_gap"] = float(np.mean(gaps_all))
    out["max_gap"] = float(np.max(gaps_all))
    return out


def crossover_speeds(result: SweepResult) -> dict:
    """Grid speeds where the CoT ordering between template pairs flips."""
    names = sorted({t for (t, _) in result.records})
    out = {}
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            speeds = sorted(set(result.converged_speeds(a))
                            & set(result.converged_speeds(b)))
            flips = []
            prev = None
            for v in speeds:
                da = result.record(a, v).cot - result.record(b, v).cot
                sign = 1 if da > 0 else (-1 if da < 0 else 0)
                if prev is not None and sign != 0 and prev != 0 and sign != prev:
                    flips.append(v)
                if sign != 0:
                    prev = sign
            if flips:
                out[f"{a}|{b}"] = flips
    return out
