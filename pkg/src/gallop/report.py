"""Sweep reports: CSV table, CoT-vs-speed chart, torso-rotation charts.

All outputs are deterministic: rendering identical results produces
byte-identical files. Rotary templates draw solid, transverse dashed,
with one fixed color per gallop category.
"""

from __future__ import annotations

import csv
import io
import json
import os

import numpy as np

from .errors import IoFailure
from .hybrid import StrideTrajectory
from .svg import LineChart
from .sweep import SweepResult, compare_footfall, crossover_speeds

CATEGORY_COLORS = {"G0": "#c8a000", "GG": "#c03030", "GE": "#2e8b2e", "G2": "#2050c0"}

CSV_COLUMNS = [
    "template", "category", "footfall", "leading", "speed", "status",
    "cot", "objective", "stride_duration", "phase_durations",
    "roll_min_deg", "roll_max_deg", "pitch_min_deg", "pitch_max_deg",
    "yaw_min_deg", "yaw_max_deg", "iterations", "wall_time_s", "max_violation",
]


def _fmt(v, digits=12):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.{digits}g}"
    return str(v)


def sweep_csv(result: SweepResult) -> str:
    """One row per (template, speed) over the full grid, fixed column order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for name in result.config.get("templates", []):
        category, footfall, leading = name.split("-")
        for speed in result.config.get("speeds", []):
            rec = result.record(name, speed)
            er = rec.euler_ranges_deg or {}
            roll = er.get("roll", [None, None])
            pitch = er.get("pitch", [None, None])
            yaw = er.get("yaw", [None, None])
            writer.writerow([
                name, category, footfall, leading, _fmt(speed), rec.status,
                _fmt(rec.cot), _fmt(rec.objective), _fmt(rec.stride_duration),
                ";".join(_fmt(d) for d in rec.phase_durations or []),
                _fmt(roll[0]), _fmt(roll[1]), _fmt(pitch[0]), _fmt(pitch[1]),
                _fmt(yaw[0]), _fmt(yaw[1]),
                rec.iterations, _fmt(round(rec.wall_time, 3)),
                _fmt(rec.max_violation),
            ])
    return buf.getvalue()


def cot_chart(result: SweepResult) -> str:
    """CoT vs speed, one curve per template; rotary solid, transverse dashed."""
    chart = LineChart(title="cost of transport vs speed",
                      x_label="speed [m/s]", y_label="CoT")
    for name in result.config.get("templates", []):
        category, footfall, _ = name.split("-")
        xs, ys = [], []
        for speed in result.converged_speeds(name):
            rec = result.record(name, speed)
            if rec.cot is not None:
                xs.append(speed)
                ys.append(rec.cot)
        if xs:
            chart.add_series(xs, ys, label=name,
                             color=CATEGORY_COLORS.get(category, "black"),
                             dashed=(footfall == "transverse"))
    return chart.to_string()


def rotation_chart(result: SweepResult, speed: float, angle: str) -> str | None:
    """One torso angle vs stride fraction at a given speed, curves per gait."""
    idx = {"yaw": 3, "pitch": 4, "roll": 5}[angle]
    chart = LineChart(title=f"torso {angle} at {speed:g} m/s",
                      x_label="stride fraction", y_label=f"{angle} [deg]")
    drew = False
    for name in result.config.get("templates", []):
        rec = result.records.get((name, float(speed)))
        if rec is None or not rec.converged or rec.trajectory is None:
            continue
        traj = StrideTrajectory.from_dict(rec.trajectory)
        ts = traj.times()
        frac = (ts - ts[0]) / max(traj.stride_duration, 1e-12)
        ang = np.degrees(traj.states()[:, idx])
        category, footfall, _ = name.split("-")
        chart.add_series(frac, ang, label=name,
                         color=CATEGORY_COLORS.get(category, "black"),
                         dashed=(footfall == "transverse"))
        drew = True
    return chart.to_string() if drew else None


def summary_json(result: SweepResult) -> str:
    doc = {
        "config": result.config,
        "feasible_ranges": {t: list(r) if r else None
                            for t, r in result.feasible_ranges.items()},
        "crossover_speeds": crossover_speeds(result),
    }
    try:
        doc["footfall_comparison"] = compare_footfall(result)
    except Exception:
        doc["footfall_comparison"] = None
    return json.dumps(doc, indent=1, sort_keys=True)


def emit_reports(result: SweepResult, out_dir, rotation_speeds=(1.0, 5.0)) -> list:
    """Write sweep.csv, cot_vs_speed.svg, rotation_<v>.svg, summary.json,
    and one trajectory_<template>_<speed>.json per converged solve.

    Returns the list of written paths. Raises IoFailure on write errors.
    """
    written = []

    def write(name, text):
        path = os.path.join(out_dir, name)
        try:
            with open(path, "w") as f:
                f.write(text)
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc
        written.append(path)

    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc

    write("sweep.csv", sweep_csv(result))
    write("cot_vs_speed.svg", cot_chart(result))
    for v in rotation_speeds:
        for angle in ("roll", "pitch", "yaw"):
            svg = rotation_chart(result, v, angle)
            if svg is not None:
                write(f"rotation_{angle}_{v:g}.svg", svg)
    write("summary.json", summary_json(result))
    write("sweep_result.json", json.dumps(result.to_dict(), indent=1,
                                          sort_keys=True))
    for (name, speed), rec in sorted(result.records.items()):
        if rec.converged and rec.trajectory is not None:
            write(f"trajectory_{name}_{speed:g}.json",
                  json.dumps(rec.trajectory, indent=1))
    return written
