"""Quadruped gallop taxonomy and minimum cost-of-transport gait optimization."""

from .taxonomy import (
    FootfallSequence,
    GaitLabel,
    GaitMetrics,
    GaitTemplate,
    PhaseSchedule,
    classify,
    duty_factor,
    enumerate_gallops,
    find_template,
    phase_lags,
    phase_schedule,
    sequence_from_metrics,
    transform,
)

__all__ = [
    "FootfallSequence",
    "GaitLabel",
    "GaitMetrics",
    "GaitTemplate",
    "PhaseSchedule",
    "classify",
    "duty_factor",
    "enumerate_gallops",
    "find_template",
    "phase_lags",
    "phase_schedule",
    "sequence_from_metrics",
    "transform",
]

__version__ = "0.1.0"
