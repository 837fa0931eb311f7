"""Quadruped model parameters and generalized-coordinate conventions.

Coordinates (18): torso position (x, y, z), torso orientation as yaw-pitch-
roll Euler angles (world Z-Y-X), then three joint angles per leg in the leg
order LH, LF, RF, RH: hip abduction (about x), hip flexion (about y), knee
flexion (about y). Velocities are the time derivatives of these coordinates.

Parameters load from a JSON config file; the packaged ``data/a1_like.json``
holds A1-class defaults. All masses in kg, lengths in m, angles in rad.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

LEG_ORDER = ("LH", "LF", "RF", "RH")
NQ = 18
NU = 12
NV = 18

# q index helpers
IDX_POS = slice(0, 3)
IDX_EULER = slice(3, 6)      # yaw, pitch, roll
IDX_JOINTS = slice(6, 18)
IDX_X, IDX_Y, IDX_Z = 0, 1, 2
IDX_YAW, IDX_PITCH, IDX_ROLL = 3, 4, 5


def leg_joint_slice(leg: str) -> slice:
    i = LEG_ORDER.index(leg)
    return slice(6 + 3 * i, 9 + 3 * i)


def leg_signs(leg: str) -> tuple[float, float]:
    """(fore/hind, left/right) signs: +x fore, +y left."""
    sx = 1.0 if leg in ("LF", "RF") else -1.0
    sy = 1.0 if leg in ("LH", "LF") else -1.0
    return sx, sy


@dataclass(frozen=True)
class LinkParams:
    mass: float
    inertia: np.ndarray          # 3x3, in the link frame at its joint
    length: float
    com_offset: float            # distance from joint toward the distal end

    def __post_init__(self):
        if self.mass < 0:
            raise ValueError("link mass must be nonnegative")
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape == (3,):
            inertia = np.diag(inertia)
        if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T):
            raise ValueError("link inertia must be a symmetric 3x3 matrix")
        object.__setattr__(self, "inertia", inertia)


@dataclass(frozen=True)
class RobotModel:
    """Immutable quadruped parameters; see module docstring for conventions."""

    torso_mass: float
    torso_inertia: np.ndarray
    hip_x: float
    hip_y: float
    hip_link: LinkParams
    upper_link: LinkParams
    lower_link: LinkParams
    gravity: float = 9.81
    friction_coefficient: float = 0.6
    joint_limits: dict = field(default_factory=dict)
    velocity_limit: float = 21.0
    torque_limit: float = 33.5
    phase_duration_min: float = 0.02
    phase_duration_max: float = 0.6
    torso_limits: dict = field(default_factory=dict)
    condition_bound: float = 1e14

    def __post_init__(self):
        if self.torso_mass <= 0:
            raise ValueError("torso mass must be positive")
        inertia = np.asarray(self.torso_inertia, dtype=float)
        if inertia.shape == (3,):
            inertia = np.diag(inertia)
        eig = np.linalg.eigvalsh(inertia)
        if not np.all(eig > 0):
            raise ValueError("torso inertia must be positive definite")
        object.__setattr__(self, "torso_inertia", inertia)
        if self.friction_coefficient <= 0:
            raise ValueError("friction coefficient must be positive")
        for lo, hi in self.joint_limits.values():
            if not lo < hi:
                raise ValueError("joint limit box is empty")
        if not 0 < self.phase_duration_min < self.phase_duration_max:
            raise ValueError("phase duration box is empty")

    @property
    def total_mass(self) -> float:
        legs = self.hip_link.mass + self.upper_link.mass + self.lower_link.mass
        return self.torso_mass + 4.0 * legs

    @property
    def weight(self) -> float:
        return self.total_mass * self.gravity

    def hip_offset(self, leg: str) -> np.ndarray:
        sx, sy = leg_signs(leg)
        return np.array([sx * self.hip_x, sy * self.hip_y, 0.0])

    def joint_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) bounds for the 12 joint coordinates."""
        lo, hi = np.zeros(12), np.zeros(12)
        for i, _ in enumerate(LEG_ORDER):
            for j, name in enumerate(("abduction", "hip", "knee")):
                lo[3 * i + j], hi[3 * i + j] = self.joint_limits[name]
        return lo, hi

    def q_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(lower, upper) bounds for all 18 coordinates."""
        tl = self.torso_limits
        lo, hi = np.empty(NQ), np.empty(NQ)
        lo[IDX_X] = lo[IDX_Y] = tl["xy"][0]
        hi[IDX_X] = hi[IDX_Y] = tl["xy"][1]
        lo[IDX_Z], hi[IDX_Z] = tl["z"]
        lo[IDX_YAW], hi[IDX_YAW] = tl["yaw"]
        lo[IDX_PITCH], hi[IDX_PITCH] = tl["pitch"]
        lo[IDX_ROLL], hi[IDX_ROLL] = tl["roll"]
        lo[IDX_JOINTS], hi[IDX_JOINTS] = self.joint_bounds()
        return lo, hi

    def qd_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        tl = self.torso_limits
        lim = np.empty(NQ)
        lim[IDX_POS] = tl["linear_rate"]
        lim[IDX_EULER] = tl["angular_rate"]
        lim[IDX_JOINTS] = self.velocity_limit
        return -lim, lim

    @classmethod
    def from_dict(cls, cfg: dict) -> "RobotModel":
        def link(section):
            return LinkParams(
                mass=float(section["mass"]),
                inertia=np.asarray(section["inertia"], dtype=float),
                length=float(section["length"]),
                com_offset=float(section["com_offset"]),
            )

        torso = cfg["torso"]
        return cls(
            torso_mass=float(torso["mass"]),
            torso_inertia=np.asarray(torso["inertia"], dtype=float),
            hip_x=float(torso["hip_x"]),
            hip_y=float(torso["hip_y"]),
            hip_link=link(cfg["hip_link"]),
            upper_link=link(cfg["upper_link"]),
            lower_link=link(cfg["lower_link"]),
            gravity=float(cfg.get("gravity", 9.81)),
            friction_coefficient=float(cfg.get("friction_coefficient", 0.6)),
            joint_limits={k: tuple(v) for k, v in cfg["joint_limits"].items()},
            velocity_limit=float(cfg.get("velocity_limit", 21.0)),
            torque_limit=float(cfg.get("torque_limit", 33.5)),
            phase_duration_min=float(cfg["phase_duration"]["min"]),
            phase_duration_max=float(cfg["phase_duration"]["max"]),
            torso_limits=dict(cfg["torso_limits"]),
            condition_bound=float(cfg.get("condition_bound", 1e14)),
        )

    @classmethod
    def from_file(cls, path) -> "RobotModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def default(cls, **overrides) -> "RobotModel":
        text = resources.files("gallop.data").joinpath("a1_like.json").read_text()
        cfg = json.loads(text)
        cfg.update(overrides)
        return cls.from_dict(cfg)


@dataclass
class RobotState:
    """Generalized coordinates and velocities, serialized as a 36-vector."""

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qd = np.asarray(self.qd, dtype=float)
        if self.q.shape != (NQ,) or self.qd.shape != (NQ,):
            raise ValueError(f"state must be two {NQ}-vectors")
        if not (np.isfinite(self.q).all() and np.isfinite(self.qd).all()):
            raise ValueError("state entries must be finite")

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.qd])

    @classmethod
    def from_array(cls, x) -> "RobotState":
        x = np.asarray(x, dtype=float)
        if x.shape != (2 * NQ,):
            raise ValueError(f"flat state must have length {2 * NQ}")
        return cls(q=x[:NQ].copy(), qd=x[NQ:].copy())
