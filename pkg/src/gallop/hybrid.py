"""Hybrid stride execution: per-domain continuous dynamics plus reset maps.

A stride is a cyclic sequence of contact-set domains separated by touchdown
(impact, velocity jump) and lift-off (contact drop, velocity continuous)
events. Validation rollouts integrate each domain with an adaptive
Runge-Kutta method at the scheduled durations; guard values (swing-foot
height before touchdown, normal force before lift-off) are recorded as
diagnostics rather than used for event triggering, because open-loop gallops
are unstable.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import compute_batch, impact_map, stance_forward_dynamics
from .errors import IntegrationFailure
from .model import LEG_ORDER, NQ, RobotModel
from .taxonomy import GaitTemplate, find_template


@dataclass(frozen=True)
class StrideSystem:
    """A gait template bound to a robot model for simulation."""

    model: RobotModel
    template: GaitTemplate

    @property
    def domains(self) -> list[tuple[str, ...]]:
        return [tuple(sorted(c, key=LEG_ORDER.index))
                for c in self.template.schedule.contact_sets]

    @property
    def events(self) -> list[tuple[str, str]]:
        """(leg, kind) starting each domain; events[0] closes the cycle."""
        return list(self.template.schedule.events)

    def __len__(self) -> int:
        return len(self.template.schedule.domains)


@dataclass
class Breach:
    """A unilateral-constraint violation observed during integration."""

    time: float
    kind: str        # "negative_normal_force" | "ground_penetration"
    leg: str
    value: float


@dataclass
class DomainTrajectory:
    """Sampled trajectory of one continuous domain."""

    contact_legs: tuple[str, ...]
    time: np.ndarray                 # (N,)
    q: np.ndarray                    # (N,18)
    qd: np.ndarray                   # (N,18)
    u: np.ndarray                    # (N,12)
    forces: dict[str, np.ndarray]    # leg -> (N,3)
    breaches: list[Breach] = field(default_factory=list)
    guards: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return float(self.time[-1] - self.time[0])


@dataclass
class StrideTrajectory:
    """One full stride: per-domain samples plus stride-level metadata."""

    domains: list[DomainTrajectory]
    event_times: list[float]
    stride_duration: float
    average_speed: float
    meta: dict = field(default_factory=dict)
    periodicity_residual: float | None = None

    def states(self) -> np.ndarray:
        """All samples stacked as (sum N, 36) in time order."""
        return np.vstack([np.hstack([d.q, d.qd]) for d in self.domains])

    def times(self) -> np.ndarray:
        return np.concatenate([d.time for d in self.domains])

    def euler_angles_deg(self) -> np.ndarray:
        """(sum N, 3) torso yaw/pitch/roll in degrees."""
        return np.degrees(np.vstack([d.q[:, 3:6] for d in self.domains]))

    def forward_displacement(self) -> float:
        return float(self.domains[-1].q[-1, 0] - self.domains[0].q[0, 0])

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "stride_duration": self.stride_duration,
            "average_speed": self.average_speed,
            "event_times": list(self.event_times),
            "periodicity_residual": self.periodicity_residual,
            "domains": [
                {
                    "contact": list(d.contact_legs),
                    "time": d.time.tolist(),
                    "q": d.q.tolist(),
                    "qd": d.qd.tolist(),
                    "u": d.u.tolist(),
                    "forces": {leg: f.tolist() for leg, f in d.forces.items()},
                    "breaches": [vars(b) for b in d.breaches],
                    "guards": d.guards,
                }
                for d in self.domains
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "StrideTrajectory":
        domains = []
        for dd in doc["domains"]:
            domains.append(DomainTrajectory(
                contact_legs=tuple(dd["contact"]),
                time=np.asarray(dd["time"], dtype=float),
                q=np.asarray(dd["q"], dtype=float),
                qd=np.asarray(dd["qd"], dtype=float),
                u=np.asarray(dd["u"], dtype=float),
                forces={leg: np.asarray(f, dtype=float)
                        for leg, f in dd.get("forces", {}).items()},
                breaches=[Breach(**b) for b in dd.get("breaches", [])],
                guards=dd.get("guards", {}),
            ))
        return cls(
            domains=domains,
            event_times=list(doc.get("event_times", [])),
            stride_duration=float(doc["stride_duration"]),
            average_speed=float(doc["average_speed"]),
            meta=doc.get("meta", {}),
            periodicity_residual=doc.get("periodicity_residual"),
        )

    @classmethod
    def from_json(cls, text: str) -> "StrideTrajectory":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        """One row per sample: domain, time, q(18), qd(18), u(12), forces(12)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = (["domain", "time"]
                  + [f"q{i}" for i in range(NQ)]
                  + [f"qd{i}" for i in range(NQ)]
                  + [f"u{i}" for i in range(12)]
                  + [f"f_{leg}_{ax}" for leg in LEG_ORDER for ax in "xyz"])
        writer.writerow(header)
        for di, d in enumerate(self.domains):
            for k in range(len(d.time)):
                f = np.zeros((4, 3))
                for leg, arr in d.forces.items():
                    f[LEG_ORDER.index(leg)] = arr[k]
                writer.writerow(
                    [di, f"{d.time[k]:.9g}"]
                    + [f"{v:.9g}" for v in d.q[k]]
                    + [f"{v:.9g}" for v in d.qd[k]]
                    + [f"{v:.9g}" for v in d.u[k]]
                    + [f"{v:.9g}" for v in f.ravel()])
        return buf.getvalue()


def _torque_interp(profile):
    """Normalize a torque profile to a callable t -> (12,)."""
    if callable(profile):
        return profile
    t_knots, u_knots = profile
    t_knots = np.asarray(t_knots, dtype=float)
    u_knots = np.asarray(u_knots, dtype=float)

    def fn(t):
        out = np.empty(12)
        for j in range(12):
            out[j] = np.interp(t, t_knots, u_knots[:, j])
        return out

    return fn


def integrate_domain(system: StrideSystem, domain_index: int, state,
                     torque_profile, duration: float, n_samples: int = 25,
                     rtol: float = 1e-6, atol: float = 1e-8,
                     t_offset: float = 0.0) -> DomainTrajectory:
    """Integrate one continuous domain with pinned stance feet.

    ``torque_profile`` is a callable of local time or a (times, values)
    pair interpolated linearly. Normal forces are recorded at each sample;
    negative normal force or swing-foot ground penetration is flagged as a
    breach with the crossing time interpolated between samples.
    """
    model = system.model
    legs = system.domains[domain_index]
    state = np.asarray(state, dtype=float)
    u_fn = _torque_interp(torque_profile)

    pins = {}
    if legs:
        batch = compute_batch(model, state[None, :NQ], state[None, NQ:],
                              need_mass=False)
        for leg in legs:
            pins[leg] = batch.foot_pos[0, LEG_ORDER.index(leg)].copy()

    def rhs(t, x):
        qdd, _ = stance_forward_dynamics(
            model, x[:NQ], x[NQ:], u_fn(t), pins,
            pos_tol=np.inf, vel_tol=np.inf)
        return np.concatenate([x[NQ:], qdd])

    sol = solve_ivp(rhs, (0.0, duration), state, method="RK45",
                    rtol=rtol, atol=atol, dense_output=True)
    if not sol.success:
        raise IntegrationFailure(
            f"domain {domain_index} integration failed: {sol.message}")

    ts = np.linspace(0.0, duration, n_samples)
    X = sol.sol(ts).T
    U = np.vstack([u_fn(t) for t in ts])
    forces = {leg: np.zeros((n_samples, 3)) for leg in legs}
    swing = [leg for leg in LEG_ORDER if leg not in legs]
    heights = {leg: np.zeros(n_samples) for leg in swing}
    for k, t in enumerate(ts):
        _, lam = stance_forward_dynamics(
            model, X[k, :NQ], X[k, NQ:], U[k], pins,
            pos_tol=np.inf, vel_tol=np.inf)
        for leg in legs:
            forces[leg][k] = lam[leg]
        if swing:
            batch = compute_batch(model, X[k, :NQ][None], X[k, NQ:][None],
                                  need_mass=False)
            for leg in swing:
                heights[leg][k] = batch.foot_pos[0, LEG_ORDER.index(leg), 2]

    breaches = []
    for leg in legs:
        fz = forces[leg][:, 2]
        for k in range(n_samples):
            if fz[k] < -1e-9:
                t_cross = ts[k]
                if k > 0 and fz[k - 1] >= 0.0:
                    t_cross = ts[k - 1] + (ts[k] - ts[k - 1]) * fz[k - 1] / (fz[k - 1] - fz[k])
                breaches.append(Breach(time=t_offset + t_cross,
                                       kind="negative_normal_force",
                                       leg=leg, value=float(fz[k])))
                break
    for leg in swing:
        z = heights[leg]
        for k in range(1, n_samples - 1):
            if z[k] < -1e-9:
                breaches.append(Breach(time=t_offset + ts[k],
                                       kind="ground_penetration",
                                       leg=leg, value=float(z[k])))
                break

    return DomainTrajectory(
        contact_legs=tuple(legs),
        time=t_offset + ts,
        q=X[:, :NQ], qd=X[:, NQ:], u=U,
        forces=forces, breaches=breaches,
    )


def guard_value(system: StrideSystem, state, event_index: int, u=None) -> float:
    """Guard scalar for a schedule event evaluated at a state.

    Touchdown: height of the impacting swing foot (event fires at zero from
    above). Lift-off: normal force of the departing foot under the contact
    set of the domain preceding the event, with torque ``u`` (default zero).
    """
    model = system.model
    events = system.events
    leg, kind = events[event_index % len(events)]
    state = np.asarray(state, dtype=float)
    if kind == "TD":
        batch = compute_batch(model, state[None, :NQ], state[None, NQ:],
                              need_mass=False)
        return float(batch.foot_pos[0, LEG_ORDER.index(leg), 2])
    prev_domain = (event_index - 1) % len(events)
    legs = system.domains[prev_domain]
    u = np.zeros(12) if u is None else np.asarray(u, dtype=float)
    _, lam = stance_forward_dynamics(model, state[:NQ], state[NQ:], u, list(legs),
                                     pos_tol=np.inf, vel_tol=np.inf)
    return float(lam[leg][2])


def rollout_stride(system: StrideSystem, initial_state, torque_profiles,
                   durations, n_samples: int = 25, rtol: float = 1e-6,
                   atol: float = 1e-8) -> StrideTrajectory:
    """Integrate a full stride applying resets at each boundary.

    Touchdown boundaries apply the plastic impact map for the incoming
    domain's contact set; lift-offs drop the contact with velocities
    unchanged. The periodicity residual compares the stride-closing state
    (after the final touchdown reset of the cyclic boundary) with the
    initial state over all coordinates except forward position.
    """
    durations = [float(T) for T in durations]
    if len(durations) != len(system) or len(torque_profiles) != len(system):
        raise ValueError("need one torque profile and duration per domain")
    state = np.asarray(initial_state, dtype=float).copy()
    domains = []
    event_times = []
    t = 0.0
    for d in range(len(system)):
        event_times.append(t)
        seg = integrate_domain(system, d, state, torque_profiles[d],
                               durations[d], n_samples=n_samples,
                               rtol=rtol, atol=atol, t_offset=t)
        # guard diagnostics for the event closing this domain
        nxt = (d + 1) % len(system)
        leg, kind = system.events[nxt]
        end_state = np.concatenate([seg.q[-1], seg.qd[-1]])
        seg.guards = {"closing_event": f"{leg}-{kind}",
                      "value": guard_value(system, end_state, nxt, seg.u[-1])}
        domains.append(seg)
        t += durations[d]
        state = end_state
        if kind == "TD":
            qd_plus, _ = impact_map(system.model, state[:NQ], state[NQ:],
                                    list(system.domains[nxt]))
            state = np.concatenate([state[:NQ], qd_plus])

    x0 = np.asarray(initial_state, dtype=float)
    diff = state - x0
    diff = np.delete(diff, 0)  # ignore forward position
    residual = float(np.linalg.norm(diff))

    stride_duration = sum(durations)
    disp = domains[-1].q[-1, 0] - domains[0].q[0, 0]
    return StrideTrajectory(
        domains=domains,
        event_times=event_times,
        stride_duration=stride_duration,
        average_speed=float(disp / stride_duration),
        periodicity_residual=residual,
    )


def rollout_trajectory(system: StrideSystem, traj: StrideTrajectory,
                       rtol: float = 1e-6, atol: float = 1e-8) -> StrideTrajectory:
    """Re-integrate an optimizer trajectory open loop from its first sample."""
    profiles = []
    durations = []
    for d in traj.domains:
        t_local = d.time - d.time[0]
        profiles.append((t_local, d.u))
        durations.append(d.time[-1] - d.time[0])
    x0 = np.concatenate([traj.domains[0].q[0], traj.domains[0].qd[0]])
    out = rollout_stride(system, x0, profiles, durations, rtol=rtol, atol=atol)
    out.meta = dict(traj.meta, rollout=True)
    return out


def system_for(model: RobotModel, template_or_name) -> StrideSystem:
    if isinstance(template_or_name, GaitTemplate):
        return StrideSystem(model=model, template=template_or_name)
    return StrideSystem(model=model, template=find_template(str(template_or_name)))
