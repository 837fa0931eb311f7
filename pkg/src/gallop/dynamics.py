"""Floating-base rigid-body dynamics for the quadruped model.

All quantities are computed from a batched forward pass over the kinematic
tree (torso plus four 3-link legs). For each body we track its world
rotation, center-of-mass position/velocity, angular velocity, and the
velocity-product accelerations (the accelerations obtained with all
generalized accelerations set to zero). Aggregating with body Jacobians
yields the mass matrix M(q) and the bias vector h(q, qd) = C(q, qd) + G(q)
of

    M(q) qdd + h(q, qd) = S u + sum_i J_i^T lambda_i

Single-state convenience wrappers sit on top of the batched kernels; the
transcription module calls the batched forms directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    IkFailure,
    InconsistentContact,
    RankDeficientContact,
    SingularConfiguration,
)
from .model import LEG_ORDER, NQ, IDX_JOINTS, RobotModel, RobotState, leg_joint_slice, leg_signs

_Z_HAT = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# batched rotation helpers
# ---------------------------------------------------------------------------

def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 0, 0] = 1.0
    R[..., 1, 1] = c
    R[..., 1, 2] = -s
    R[..., 2, 1] = s
    R[..., 2, 2] = c
    return R


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 1, 1] = 1.0
    R[..., 0, 0] = c
    R[..., 0, 2] = s
    R[..., 2, 0] = -s
    R[..., 2, 2] = c
    return R


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    R = np.zeros(a.shape + (3, 3))
    R[..., 2, 2] = 1.0
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    return R


def _mv(R, v):
    return np.einsum("...ij,...j->...i", R, v)


def _cross(a, b):
    """Cross product on (..., 3) arrays; faster than _cross for batches."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def euler_zyx_rotation(euler):
    """World rotation from yaw-pitch-roll angles (Z-Y-X convention)."""
    euler = np.asarray(euler, dtype=float)
    return _rot_z(euler[..., 0]) @ _rot_y(euler[..., 1]) @ _rot_x(euler[..., 2])


def euler_rate_map(euler):
    """Matrix E with world angular velocity = E @ [yaw_dot, pitch_dot, roll_dot]."""
    euler = np.asarray(euler, dtype=float)
    B = euler.shape[:-1]
    Rz = _rot_z(euler[..., 0])
    Rzy = Rz @ _rot_y(euler[..., 1])
    E = np.zeros(B + (3, 3))
    E[..., :, 0] = _Z_HAT
    E[..., :, 1] = Rz[..., :, 1]
    E[..., :, 2] = Rzy[..., :, 0]
    return E


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

@dataclass
class BodyKin:
    """World kinematics of one body evaluated over a batch."""

    name: str
    leg: int                  # -1 for torso
    depth: int                # number of chain joints supporting the body
    mass: float
    inertia: np.ndarray       # local 3x3
    R: np.ndarray             # (B,3,3)
    com: np.ndarray           # (B,3)
    v_com: np.ndarray         # (B,3)
    w: np.ndarray             # (B,3)
    a_com: np.ndarray         # (B,3) velocity-product linear acceleration
    alpha: np.ndarray         # (B,3) velocity-product angular acceleration


@dataclass
class ChainKin:
    """Forward-pass results: bodies, per-leg joint axes/origins, feet."""

    bodies: list
    E: np.ndarray             # (B,3,3) Euler-rate map
    r_b: np.ndarray           # (B,3)
    # per leg arrays indexed [B, leg, joint]
    axis_w: np.ndarray        # (B,4,3,3) world joint axes
    origin_w: np.ndarray      # (B,4,3,3) world joint origins
    foot_pos: np.ndarray      # (B,4,3)
    foot_vel: np.ndarray      # (B,4,3)
    foot_avp: np.ndarray      # (B,4,3) Jdot @ qd for each foot


def _leg_geometry(model: RobotModel, leg: str):
    sx, sy = leg_signs(leg)
    hip_off = np.array([sx * model.hip_x, sy * model.hip_y, 0.0])
    d2 = np.array([0.0, sy * model.hip_link.length, 0.0])
    d3 = np.array([0.0, 0.0, -model.upper_link.length])
    foot_off = np.array([0.0, 0.0, -model.lower_link.length])
    com_hip = np.array([0.0, sy * model.hip_link.com_offset, 0.0])
    com_up = np.array([0.0, 0.0, -model.upper_link.com_offset])
    com_low = np.array([0.0, 0.0, -model.lower_link.com_offset])
    return hip_off, (d2, d3), foot_off, (com_hip, com_up, com_low)


def forward_pass(model: RobotModel, Q: np.ndarray, QD: np.ndarray) -> ChainKin:
    """Batched tree kinematics with velocity-product accelerations."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    QD = np.atleast_2d(np.asarray(QD, dtype=float))
    B = Q.shape[0]

    r_b = Q[:, 0:3]
    euler = Q[:, 3:6]
    v_b = QD[:, 0:3]
    er = QD[:, 3:6]

    R_b = euler_zyx_rotation(euler)
    E = euler_rate_map(euler)
    c2 = E[:, :, 1]
    c3 = E[:, :, 2]
    w_b = er[:, 0:1] * _Z_HAT + er[:, 1:2] * c2 + er[:, 2:3] * c3
    alpha_b = (er[:, 1:2] * _cross(er[:, 0:1] * _Z_HAT, c2)
               + er[:, 2:3] * _cross(er[:, 0:1] * _Z_HAT + er[:, 1:2] * c2, c3))

    bodies = [BodyKin(
        name="torso", leg=-1, depth=0,
        mass=model.torso_mass, inertia=model.torso_inertia,
        R=R_b, com=r_b, v_com=v_b, w=w_b,
        a_com=np.zeros((B, 3)), alpha=alpha_b,
    )]

    axis_w = np.zeros((B, 4, 3, 3))
    origin_w = np.zeros((B, 4, 3, 3))
    foot_pos = np.zeros((B, 4, 3))
    foot_vel = np.zeros((B, 4, 3))
    foot_avp = np.zeros((B, 4, 3))

    link_params = (model.hip_link, model.upper_link, model.lower_link)
    axes_local = (np.array([1.0, 0.0, 0.0]),
                  np.array([0.0, 1.0, 0.0]),
                  np.array([0.0, 1.0, 0.0]))
    rot_fns = (_rot_x, _rot_y, _rot_y)

    for li, leg in enumerate(LEG_ORDER):
        hip_off, offsets, foot_off, coms = _leg_geometry(model, leg)
        qj = Q[:, 6 + 3 * li: 9 + 3 * li]
        qdj = QD[:, 6 + 3 * li: 9 + 3 * li]

        # joint 1 origin on the torso
        step = _mv(R_b, hip_off)
        o = r_b + step
        vo = v_b + _cross(w_b, step)
        ao = _cross(alpha_b, step) + _cross(w_b, _cross(w_b, step))
        R_p, w_p, al_p = R_b, w_b, alpha_b

        for j in range(3):
            a_w = _mv(R_p, axes_local[j])
            axis_w[:, li, j] = a_w
            origin_w[:, li, j] = o
            R_j = R_p @ rot_fns[j](qj[:, j])
            w_j = w_p + a_w * qdj[:, j:j + 1]
            al_j = al_p + _cross(w_p, a_w) * qdj[:, j:j + 1]

            c_world = _mv(R_j, coms[j])
            bodies.append(BodyKin(
                name=f"{leg.lower()}_{('hip', 'upper', 'lower')[j]}",
                leg=li, depth=j + 1,
                mass=link_params[j].mass, inertia=link_params[j].inertia,
                R=R_j,
                com=o + c_world,
                v_com=vo + _cross(w_j, c_world),
                w=w_j,
                a_com=ao + _cross(al_j, c_world)
                      + _cross(w_j, _cross(w_j, c_world)),
                alpha=al_j,
            ))

            if j < 2:
                step = _mv(R_j, offsets[j])
            else:
                step = _mv(R_j, foot_off)
            o_next = o + step
            vo_next = vo + _cross(w_j, step)
            ao_next = ao + _cross(al_j, step) + _cross(w_j, _cross(w_j, step))
            o, vo, ao = o_next, vo_next, ao_next
            R_p, w_p, al_p = R_j, w_j, al_j

        foot_pos[:, li] = o
        foot_vel[:, li] = vo
        foot_avp[:, li] = ao

    return ChainKin(bodies=bodies, E=E, r_b=r_b,
                    axis_w=axis_w, origin_w=origin_w,
                    foot_pos=foot_pos, foot_vel=foot_vel, foot_avp=foot_avp)


def _body_jacobians(kin: ChainKin, body: BodyKin):
    """Reduced CoM Jacobians (B,3,9): columns = base pos, base euler, leg joints."""
    B = body.com.shape[0]
    Jv = np.zeros((B, 3, 9))
    Jw = np.zeros((B, 3, 9))
    Jv[:, 0, 0] = Jv[:, 1, 1] = Jv[:, 2, 2] = 1.0
    rel = body.com - kin.r_b
    for i in range(3):
        Jv[:, :, 3 + i] = _cross(kin.E[:, :, i], rel)
        Jw[:, :, 3 + i] = kin.E[:, :, i]
    for j in range(body.depth):
        a = kin.axis_w[:, body.leg, j]
        Jv[:, :, 6 + j] = _cross(a, body.com - kin.origin_w[:, body.leg, j])
        Jw[:, :, 6 + j] = a
    return Jv, Jw


def _point_jacobian(kin: ChainKin, leg_index: int, point: np.ndarray) -> np.ndarray:
    """Full (B,3,18) world Jacobian of a point on a leg's lowest link."""
    B = point.shape[0]
    J = np.zeros((B, 3, NQ))
    J[:, 0, 0] = J[:, 1, 1] = J[:, 2, 2] = 1.0
    rel = point - kin.r_b
    for i in range(3):
        J[:, :, 3 + i] = _cross(kin.E[:, :, i], rel)
    for j in range(3):
        a = kin.axis_w[:, leg_index, j]
        J[:, :, 6 + 3 * leg_index + j] = _cross(a, point - kin.origin_w[:, leg_index, j])
    return J


def _scatter_cols(leg_index: int) -> np.ndarray:
    return np.array([0, 1, 2, 3, 4, 5,
                     6 + 3 * leg_index, 7 + 3 * leg_index, 8 + 3 * leg_index])


@dataclass
class DynamicsBatch:
    """Mass matrix, bias, and foot data for a batch of states."""

    M: np.ndarray           # (B,18,18)
    h: np.ndarray           # (B,18)
    foot_pos: np.ndarray    # (B,4,3)
    foot_vel: np.ndarray    # (B,4,3)
    foot_jac: np.ndarray    # (B,4,3,18)
    foot_avp: np.ndarray    # (B,4,3)
    potential: np.ndarray   # (B,)


def compute_batch(model: RobotModel, Q, QD, need_mass: bool = True,
                  need_feet: bool = True) -> DynamicsBatch:
    """Evaluate M, h, and foot kinematics over a batch of states.

    ``need_mass=False`` skips assembling M and ``need_feet=False`` skips the
    foot Jacobians; finite-difference sweeps use these to avoid dead work.
    """
    kin = forward_pass(model, Q, QD)
    B = kin.r_b.shape[0]
    g = model.gravity

    M = np.zeros((B, NQ, NQ)) if need_mass else np.zeros((0,))
    h = np.zeros((B, NQ))
    potential = np.zeros(B)

    for body in kin.bodies:
        Jv, Jw = _body_jacobians(kin, body)
        I_w = body.R @ body.inertia @ np.swapaxes(body.R, -1, -2)
        f = body.mass * (body.a_com + g * _Z_HAT)
        tau = _mv(I_w, body.alpha) + _cross(body.w, _mv(I_w, body.w))
        JvT = np.swapaxes(Jv, -1, -2)
        JwT = np.swapaxes(Jw, -1, -2)
        h9 = (JvT @ f[:, :, None] + JwT @ tau[:, :, None])[:, :, 0]
        cols = _scatter_cols(body.leg) if body.leg >= 0 else np.arange(9)
        h[:, cols] += h9
        potential += body.mass * g * body.com[:, 2]
        if need_mass:
            M9 = body.mass * (JvT @ Jv) + JwT @ (I_w @ Jw)
            M[:, cols[:, None], cols[None, :]] += M9

    if need_feet:
        foot_jac = np.zeros((B, 4, 3, NQ))
        for li in range(4):
            foot_jac[:, li] = _point_jacobian(kin, li, kin.foot_pos[:, li])
    else:
        foot_jac = np.zeros((0,))

    return DynamicsBatch(M=M, h=h, foot_pos=kin.foot_pos, foot_vel=kin.foot_vel,
                         foot_jac=foot_jac, foot_avp=kin.foot_avp, potential=potential)


# ---------------------------------------------------------------------------
# single-state API
# ---------------------------------------------------------------------------

def dynamics_terms(model: RobotModel, q, qd) -> tuple[np.ndarray, np.ndarray]:
    """Mass matrix M(q) and bias h(q, qd) = C(q, qd) + G(q).

    Raises SingularConfiguration when cond(M) exceeds the model bound.
    """
    out = compute_batch(model, np.asarray(q)[None, :], np.asarray(qd)[None, :])
    M, h = out.M[0], out.h[0]
    if np.linalg.cond(M) > model.condition_bound:
        raise SingularConfiguration("mass matrix condition number exceeds bound")
    return M, h


def foot_kinematics(model: RobotModel, q, qd, leg: str):
    """World foot position, velocity, and 3x18 Jacobian for one leg."""
    out = compute_batch(model, np.asarray(q)[None, :], np.asarray(qd)[None, :],
                        need_mass=False)
    li = LEG_ORDER.index(leg)
    return out.foot_pos[0, li], out.foot_vel[0, li], out.foot_jac[0, li]


def _contact_legs(contacts) -> list[str]:
    if hasattr(contacts, "keys"):
        legs = list(contacts.keys())
    else:
        legs = list(contacts)
    for leg in legs:
        if leg not in LEG_ORDER:
            raise ValueError(f"unknown leg {leg!r}")
    return sorted(legs, key=LEG_ORDER.index)


def _stack_contact(batch: DynamicsBatch, legs: list[str]):
    idx = [LEG_ORDER.index(leg) for leg in legs]
    J = batch.foot_jac[0, idx].reshape(3 * len(idx), NQ)
    jdqd = batch.foot_avp[0, idx].reshape(3 * len(idx))
    return J, jdqd


def _check_contact_rank(J: np.ndarray):
    if J.shape[0] == 0:
        return
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] < 1e-10 * max(1.0, sv[0]):
        raise RankDeficientContact("stacked contact Jacobian lost rank")


def stance_forward_dynamics(model: RobotModel, q, qd, u, contacts,
                            pos_tol: float = 1e-3, vel_tol: float = 1e-2):
    """Constrained accelerations and ground reaction forces in stance.

    ``contacts`` holds the stance legs, either as an iterable of leg names or
    a mapping leg -> pinned world position. Enforces the index-reduced DAE
    J qdd + Jdot qd = 0 for each stance foot; raises InconsistentContact if
    the current state violates the pin beyond tolerance.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    u = np.asarray(u, dtype=float)
    batch = compute_batch(model, q[None, :], qd[None, :])
    legs = _contact_legs(contacts)
    M, h = batch.M[0], batch.h[0]

    rhs_top = -h.copy()
    rhs_top[IDX_JOINTS] += u

    if not legs:
        qdd = np.linalg.solve(M, rhs_top)
        return qdd, {}

    if hasattr(contacts, "keys"):
        for leg in legs:
            pin = np.asarray(contacts[leg], dtype=float)
            pos = batch.foot_pos[0, LEG_ORDER.index(leg)]
            if np.linalg.norm(pos - pin) > pos_tol:
                raise InconsistentContact(
                    f"{leg} foot at {pos} violates pin {pin}")
    for leg in legs:
        vel = batch.foot_vel[0, LEG_ORDER.index(leg)]
        if np.linalg.norm(vel) > vel_tol:
            raise InconsistentContact(f"{leg} stance foot moving at {vel}")

    J, jdqd = _stack_contact(batch, legs)
    _check_contact_rank(J)
    nc = J.shape[0]
    A = np.zeros((NQ + nc, NQ + nc))
    A[:NQ, :NQ] = M
    A[:NQ, NQ:] = -J.T
    A[NQ:, :NQ] = J
    rhs = np.concatenate([rhs_top, -jdqd])
    sol = np.linalg.solve(A, rhs)
    qdd = sol[:NQ]
    lam = sol[NQ:]
    forces = {leg: lam[3 * i: 3 * i + 3] for i, leg in enumerate(legs)}
    return qdd, forces


def impact_map(model: RobotModel, q, qd_minus, new_contacts):
    """Plastic no-slip impact: post-impact velocities and impulses.

    Solves M (qd_plus - qd_minus) = sum J_i^T Lambda_i with J_i qd_plus = 0
    for every post-impact stance foot; the configuration is unchanged.
    """
    q = np.asarray(q, dtype=float)
    qd_minus = np.asarray(qd_minus, dtype=float)
    batch = compute_batch(model, q[None, :], qd_minus[None, :])
    legs = _contact_legs(new_contacts)
    M = batch.M[0]
    if not legs:
        return qd_minus.copy(), {}
    J, _ = _stack_contact(batch, legs)
    _check_contact_rank(J)
    nc = J.shape[0]
    A = np.zeros((NQ + nc, NQ + nc))
    A[:NQ, :NQ] = M
    A[:NQ, NQ:] = -J.T
    A[NQ:, :NQ] = J
    rhs = np.concatenate([M @ qd_minus, np.zeros(nc)])
    sol = np.linalg.solve(A, rhs)
    qd_plus = sol[:NQ]
    lam = sol[NQ:]
    impulses = {leg: lam[3 * i: 3 * i + 3] for i, leg in enumerate(legs)}
    return qd_plus, impulses


def total_energy(model: RobotModel, q, qd) -> tuple[float, float]:
    """(kinetic, potential) energy in joules."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    batch = compute_batch(model, q[None, :], qd[None, :])
    kinetic = 0.5 * qd @ batch.M[0] @ qd
    return float(kinetic), float(batch.potential[0])


# ---------------------------------------------------------------------------
# poses, inverse kinematics, equilibria
# ---------------------------------------------------------------------------

STAND_HIP_ANGLE = 0.7


def standing_state(model: RobotModel) -> RobotState:
    """Nominal standing pose: identity orientation, all feet on the ground.

    Hip flexion 0.7 rad and knee -1.4 rad put each foot directly below its
    hip; torso height follows from the leg geometry so foot height is zero
    to machine precision.
    """
    th = STAND_HIP_ANGLE
    l1, l2 = model.upper_link.length, model.lower_link.length
    z0 = l1 * np.cos(th) + l2 * np.cos(th)
    q = np.zeros(NQ)
    q[2] = z0
    for li in range(4):
        q[6 + 3 * li: 9 + 3 * li] = (0.0, th, -2.0 * th)
    return RobotState(q=q, qd=np.zeros(NQ))


def nominal_height(model: RobotModel) -> float:
    return float(standing_state(model).q[2])


def leg_ik(model: RobotModel, torso_pos, torso_euler, leg: str, foot_world) -> np.ndarray:
    """Joint angles placing the foot at a world position; raises IkFailure.

    The knee uses the flexed-backward branch (negative knee angle) matching
    the model's joint limits.
    """
    sx, sy = leg_signs(leg)
    R_b = euler_zyx_rotation(np.asarray(torso_euler, dtype=float))
    d = R_b.T @ (np.asarray(foot_world, dtype=float) - np.asarray(torso_pos, dtype=float))
    d = d - model.hip_offset(leg)

    l_hip = model.hip_link.length
    rho = np.hypot(d[1], d[2])
    target_y = sy * l_hip
    if rho < abs(target_y) + 1e-12:
        raise IkFailure(f"{leg} foot target laterally out of reach")
    phi = np.arctan2(d[2], d[1])
    dev = np.arccos(np.clip(target_y / rho, -1.0, 1.0))
    candidates = []
    for q1 in (phi + dev, phi - dev):
        q1w = np.arctan2(np.sin(q1), np.cos(q1))
        zp = -np.sin(q1w) * d[1] + np.cos(q1w) * d[2]
        candidates.append((q1w, zp))
    candidates = [c for c in candidates if c[1] < 0.0] or candidates
    q1, zp = min(candidates, key=lambda c: abs(c[0]))

    l1, l2 = model.upper_link.length, model.lower_link.length
    r2 = d[0] ** 2 + zp ** 2
    r = np.sqrt(r2)
    if r > (l1 + l2) * (1.0 - 1e-9) or r < abs(l1 - l2) + 1e-9:
        raise IkFailure(f"{leg} foot target at distance {r:.3f} m out of reach")
    cos_knee = (r2 - l1 ** 2 - l2 ** 2) / (2.0 * l1 * l2)
    q3 = -np.arccos(np.clip(cos_knee, -1.0, 1.0))
    gamma = np.arctan2(-d[0], -zp)
    q2 = gamma - np.arctan2(l2 * np.sin(q3), l1 + l2 * np.cos(q3))

    angles = np.array([q1, q2, q3])
    lo, hi = model.joint_bounds()
    ls = leg_joint_slice(leg)
    if np.any(angles < lo[ls.start - 6: ls.stop - 6] - 1e-9) or \
       np.any(angles > hi[ls.start - 6: ls.stop - 6] + 1e-9):
        raise IkFailure(f"{leg} IK solution {angles} outside joint limits")
    return angles


def leg_joint_rates(model: RobotModel, q, leg: str, foot_vel_world, base_qd) -> np.ndarray:
    """Joint rates giving the desired world foot velocity at fixed base motion."""
    q = np.asarray(q, dtype=float)
    qd0 = np.zeros(NQ)
    qd0[:6] = np.asarray(base_qd, dtype=float)[:6]
    _, vel_base, J = foot_kinematics(model, q, qd0, leg)
    ls = leg_joint_slice(leg)
    J_leg = J[:, ls]
    try:
        rates = np.linalg.solve(J_leg, np.asarray(foot_vel_world) - vel_base)
    except np.linalg.LinAlgError as exc:
        raise SingularConfiguration(f"{leg} leg Jacobian singular") from exc
    return rates


def gravity_compensation(model: RobotModel, q, contacts):
    """Torques and forces for a static equilibrium with the given stance set.

    Returns (u, forces) such that stance_forward_dynamics gives qdd ~ 0.
    """
    q = np.asarray(q, dtype=float)
    batch = compute_batch(model, q[None, :], np.zeros((1, NQ)))
    legs = _contact_legs(contacts)
    G = batch.h[0]
    J = batch.foot_jac[0, [LEG_ORDER.index(leg) for leg in legs]].reshape(-1, NQ)
    lam, *_ = np.linalg.lstsq(J[:, :6].T, G[:6], rcond=None)
    u = G[IDX_JOINTS] - J[:, IDX_JOINTS].T @ lam
    forces = {leg: lam[3 * i: 3 * i + 3] for i, leg in enumerate(legs)}
    return u, forces
