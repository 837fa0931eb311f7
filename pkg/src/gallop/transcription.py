"""Direct-collocation transcription of a gallop template into a sparse NLP.

Decision variables, per domain d with N mesh points and contact set C_d:
states q, qd (N x 18 each), torques u (N x 12), stance forces lam
(N x 3 per contact leg), power slack pairs p+, p- (N x 12 each), and the
domain duration T_d. Each touchdown junction additionally carries contact
impulses (3 per post-impact stance leg). Closed-form size:

    n_vars = sum_d [N_d (18+18+12+24) + 3 N_d |C_d| + 1] + sum_TD 3 |C_j|

Constraints: trapezoidal (or Hermite-Simpson) dynamics defects on every
interval; power-slack equalities p+ - p- = u_j qd_j per joint per mesh
sample (trapezoidal weights make the objective equal the integral of
|u . qd| exactly at complementary slacks); junction conditions (state
continuity at lift-offs, impulse-momentum impact at touchdowns, the cyclic
junction doubling as the periodicity closure); holonomic pins for every
stance sample with episode-constant pinned points (episodes wrapping the
stride boundary are shifted back by the stride displacement); average-speed
equality; initial-yaw and translation gauge pins; swing clearance, friction
cone (squared form), and touchdown-velocity inequalities.

The objective is the work integral sum of weighted slack pairs, i.e. the
cost-of-transport numerator; dividing by weight times displacement yields
the CoT of the extracted trajectory exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dynamics import compute_batch, leg_ik, leg_joint_rates, standing_state
from .errors import InfeasibleBounds, LayoutMismatch, ZeroDisplacement
from .hybrid import DomainTrajectory, StrideTrajectory
from .model import LEG_ORDER, NQ, RobotModel, leg_joint_slice
from .taxonomy import GaitTemplate

_SU = np.zeros((NQ, 12))
_SU[6:, :] = np.eye(12)


@dataclass
class MeshConfig:
    """Mesh density, collocation scheme, and scaling factors."""

    points_per_domain: int = 10
    scheme: str = "trapezoid"           # "trapezoid" | "hermite-simpson"
    stance_form: str = "acceleration"   # "acceleration" | "velocity" | "position"
    state_scale: float = 1.0
    rate_scale: float = 5.0
    torque_scale: float | None = None   # default: torque limit
    force_scale: float | None = None    # default: body weight
    power_scale: float = 200.0
    duration_scale: float = 0.1
    clearance_interior: float = 1e-4
    td_velocity_min: float = -0.5
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.points_per_domain < 3:
            raise ValueError("need at least 3 mesh points per domain")
        if self.scheme not in ("trapezoid", "hermite-simpson"):
            raise ValueError(f"unknown collocation scheme {self.scheme!r}")
        if self.stance_form not in ("acceleration", "velocity", "position"):
            raise ValueError(f"unknown stance form {self.stance_form!r}")
        for s in (self.state_scale, self.rate_scale, self.power_scale,
                  self.duration_scale):
            if s <= 0:
                raise ValueError("scaling factors must be positive")


@dataclass
class _Episode:
    """A maximal cyclic run of domains with one leg continuously on/off ground.

    Each sample entry is (global sample index, wrapped, duplicate, entry_kind):
    ``wrapped`` marks samples on the stride-start side of a cyclic episode,
    ``duplicate`` marks the first sample of a continuation domain (same time
    instant as the previous domain's last sample), and ``entry_kind`` is the
    junction event kind ("TD"/"LO") that sample sits on, None elsewhere.
    """

    leg: str
    samples: list
    stance: bool


def _cyclic_runs(flags: list[bool]) -> list[list[int]]:
    """Maximal cyclic runs of True in a boolean ring, each in ring order."""
    n = len(flags)
    if all(flags):
        return [list(range(n))]
    if not any(flags):
        return []
    runs = []
    starts = [i for i in range(n) if flags[i] and not flags[(i - 1) % n]]
    for s in starts:
        run = []
        i = s
        while flags[i]:
            run.append(i)
            i = (i + 1) % n
        runs.append(run)
    return runs


class GallopNlp:
    """The transcribed constrained program for one (template, speed) pair."""

    def __init__(self, template: GaitTemplate, model: RobotModel,
                 target_speed: float, mesh: MeshConfig):
        if target_speed <= 0:
            raise InfeasibleBounds("target speed must be positive")
        self.template = template
        self.model = model
        self.target_speed = float(target_speed)
        self.mesh = mesh
        self.contacts = [tuple(sorted(c, key=LEG_ORDER.index))
                         for c in template.schedule.contact_sets]
        self.events = list(template.schedule.events)
        self.fractions = list(template.schedule.fractions)
        self.D = len(self.contacts)
        self.N = mesh.points_per_domain
        self._feasibility_precheck()
        self._build_layout()
        self._build_episodes()
        self._build_rows()
        self._build_bounds_and_scales()
        self._cache_x = None
        self._cache = None

    # ------------------------------------------------------------------
    # layout
    # ------------------------------------------------------------------

    def _feasibility_precheck(self):
        m, v = self.model, self.target_speed
        tl = m.torso_limits
        if v > tl["linear_rate"]:
            raise InfeasibleBounds(
                f"target speed {v} exceeds torso rate limit {tl['linear_rate']}")
        min_stride = v * self.D * m.phase_duration_min
        if min_stride > (tl["xy"][1] - tl["xy"][0]):
            raise InfeasibleBounds("minimum stride length exceeds position box")

    def _build_layout(self):
        N, D = self.N, self.D
        self.S = N * D
        off = 0
        self.dom = []
        for d in range(D):
            legs = self.contacts[d]
            entry = {}
            entry["q"] = np.arange(off, off + N * NQ).reshape(N, NQ)
            off += N * NQ
            entry["qd"] = np.arange(off, off + N * NQ).reshape(N, NQ)
            off += N * NQ
            entry["u"] = np.arange(off, off + N * 12).reshape(N, 12)
            off += N * 12
            entry["lam"] = {}
            for leg in legs:
                entry["lam"][leg] = np.arange(off, off + N * 3).reshape(N, 3)
                off += N * 3
            entry["pp"] = np.arange(off, off + N * 12).reshape(N, 12)
            off += N * 12
            entry["pm"] = np.arange(off, off + N * 12).reshape(N, 12)
            off += N * 12
            entry["T"] = off
            off += 1
            self.dom.append(entry)

        # junction j sits at the start of domain j; junction 0 is cyclic.
        self.junctions = []
        for j in range(D):
            leg, kind = self.events[j]
            prev = (j - 1) % D
            entry = {"kind": kind, "leg": leg, "prev": prev,
                     "cyclic": j == 0, "imp": {}}
            if kind == "TD":
                for cleg in self.contacts[j]:
                    entry["imp"][cleg] = np.arange(off, off + 3)
                    off += 3
            self.junctions.append(entry)
        self.n = off

        # per-sample global views
        self.sample_of = [(d, k) for d in range(self.D) for k in range(self.N)]
        self.Q_idx = np.vstack([self.dom[d]["q"] for d in range(D)])
        self.QD_idx = np.vstack([self.dom[d]["qd"] for d in range(D)])
        self.U_idx = np.vstack([self.dom[d]["u"] for d in range(D)])
        self.T_idx = np.array([self.dom[d]["T"] for d in range(D)])
        # padded force index map (S,4,3); -1 marks unused
        self.LAM_idx = -np.ones((self.S, 4, 3), dtype=int)
        for d in range(D):
            for leg in self.contacts[d]:
                li = LEG_ORDER.index(leg)
                self.LAM_idx[d * N:(d + 1) * N, li, :] = self.dom[d]["lam"][leg]

    def _sample(self, d, k):
        return d * self.N + k

    def _build_episodes(self):
        N = self.N
        self.stance_episodes = []
        self.swing_episodes = []
        for leg in LEG_ORDER:
            flags = [leg in c for c in self.contacts]
            for stance in (True, False):
                use = flags if stance else [not f for f in flags]
                for run in _cyclic_runs(use):
                    samples = []
                    wrapped = False
                    for pos, d in enumerate(run):
                        if pos > 0 and d == 0:
                            wrapped = True
                        for k in range(N):
                            dup = (pos > 0 and k == 0)
                            kind = self.events[d][1] if dup else None
                            samples.append((self._sample(d, k), wrapped, dup, kind))
                    ep = _Episode(leg=leg, samples=samples, stance=stance)
                    (self.stance_episodes if stance else self.swing_episodes).append(ep)

    def _stance_velocity_samples(self, ep: _Episode) -> list:
        """Samples carrying a J qd = 0 row: all except exact duplicates.

        A continuation sample repeats the previous domain's end state, so its
        row is identical across a lift-off junction; across a touchdown the
        velocities jump and the post-impact row is load-bearing.
        """
        return [s for s, wrapped, dup, kind in ep.samples
                if not (dup and kind == "LO")]

    def _build_rows(self):
        """Fix the equality/inequality row layout and family tags."""
        N, D = self.N, self.D
        eq = 0
        self.rows = {}
        self.eq_families = []

        def add_eq(name, count, family):
            nonlocal eq
            self.rows[name] = (eq, count)
            self.eq_families.append((family, eq, count))
            eq += count

        add_eq("defects", D * (N - 1) * 36, "dynamics")
        add_eq("slacks", D * N * 12, "dynamics")
        form = self.mesh.stance_form
        jrows = 0
        for j, jn in enumerate(self.junctions):
            if jn["kind"] == "LO":
                jrows += 36
            else:
                jrows += (17 if jn["cyclic"] else 18) + 18
                if form != "velocity":
                    jrows += 3 * len(jn["imp"])
        add_eq("junctions", jrows, "periodicity")
        pin_rows = 0
        for ep in self.stance_episodes:
            if form == "velocity":
                pin_rows += 1 + 3 * len(self._stance_velocity_samples(ep))
            elif form == "acceleration":
                pin_rows += 1 + 3 * len(ep.samples)
            else:
                kept = [s for s in ep.samples if not s[2]]
                pin_rows += len(kept) + 2 * (len(kept) - 1)
        add_eq("pins", pin_rows, "holonomic_stance")
        add_eq("speed", 1, "average_speed")
        add_eq("yaw", 1, "initial_yaw")
        add_eq("gauge", 2, "initial_yaw")
        self.m_eq = eq

        ineq = 0
        self.ineq_families = []

        def add_ineq(name, count, family):
            nonlocal ineq
            self.rows[name] = (ineq, count)
            self.ineq_families.append((family, ineq, count))
            ineq += count

        clear_rows = sum(len([s for s in ep.samples if not s[2]])
                         for ep in self.swing_episodes)
        add_ineq("clearance", clear_rows, "unilateral_swing")
        cone_rows = sum(len(self.contacts[d]) for d in range(D)) * N
        add_ineq("cone", cone_rows, "friction_cone")
        ntd = sum(1 for jn in self.junctions if jn["kind"] == "TD")
        add_ineq("td_velocity", 2 * ntd, "touchdown_velocity")
        self.m_ineq = ineq

    def _build_bounds_and_scales(self):
        m, mesh = self.model, self.mesh
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        xs = np.ones(self.n)
        q_lo, q_hi = m.q_bounds()
        qd_lo, qd_hi = m.qd_bounds()
        u_scale = mesh.torque_scale or m.torque_limit
        f_scale = mesh.force_scale or m.weight
        for d in range(self.D):
            e = self.dom[d]
            lb[e["q"]] = q_lo
            ub[e["q"]] = q_hi
            lb[e["qd"]] = qd_lo
            ub[e["qd"]] = qd_hi
            lb[e["u"]] = -m.torque_limit
            ub[e["u"]] = m.torque_limit
            for leg, idx in e["lam"].items():
                lb[idx[:, 2]] = 0.0
                xs[idx] = f_scale
            lb[e["pp"]] = 0.0
            lb[e["pm"]] = 0.0
            xs[e["pp"]] = mesh.power_scale
            xs[e["pm"]] = mesh.power_scale
            lb[e["T"]] = m.phase_duration_min
            ub[e["T"]] = m.phase_duration_max
            xs[e["T"]] = mesh.duration_scale
            xs[e["q"]] = mesh.state_scale
            xs[e["qd"]] = mesh.rate_scale
            xs[e["u"]] = u_scale
        for jn in self.junctions:
            for idx in jn["imp"].values():
                lb[idx[2]] = 0.0
                xs[idx] = 0.03 * f_scale
        self.lb, self.ub, self.x_scale = lb, ub, xs
        self.f_scale = m.weight

        # per-row constraint scales
        st = standing_state(m)
        Mdiag = np.diag(compute_batch(m, st.q[None], st.qd[None]).M[0])
        mom_scale = np.maximum(Mdiag, 0.1)
        ce = np.ones(self.m_eq)
        r0, cnt = self.rows["slacks"]
        ce[r0:r0 + cnt] = mesh.power_scale
        if mesh.stance_form == "acceleration":
            pos, _ = self.rows["pins"]
            for ep in self.stance_episodes:
                pos += 1
                n_acc = 3 * len(ep.samples)
                ce[pos:pos + n_acc] = 10.0
                pos += n_acc
        r0, cnt = self.rows["junctions"]
        pos = r0
        for jn in self.junctions:
            if jn["kind"] == "LO":
                pos += 36
            else:
                pos += 17 if jn["cyclic"] else 18
                ce[pos:pos + 18] = mom_scale
                pos += 18 + 3 * len(jn["imp"])
        self.c_scale_eq = ce
        ci = np.ones(self.m_ineq)
        r0, cnt = self.rows["cone"]
        ci[r0:r0 + cnt] = f_scale ** 2
        self.c_scale_ineq = ci

    # ------------------------------------------------------------------
    # evaluation caches
    # ------------------------------------------------------------------

    def bounds(self):
        return self.lb, self.ub

    def repair(self, x) -> np.ndarray:
        """Reset the power slack pairs onto their defining equalities.

        For any (u, qd) the feasible complementary choice is p+ = max(P, 0),
        p- = max(-P, 0); resetting them keeps the slack rows exact and never
        increases the objective. Solvers may call this after every step.
        """
        x = self.check_layout(x).copy()
        for d in range(self.D):
            e = self.dom[d]
            power = x[e["u"]] * x[e["qd"]][:, 6:]
            x[e["pp"]] = np.maximum(power, 0.0)
            x[e["pm"]] = np.maximum(-power, 0.0)
        return x

    def check_layout(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise LayoutMismatch(f"decision vector has shape {x.shape}, "
                                 f"expected ({self.n},)")
        return x

    def _states(self, x):
        Q = x[self.Q_idx]
        QD = x[self.QD_idx]
        U = x[self.U_idx]
        LAM = np.where(self.LAM_idx >= 0, x[np.maximum(self.LAM_idx, 0)], 0.0)
        T = x[self.T_idx]
        return Q, QD, U, LAM, T

    def _accels(self, batch, U, LAM):
        rhs = (U @ _SU.T) - batch.h \
            + np.einsum("slij,sli->sj", batch.foot_jac, LAM)
        return np.linalg.solve(batch.M, rhs[:, :, None])[:, :, 0]

    def _base_eval(self, x):
        x = self.check_layout(x)
        if self._cache_x is not None and np.array_equal(x, self._cache_x):
            return self._cache
        Q, QD, U, LAM, T = self._states(x)
        batch = compute_batch(self.model, Q, QD)
        A = self._accels(batch, U, LAM)
        mid = self._midpoints(x, Q, QD, U, LAM, T, batch, A) \
            if self.mesh.scheme == "hermite-simpson" else None
        self._cache_x = x.copy()
        self._cache = (Q, QD, U, LAM, T, batch, A, mid)
        return self._cache

    def _midpoints(self, x, Q, QD, U, LAM, T, batch, A):
        """Hermite-Simpson midpoint states and their dynamics."""
        N, D = self.N, self.D
        i0 = np.concatenate([np.arange(d * N, d * N + N - 1) for d in range(D)])
        i1 = i0 + 1
        h = np.repeat(T / (N - 1), N - 1)
        X0 = np.hstack([Q[i0], QD[i0]])
        X1 = np.hstack([Q[i1], QD[i1]])
        F0 = np.hstack([QD[i0], A[i0]])
        F1 = np.hstack([QD[i1], A[i1]])
        Xm = 0.5 * (X0 + X1) + (h / 8.0)[:, None] * (F0 - F1)
        Um = 0.5 * (U[i0] + U[i1])
        LAMm = 0.5 * (LAM[i0] + LAM[i1])
        mbatch = compute_batch(self.model, Xm[:, :NQ], Xm[:, NQ:])
        Am = self._accels(mbatch, Um, LAMm)
        return {"i0": i0, "i1": i1, "h": h, "Xm": Xm, "Um": Um, "LAMm": LAMm,
                "batch": mbatch, "Am": Am, "F0": F0, "F1": F1}

    # ------------------------------------------------------------------
    # objective
    # ------------------------------------------------------------------

    def _trap_weights(self, T):
        """(S,) trapezoidal quadrature weights, grouped per domain."""
        N = self.N
        w = np.ones(N)
        w[0] = w[-1] = 0.5
        return np.concatenate([T[d] / (N - 1) * w for d in range(self.D)])

    def objective(self, x) -> float:
        x = self.check_layout(x)
        T = x[self.T_idx]
        w = self._trap_weights(T)
        total = 0.0
        for d in range(self.D):
            e = self.dom[d]
            P = x[e["pp"]].sum(axis=1) + x[e["pm"]].sum(axis=1)
            total += float(w[d * self.N:(d + 1) * self.N] @ P)
        return total

    def gradient(self, x) -> np.ndarray:
        x = self.check_layout(x)
        g = np.zeros(self.n)
        T = x[self.T_idx]
        w = self._trap_weights(T)
        N = self.N
        wk = np.ones(N)
        wk[0] = wk[-1] = 0.5
        for d in range(self.D):
            e = self.dom[d]
            wd = w[d * N:(d + 1) * N]
            g[e["pp"]] = wd[:, None]
            g[e["pm"]] = wd[:, None]
            P = x[e["pp"]].sum(axis=1) + x[e["pm"]].sum(axis=1)
            g[e["T"]] = float((wk / (N - 1)) @ P)
        return g

    # ------------------------------------------------------------------
    # constraints
    # ------------------------------------------------------------------

    def constraints(self, x):
        Q, QD, U, LAM, T, batch, A, mid = self._base_eval(x)
        c_eq = np.zeros(self.m_eq)
        N, D = self.N, self.D

        r0, _ = self.rows["defects"]
        pos = r0
        for d in range(D):
            h = T[d] / (N - 1)
            s = slice(d * N, (d + 1) * N)
            q, qd, a = Q[s], QD[s], A[s]
            if self.mesh.scheme == "trapezoid":
                dq = q[1:] - q[:-1] - 0.5 * h * (qd[:-1] + qd[1:])
                dv = qd[1:] - qd[:-1] - 0.5 * h * (a[:-1] + a[1:])
            else:
                sel = slice(d * (N - 1), (d + 1) * (N - 1))
                F0 = np.hstack([qd[:-1], a[:-1]])
                F1 = np.hstack([qd[1:], a[1:]])
                Fm = np.hstack([mid["Xm"][sel, NQ:], mid["Am"][sel]])
                X0 = np.hstack([q[:-1], qd[:-1]])
                X1 = np.hstack([q[1:], qd[1:]])
                dd = X1 - X0 - (h / 6.0) * (F0 + 4.0 * Fm + F1)
                dq, dv = dd[:, :NQ], dd[:, NQ:]
            block = np.hstack([dq, dv]).ravel()
            c_eq[pos:pos + block.size] = block
            pos += block.size

        r0, _ = self.rows["slacks"]
        pos = r0
        for d in range(D):
            e = self.dom[d]
            s = slice(d * N, (d + 1) * N)
            power = U[s] * QD[s][:, 6:]
            block = (x[e["pp"]] - x[e["pm"]] - power).ravel()
            c_eq[pos:pos + block.size] = block
            pos += block.size

        form = self.mesh.stance_form
        pos, _ = self.rows["junctions"]
        for j, jn in enumerate(self.junctions):
            s_start = self._sample(j, 0)
            s_end = self._sample(jn["prev"], N - 1)
            if jn["kind"] == "LO":
                c_eq[pos:pos + 18] = Q[s_start] - Q[s_end]
                c_eq[pos + 18:pos + 36] = QD[s_start] - QD[s_end]
                pos += 36
                continue
            if jn["cyclic"]:
                c_eq[pos:pos + 17] = Q[s_start][1:] - Q[s_end][1:]
                pos += 17
            else:
                c_eq[pos:pos + 18] = Q[s_start] - Q[s_end]
                pos += 18
            mom = batch.M[s_start] @ (QD[s_start] - QD[s_end])
            for leg, idx in jn["imp"].items():
                li = LEG_ORDER.index(leg)
                mom -= batch.foot_jac[s_start, li].T @ x[idx]
            c_eq[pos:pos + 18] = mom
            pos += 18
            if form != "velocity":
                for leg in jn["imp"]:
                    li = LEG_ORDER.index(leg)
                    c_eq[pos:pos + 3] = batch.foot_jac[s_start, li] @ QD[s_start]
                    pos += 3

        s_first = self._sample(0, 0)
        s_last = self._sample(D - 1, N - 1)
        dx = Q[s_last, 0] - Q[s_first, 0]

        pos, _ = self.rows["pins"]
        for ep in self.stance_episodes:
            li = LEG_ORDER.index(ep.leg)
            if form == "velocity":
                anchor = ep.samples[0][0]
                c_eq[pos] = batch.foot_pos[anchor, li, 2]
                pos += 1
                for s in self._stance_velocity_samples(ep):
                    c_eq[pos:pos + 3] = batch.foot_jac[s, li] @ QD[s]
                    pos += 3
                continue
            if form == "acceleration":
                anchor = ep.samples[0][0]
                c_eq[pos] = batch.foot_pos[anchor, li, 2]
                pos += 1
                for s, _w, _d, _k in ep.samples:
                    c_eq[pos:pos + 3] = batch.foot_jac[s, li] @ A[s] \
                        + batch.foot_avp[s, li]
                    pos += 3
                continue
            kept = [(s, wrapped) for s, wrapped, dup, kind in ep.samples if not dup]
            anchor, _ = kept[0]
            for s, wrapped in kept:
                c_eq[pos] = batch.foot_pos[s, li, 2]
                pos += 1
            for s, wrapped in kept[1:]:
                shift = dx if wrapped else 0.0
                c_eq[pos] = batch.foot_pos[s, li, 0] - batch.foot_pos[anchor, li, 0] + shift
                c_eq[pos + 1] = batch.foot_pos[s, li, 1] - batch.foot_pos[anchor, li, 1]
                pos += 2

        pos, _ = self.rows["speed"]
        c_eq[pos] = dx / T.sum() - self.target_speed
        pos, _ = self.rows["yaw"]
        c_eq[pos] = Q[s_first, 3]
        pos, _ = self.rows["gauge"]
        c_eq[pos] = Q[s_first, 0]
        c_eq[pos + 1] = Q[s_first, 1]

        c_ineq = np.zeros(self.m_ineq)
        pos, _ = self.rows["clearance"]
        for ep in self.swing_episodes:
            li = LEG_ORDER.index(ep.leg)
            kept = [s for s, wrapped, dup, kind in ep.samples if not dup]
            for i, s in enumerate(kept):
                cmin = 0.0 if i in (0, len(kept) - 1) else self.mesh.clearance_interior
                c_ineq[pos] = cmin - batch.foot_pos[s, li, 2]
                pos += 1

        mu2 = self.model.friction_coefficient ** 2
        pos, _ = self.rows["cone"]
        for d in range(D):
            for leg in self.contacts[d]:
                lam = x[self.dom[d]["lam"][leg]]
                block = lam[:, 0] ** 2 + lam[:, 1] ** 2 - mu2 * lam[:, 2] ** 2
                c_ineq[pos:pos + N] = block
                pos += N

        pos, _ = self.rows["td_velocity"]
        for j, jn in enumerate(self.junctions):
            if jn["kind"] != "TD":
                continue
            s_end = self._sample(jn["prev"], N - 1)
            li = LEG_ORDER.index(jn["leg"])
            vz = batch.foot_vel[s_end, li, 2]
            c_ineq[pos] = vz                              # vz <= 0
            c_ineq[pos + 1] = self.mesh.td_velocity_min - vz
            pos += 2

        return c_eq, c_ineq

    # ------------------------------------------------------------------
    # Jacobian
    # ------------------------------------------------------------------

    def _point_derivatives(self, Q, QD, U, LAM, batch, A,
                           want_fd_extras: bool = False, junction_samples=()):
        """Per-sample partials of the acceleration and foot quantities.

        Returns dict with Aq, Av (S,18,18), Au (S,18,12), Al (S,18,4,3),
        dfvel (S,18,4,3) = d(foot velocity)/dq columns, and per-junction
        contractions dmom[s] (18,18) = d/dq [M dqd - sum J^T imp].
        """
        S = Q.shape[0]
        eps = self.mesh.fd_step

        # qd sweep: bias only, one call for all +/- directions
        QD_big = np.broadcast_to(QD, (2 * NQ, S, NQ)).copy()
        for jcol in range(NQ):
            QD_big[jcol, :, jcol] += eps
            QD_big[NQ + jcol, :, jcol] -= eps
        qd_sweep = compute_batch(self.model, np.broadcast_to(Q, (2 * NQ, S, NQ))
                                 .reshape(-1, NQ), QD_big.reshape(-1, NQ),
                                 need_mass=False, need_feet=False)
        h_big = qd_sweep.h.reshape(2 * NQ, S, NQ)
        dh = np.transpose((h_big[:NQ] - h_big[NQ:]) / (2 * eps), (1, 2, 0))
        davp_v = None
        if want_fd_extras:
            avpv_big = qd_sweep.foot_avp.reshape(2 * NQ, S, 4, 3)
            davp_v = np.transpose((avpv_big[:NQ] - avpv_big[NQ:]) / (2 * eps),
                                  (1, 0, 2, 3))

        # combined RHS solve for analytic blocks
        nrhs = 12 + 12 + 18
        rhs_multi = np.empty((S, NQ, nrhs))
        rhs_multi[:, :, :12] = np.broadcast_to(_SU, (S, NQ, 12))
        rhs_multi[:, :, 12:24] = np.swapaxes(
            batch.foot_jac.reshape(S, 12, NQ), 1, 2)
        rhs_multi[:, :, 24:] = -dh
        sol = np.linalg.solve(batch.M, rhs_multi)
        Au = sol[:, :, :12]
        Al = sol[:, :, 12:24].reshape(S, NQ, 4, 3)
        Av = sol[:, :, 24:]

        # q sweep: full dynamics, one call for all +/- directions
        Q_big = np.broadcast_to(Q, (2 * NQ, S, NQ)).copy()
        for jcol in range(NQ):
            Q_big[jcol, :, jcol] += eps
            Q_big[NQ + jcol, :, jcol] -= eps
        big = compute_batch(self.model, Q_big.reshape(-1, NQ),
                            np.broadcast_to(QD, (2 * NQ, S, NQ)).reshape(-1, NQ))
        M_big = big.M.reshape(2 * NQ, S, NQ, NQ)
        h_bigq = big.h.reshape(2 * NQ, S, NQ)
        jac_big = big.foot_jac.reshape(2 * NQ, S, 4, 3, NQ)
        rhs_u = U @ _SU.T
        rhs_big = (rhs_u[None] - h_bigq
                   + np.einsum("dslij,sli->dsj", jac_big, LAM))
        a_big = np.linalg.solve(M_big.reshape(-1, NQ, NQ),
                                rhs_big.reshape(-1, NQ, 1))[:, :, 0]
        a_big = a_big.reshape(2 * NQ, S, NQ)
        Aq = np.transpose((a_big[:NQ] - a_big[NQ:]) / (2 * eps), (1, 2, 0))

        dfvel = davp_q = dJa = None
        if want_fd_extras:
            fv_big = big.foot_vel.reshape(2 * NQ, S, 4, 3)
            dfvel = np.transpose((fv_big[:NQ] - fv_big[NQ:]) / (2 * eps),
                                 (1, 0, 2, 3))
            avp_big = big.foot_avp.reshape(2 * NQ, S, 4, 3)
            davp_q = np.transpose((avp_big[:NQ] - avp_big[NQ:]) / (2 * eps),
                                  (1, 0, 2, 3))
            Ja_big = np.einsum("dslij,sj->dsli", jac_big, A)
            dJa = np.transpose((Ja_big[:NQ] - Ja_big[NQ:]) / (2 * eps),
                               (1, 0, 2, 3))

        dmom = {}
        for s in junction_samples:
            dqd, imps = self._junction_context(s)
            v = np.einsum("dij,j->di", M_big[:, s], dqd)
            for li, imp in imps:
                v = v - np.einsum("dkj,k->dj", jac_big[:, s, li], imp)
            dmom[s] = ((v[:NQ] - v[NQ:]) / (2 * eps)).T

        out = {"Aq": Aq, "Av": Av, "Au": Au, "Al": Al, "dmom": dmom}
        if want_fd_extras:
            out["dfvel"] = dfvel
            out["davp_q"] = davp_q
            out["davp_v"] = davp_v
            out["dJa"] = dJa
        return out

    def _junction_context(self, s_start):
        """(dqd, [(leg_index, impulse value)]) for a junction start sample."""
        x = self._cache_x
        Q, QD, U, LAM, T, batch, A, mid = self._cache
        j = next(jj for jj, jn in enumerate(self.junctions)
                 if jn["kind"] == "TD" and self._sample(jj, 0) == s_start)
        jn = self.junctions[j]
        s_end = self._sample(jn["prev"], self.N - 1)
        dqd = QD[s_start] - QD[s_end]
        imps = [(LEG_ORDER.index(leg), x[idx]) for leg, idx in jn["imp"].items()]
        return dqd, imps

    def jacobian(self, x):
        Q, QD, U, LAM, T, batch, A, mid = self._base_eval(x)
        N, D = self.N, self.D
        td_samples = [self._sample(j, 0) for j, jn in enumerate(self.junctions)
                      if jn["kind"] == "TD"]
        der = self._point_derivatives(Q, QD, U, LAM, batch, A,
                                      want_fd_extras=True,
                                      junction_samples=td_samples)
        if mid is not None:
            mid = dict(mid)
            mid["der"] = self._point_derivatives(
                mid["Xm"][:, :NQ], mid["Xm"][:, NQ:], mid["Um"], mid["LAMm"],
                mid["batch"], mid["Am"])
        velocity_form = self.mesh.stance_form
        rows, cols, vals = [], [], []

        def put(r0, row_count, col_idx, block):
            block = np.asarray(block, dtype=float)
            block = block.reshape(row_count, -1)
            col_idx = np.asarray(col_idx, dtype=int).ravel()
            rr = np.repeat(np.arange(r0, r0 + row_count), col_idx.size)
            cc = np.tile(col_idx, row_count)
            rows.append(rr)
            cols.append(cc)
            vals.append(block.ravel())

        eye = np.eye(NQ)

        # --- defects ---
        r0, _ = self.rows["defects"]
        pos = r0
        for d in range(D):
            e = self.dom[d]
            h = T[d] / (N - 1)
            for i in range(N - 1):
                s0 = self._sample(d, i)
                s1 = s0 + 1
                if self.mesh.scheme == "trapezoid":
                    self._trap_defect_jac(put, pos, d, i, s0, s1, h, QD, A,
                                          der, x)
                else:
                    self._hs_defect_jac(put, pos, d, i, s0, s1, h, QD, A,
                                        der, mid, x)
                pos += 36

        # --- slack power rows ---
        r0, _ = self.rows["slacks"]
        pos = r0
        for d in range(D):
            e = self.dom[d]
            for k in range(N):
                s = self._sample(d, k)
                rr = np.arange(pos, pos + 12)
                rows.append(rr)
                cols.append(e["pp"][k])
                vals.append(np.ones(12))
                rows.append(rr)
                cols.append(e["pm"][k])
                vals.append(-np.ones(12))
                rows.append(rr)
                cols.append(e["u"][k])
                vals.append(-QD[s, 6:])
                rows.append(rr)
                cols.append(e["qd"][k][6:])
                vals.append(-U[s])
                pos += 12

        # --- junctions ---
        pos, _ = self.rows["junctions"]
        for j, jn in enumerate(self.junctions):
            s_start = self._sample(j, 0)
            s_end = self._sample(jn["prev"], N - 1)
            qs = self.dom[j]["q"][0]
            qe = self.dom[jn["prev"]]["q"][N - 1]
            vs = self.dom[j]["qd"][0]
            ve = self.dom[jn["prev"]]["qd"][N - 1]
            if jn["kind"] == "LO":
                put(pos, 18, qs, eye)
                put(pos, 18, qe, -eye)
                put(pos + 18, 18, vs, eye)
                put(pos + 18, 18, ve, -eye)
                pos += 36
                continue
            if jn["cyclic"]:
                put(pos, 17, qs[1:], eye[1:, 1:])
                put(pos, 17, qe[1:], -eye[1:, 1:])
                pos += 17
            else:
                put(pos, 18, qs, eye)
                put(pos, 18, qe, -eye)
                pos += 18
            M_s = batch.M[s_start]
            put(pos, 18, vs, M_s)
            put(pos, 18, ve, -M_s)
            put(pos, 18, qs, der["dmom"][s_start])
            for leg, idx in jn["imp"].items():
                li = LEG_ORDER.index(leg)
                put(pos, 18, idx, -batch.foot_jac[s_start, li].T)
            pos += 18
            if velocity_form != "velocity":
                for leg in jn["imp"]:
                    li = LEG_ORDER.index(leg)
                    put(pos, 3, vs, batch.foot_jac[s_start, li])
                    put(pos, 3, qs, der["dfvel"][s_start, :, li, :].T)
                    pos += 3

        # --- pins ---
        s_first = self._sample(0, 0)
        s_last = self._sample(D - 1, N - 1)
        x_first = self.dom[0]["q"][0][0]
        x_last = self.dom[D - 1]["q"][N - 1][0]
        pos, _ = self.rows["pins"]
        for ep in self.stance_episodes:
            li = LEG_ORDER.index(ep.leg)
            if velocity_form == "velocity":
                anchor = ep.samples[0][0]
                put(pos, 1, self.Q_idx[anchor],
                    batch.foot_jac[anchor, li, 2][None, :])
                pos += 1
                for s in self._stance_velocity_samples(ep):
                    put(pos, 3, self.QD_idx[s], batch.foot_jac[s, li])
                    put(pos, 3, self.Q_idx[s], der["dfvel"][s, :, li, :].T)
                    pos += 3
                continue
            if velocity_form == "acceleration":
                anchor = ep.samples[0][0]
                put(pos, 1, self.Q_idx[anchor],
                    batch.foot_jac[anchor, li, 2][None, :])
                pos += 1
                for s, _w, _d, _k in ep.samples:
                    d_s = s // N
                    e_s = self.dom[d_s]
                    k_s = s - d_s * N
                    J_s = batch.foot_jac[s, li]
                    put(pos, 3, self.Q_idx[s],
                        der["dJa"][s, :, li, :].T + J_s @ der["Aq"][s]
                        + der["davp_q"][s, :, li, :].T)
                    put(pos, 3, self.QD_idx[s],
                        J_s @ der["Av"][s] + der["davp_v"][s, :, li, :].T)
                    put(pos, 3, self.U_idx[s], J_s @ der["Au"][s])
                    for leg2 in self.contacts[d_s]:
                        li2 = LEG_ORDER.index(leg2)
                        put(pos, 3, e_s["lam"][leg2][k_s],
                            J_s @ der["Al"][s, :, li2, :])
                    pos += 3
                continue
            kept = [(s, wrapped) for s, wrapped, dup, kind in ep.samples if not dup]
            anchor, _ = kept[0]
            qa = self.Q_idx[anchor]
            for s, wrapped in kept:
                put(pos, 1, self.Q_idx[s], batch.foot_jac[s, li, 2][None, :])
                pos += 1
            for s, wrapped in kept[1:]:
                put(pos, 1, self.Q_idx[s], batch.foot_jac[s, li, 0][None, :])
                put(pos, 1, qa, -batch.foot_jac[anchor, li, 0][None, :])
                if wrapped:
                    put(pos, 1, [x_last], np.array([[1.0]]))
                    put(pos, 1, [x_first], np.array([[-1.0]]))
                put(pos + 1, 1, self.Q_idx[s], batch.foot_jac[s, li, 1][None, :])
                put(pos + 1, 1, qa, -batch.foot_jac[anchor, li, 1][None, :])
                pos += 2

        # --- speed / yaw / gauge ---
        pos, _ = self.rows["speed"]
        total = T.sum()
        dx_val = Q[s_last, 0] - Q[s_first, 0]
        put(pos, 1, [x_last], np.array([[1.0 / total]]))
        put(pos, 1, [x_first], np.array([[-1.0 / total]]))
        put(pos, 1, self.T_idx, np.full((1, D), -dx_val / total ** 2))
        pos, _ = self.rows["yaw"]
        put(pos, 1, [self.dom[0]["q"][0][3]], np.array([[1.0]]))
        pos, _ = self.rows["gauge"]
        put(pos, 1, [x_first], np.array([[1.0]]))
        put(pos + 1, 1, [self.dom[0]["q"][0][1]], np.array([[1.0]]))

        J_eq = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.m_eq, self.n)).tocsr()

        # ---------------- inequalities ----------------
        rows, cols, vals = [], [], []
        pos, _ = self.rows["clearance"]
        for ep in self.swing_episodes:
            li = LEG_ORDER.index(ep.leg)
            kept = [s for s, wrapped, dup, kind in ep.samples if not dup]
            for i, s in enumerate(kept):
                put(pos, 1, self.Q_idx[s], -batch.foot_jac[s, li, 2][None, :])
                pos += 1

        mu2 = self.model.friction_coefficient ** 2
        pos, _ = self.rows["cone"]
        for d in range(D):
            for leg in self.contacts[d]:
                idx = self.dom[d]["lam"][leg]
                for k in range(N):
                    lam = x[idx[k]]
                    put(pos, 1, idx[k],
                        np.array([[2 * lam[0], 2 * lam[1], -2 * mu2 * lam[2]]]))
                    pos += 1

        pos, _ = self.rows["td_velocity"]
        for j, jn in enumerate(self.junctions):
            if jn["kind"] != "TD":
                continue
            s_end = self._sample(jn["prev"], N - 1)
            li = LEG_ORDER.index(jn["leg"])
            ve = self.dom[jn["prev"]]["qd"][N - 1]
            qe = self.dom[jn["prev"]]["q"][N - 1]
            jz = batch.foot_jac[s_end, li, 2][None, :]
            dz = der["dfvel"][s_end, :, li, 2][None, :]
            put(pos, 1, ve, jz)
            put(pos, 1, qe, dz)
            put(pos + 1, 1, ve, -jz)
            put(pos + 1, 1, qe, -dz)
            pos += 2

        if rows:
            J_ineq = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.m_ineq, self.n)).tocsr()
        else:
            J_ineq = sp.csr_matrix((self.m_ineq, self.n))
        return J_eq, J_ineq

    def _trap_defect_jac(self, put, pos, d, i, s0, s1, h, QD, A, der, x):
        e = self.dom[d]
        N = self.N
        eye = np.eye(NQ)
        q0, q1 = e["q"][i], e["q"][i + 1]
        v0, v1 = e["qd"][i], e["qd"][i + 1]
        u0, u1 = e["u"][i], e["u"][i + 1]
        # position defect rows
        put(pos, 18, q1, eye)
        put(pos, 18, q0, -eye)
        put(pos, 18, v0, -0.5 * h * eye)
        put(pos, 18, v1, -0.5 * h * eye)
        put(pos, 18, [e["T"]], (-(QD[s0] + QD[s1]) / (2 * (N - 1)))[:, None])
        # velocity defect rows
        r = pos + 18
        put(r, 18, v1, eye - 0.5 * h * der["Av"][s1])
        put(r, 18, v0, -eye - 0.5 * h * der["Av"][s0])
        put(r, 18, q0, -0.5 * h * der["Aq"][s0])
        put(r, 18, q1, -0.5 * h * der["Aq"][s1])
        put(r, 18, u0, -0.5 * h * der["Au"][s0])
        put(r, 18, u1, -0.5 * h * der["Au"][s1])
        for leg in self.contacts[d]:
            li = LEG_ORDER.index(leg)
            idx = e["lam"][leg]
            put(r, 18, idx[i], -0.5 * h * der["Al"][s0, :, li, :])
            put(r, 18, idx[i + 1], -0.5 * h * der["Al"][s1, :, li, :])
        put(r, 18, [e["T"]], (-(A[s0] + A[s1]) / (2 * (N - 1)))[:, None])

    def _hs_defect_jac(self, put, pos, d, i, s0, s1, h, QD, A, der, mid, x):
        e = self.dom[d]
        N = self.N
        sm = d * (N - 1) + i
        eye36 = np.eye(36)

        def fx(s, dd):
            out = np.zeros((36, 36))
            out[:NQ, NQ:] = np.eye(NQ)
            out[NQ:, :NQ] = dd["Aq"][s]
            out[NQ:, NQ:] = dd["Av"][s]
            return out

        def fu(s, dd):
            out = np.zeros((36, 12))
            out[NQ:] = dd["Au"][s]
            return out

        def fl(s, dd, li):
            out = np.zeros((36, 3))
            out[NQ:] = dd["Al"][s, :, li, :]
            return out

        F0x, F1x = fx(s0, der), fx(s1, der)
        Fmx = np.zeros((36, 36))
        Fmx[:NQ, NQ:] = np.eye(NQ)
        Fmx[NQ:, :NQ] = mid["der"]["Aq"][sm]
        Fmx[NQ:, NQ:] = mid["der"]["Av"][sm]
        c = h / 6.0
        dxm0 = 0.5 * eye36 + (h / 8.0) * F0x
        dxm1 = 0.5 * eye36 - (h / 8.0) * F1x
        D0 = -eye36 - c * (F0x + 4.0 * Fmx @ dxm0)
        D1 = eye36 - c * (F1x + 4.0 * Fmx @ dxm1)
        q0, q1 = e["q"][i], e["q"][i + 1]
        v0, v1 = e["qd"][i], e["qd"][i + 1]
        u0, u1 = e["u"][i], e["u"][i + 1]
        x0_cols = np.concatenate([q0, v0])
        x1_cols = np.concatenate([q1, v1])
        put(pos, 36, x0_cols, D0)
        put(pos, 36, x1_cols, D1)

        F0u, F1u = fu(s0, der), fu(s1, der)
        Fmu = np.zeros((36, 12))
        Fmu[NQ:] = mid["der"]["Au"][sm]
        put(pos, 36, u0, -c * (F0u + 4.0 * (Fmx @ ((h / 8.0) * F0u) + 0.5 * Fmu)))
        put(pos, 36, u1, -c * (F1u + 4.0 * (Fmx @ ((-h / 8.0) * F1u) + 0.5 * Fmu)))
        for leg in self.contacts[d]:
            li = LEG_ORDER.index(leg)
            idx = e["lam"][leg]
            F0l, F1l = fl(s0, der, li), fl(s1, der, li)
            Fml = np.zeros((36, 3))
            Fml[NQ:] = mid["der"]["Al"][sm, :, li, :]
            put(pos, 36, idx[i],
                -c * (F0l + 4.0 * (Fmx @ ((h / 8.0) * F0l) + 0.5 * Fml)))
            put(pos, 36, idx[i + 1],
                -c * (F1l + 4.0 * (Fmx @ ((-h / 8.0) * F1l) + 0.5 * Fml)))

        F0v = np.concatenate([QD[s0], A[s0]])
        F1v = np.concatenate([QD[s1], A[s1]])
        Fmv = np.concatenate([mid["Xm"][sm, NQ:], mid["Am"][sm]])
        ddh = -(F0v + 4.0 * Fmv + F1v) / 6.0 \
            - c * 4.0 * (Fmx @ ((F0v - F1v) / 8.0))
        put(pos, 36, [e["T"]], (ddh / (N - 1))[:, None])

    # ------------------------------------------------------------------
    # sparsity
    # ------------------------------------------------------------------

    def jacobian_sparsity(self):
        """Structural pattern from a probe evaluation at a generic point."""
        rng = np.random.default_rng(0)
        x = np.clip(rng.standard_normal(self.n) * 0.01 + 0.1,
                    self.lb, self.ub)
        J_eq, J_ineq = self.jacobian(x)
        return (J_eq != 0), (J_ineq != 0)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

NlpProblem = GallopNlp


def transcribe(template: GaitTemplate, model: RobotModel, target_speed: float,
               mesh: MeshConfig | None = None) -> GallopNlp:
    """Transcribe a gait template at a target speed into a sparse NLP."""
    return GallopNlp(template, model, target_speed, mesh or MeshConfig())


SWING_HEIGHT = 0.06
REACH_BUDGET_FRACTION = 0.55
MAX_SEED_STRIDE_LENGTH = 0.8


def _leg_timeline(problem: GallopNlp, leg: str, durations, t_stride, speed):
    """(t_td, stance_duration, pin_x_hip_relative) for one leg's cycle."""
    starts = np.concatenate([[0.0], np.cumsum(durations)[:-1]])
    flags = [leg in c for c in problem.contacts]
    runs = _cyclic_runs(flags)
    run = runs[0]
    t_td = starts[run[0]]
    stance = sum(durations[d] for d in run)
    return t_td, stance


def _cycloid(s):
    """Position and slope of the unit cycloidal swing profile at s in [0,1]."""
    x = s - np.sin(2 * np.pi * s) / (2 * np.pi)
    z = 0.5 * (1 - np.cos(2 * np.pi * s))
    dx = 1 - np.cos(2 * np.pi * s)
    dz = np.pi * np.sin(2 * np.pi * s)
    return x, z, dx, dz


def initial_guess(template: GaitTemplate, model: RobotModel,
                  target_speed: float, mesh: MeshConfig | None = None,
                  problem: GallopNlp | None = None) -> np.ndarray:
    """Kinematic seed: constant-speed torso, IK-tracked feet, zero torques.

    The torso translates at the target speed at the nominal standing height;
    stance feet are pinned under their hips at midstance, swing feet follow
    cycloidal arcs, forces share weight equally among stance legs, and
    domain durations scale the template's nominal fractions to a stride
    short enough for the stance feet to stay within leg reach.
    """
    if problem is None:
        problem = GallopNlp(template, model, target_speed, mesh or MeshConfig())
    v = problem.target_speed
    N, D = problem.N, problem.D
    st = standing_state(model)
    z_nom = st.q[2]

    l_reach = model.upper_link.length + model.lower_link.length
    budget = REACH_BUDGET_FRACTION * l_reach
    max_duty = max(
        sum(problem.fractions[d] for d in range(D) if leg in problem.contacts[d])
        for leg in LEG_ORDER)
    t_stride = min(MAX_SEED_STRIDE_LENGTH / v, budget / (v * max_duty))
    durations = np.clip(np.asarray(problem.fractions) * t_stride,
                        model.phase_duration_min, model.phase_duration_max)
    t_stride = float(durations.sum())
    starts = np.concatenate([[0.0], np.cumsum(durations)[:-1]])

    legs_data = {}
    for leg in LEG_ORDER:
        t_td, stance = _leg_timeline(problem, leg, durations, t_stride, v)
        sx = 1.0 if leg in ("LF", "RF") else -1.0
        sy = 1.0 if leg in ("LH", "LF") else -1.0
        hip_y_w = sy * (model.hip_y + model.hip_link.length)
        hip_x_off = sx * model.hip_x
        pin_x = v * (t_td + 0.5 * stance) + hip_x_off
        legs_data[leg] = dict(t_td=t_td, stance=stance, pin_x=pin_x,
                              hip_y=hip_y_w)

    def foot_target(leg, t_s):
        d = legs_data[leg]
        if t_s >= d["t_td"] - 1e-12:
            tau, shift = t_s, 0.0
        else:
            tau, shift = t_s + t_stride, v * t_stride
        rel = tau - d["t_td"]
        if rel <= d["stance"] + 1e-12:
            return (np.array([d["pin_x"] - shift, d["hip_y"], 0.0]),
                    np.zeros(3))
        t_swing = t_stride - d["stance"]
        s = (rel - d["stance"]) / t_swing
        cx, cz, dcx, dcz = _cycloid(min(max(s, 0.0), 1.0))
        dxp = v * t_stride
        pos = np.array([d["pin_x"] - shift + cx * dxp,
                        d["hip_y"],
                        cz * SWING_HEIGHT])
        vel = np.array([dcx * dxp / t_swing, 0.0, dcz * SWING_HEIGHT / t_swing])
        return pos, vel

    x = np.zeros(problem.n)
    qd_lo, qd_hi = model.qd_bounds()
    base_qd = np.zeros(6)
    base_qd[0] = v
    for d in range(D):
        e = problem.dom[d]
        x[e["T"]] = durations[d]
        n_stance = len(problem.contacts[d])
        for k in range(N):
            t_s = starts[d] + durations[d] * k / (N - 1)
            q = np.zeros(NQ)
            q[0] = v * t_s
            q[2] = z_nom
            qd = np.zeros(NQ)
            qd[0] = v
            for leg in LEG_ORDER:
                pos, vel = foot_target(leg, t_s)
                angles = leg_ik(model, q[0:3], q[3:6], leg, pos)
                ls = leg_joint_slice(leg)
                q[ls] = angles
                qd[ls] = leg_joint_rates(model, q, leg, vel, base_qd)
            np.clip(qd, qd_lo, qd_hi, out=qd)
            x[e["q"][k]] = q
            x[e["qd"][k]] = qd
            for leg in problem.contacts[d]:
                x[e["lam"][leg][k]] = (0.0, 0.0, model.weight / n_stance)
    return x


def friction_cone_margin(lam, mu: float) -> float:
    """Cone margin ||(lx, ly)|| - mu*lz; nonpositive inside the cone.

    The NLP enforces the differentiable squared form lx^2 + ly^2 <= mu^2 lz^2
    with lz >= 0; this helper reports the equivalent norm-form margin.
    """
    lam = np.asarray(lam, dtype=float)
    return float(np.hypot(lam[0], lam[1]) - mu * lam[2])


def cost_of_transport(trajectory: StrideTrajectory, model: RobotModel) -> float:
    """Work-based cost of transport of a sampled stride.

    Integral of |u . qd_joints| by the trapezoidal rule on the trajectory's
    own mesh, divided by weight times forward displacement.
    """
    dx = trajectory.forward_displacement()
    if abs(dx) < 1e-12:
        raise ZeroDisplacement("stride has no forward displacement")
    work = 0.0
    for dom in trajectory.domains:
        p = np.sum(np.abs(dom.u * dom.qd[:, 6:]), axis=1)
        work += float(np.trapezoid(p, dom.time))
    return work / (model.weight * dx)


def extract_trajectory(problem: GallopNlp, x) -> StrideTrajectory:
    """Unpack a decision vector into a per-domain sampled trajectory."""
    x = problem.check_layout(x)
    N, D = problem.N, problem.D
    T = x[problem.T_idx]
    starts = np.concatenate([[0.0], np.cumsum(T)[:-1]])
    domains = []
    for d in range(D):
        e = problem.dom[d]
        ts = starts[d] + T[d] * np.arange(N) / (N - 1)
        forces = {leg: x[idx] for leg, idx in e["lam"].items()}
        domains.append(DomainTrajectory(
            contact_legs=problem.contacts[d],
            time=ts,
            q=x[e["q"]],
            qd=x[e["qd"]],
            u=x[e["u"]],
            forces=forces,
        ))
    dx = domains[-1].q[-1, 0] - domains[0].q[0, 0]
    total = float(T.sum())
    return StrideTrajectory(
        domains=domains,
        event_times=list(starts),
        stride_duration=total,
        average_speed=float(dx / total),
        meta={"template": problem.template.name,
              "target_speed": problem.target_speed,
              "scheme": problem.mesh.scheme,
              "points_per_domain": N},
    )


AUDIT_FAMILIES = ("dynamics", "holonomic_stance", "unilateral_swing",
                  "average_speed", "periodicity", "friction_cone",
                  "touchdown_velocity", "limits", "initial_yaw")


def audit_constraints(problem: GallopNlp, x, tolerances=None) -> dict:
    """Per-family worst violations (raw and scaled) with pass/fail flags.

    Families follow the optimization constraint list: dynamics (collocation
    defects, power slacks), stance holonomic pins, swing unilateral
    clearance, average speed, periodicity (junction/reset conditions),
    friction cone, touchdown velocity, box limits, and initial yaw.
    """
    x = problem.check_layout(x)
    tol_default = 1e-6
    tolerances = tolerances or {}
    c_eq, c_ineq = problem.constraints(x)
    report = {}
    for fam in AUDIT_FAMILIES:
        report[fam] = {"max_violation": 0.0, "max_scaled": 0.0}

    for fam, r0, cnt in problem.eq_families:
        if cnt == 0:
            continue
        seg = np.abs(c_eq[r0:r0 + cnt])
        scaled = seg / problem.c_scale_eq[r0:r0 + cnt]
        report[fam]["max_violation"] = max(report[fam]["max_violation"],
                                           float(seg.max()))
        report[fam]["max_scaled"] = max(report[fam]["max_scaled"],
                                        float(scaled.max()))
    for fam, r0, cnt in problem.ineq_families:
        if cnt == 0:
            continue
        seg = np.maximum(c_ineq[r0:r0 + cnt], 0.0)
        scaled = seg / problem.c_scale_ineq[r0:r0 + cnt]
        report[fam]["max_violation"] = max(report[fam]["max_violation"],
                                           float(seg.max()))
        report[fam]["max_scaled"] = max(report[fam]["max_scaled"],
                                        float(scaled.max()))

    bound_gap = np.maximum(problem.lb - x, x - problem.ub)
    bound_gap = np.maximum(bound_gap, 0.0)
    report["limits"]["max_violation"] = float(bound_gap.max())
    report["limits"]["max_scaled"] = float((bound_gap / problem.x_scale).max())

    for fam in AUDIT_FAMILIES:
        tol = float(tolerances.get(fam, tol_default))
        report[fam]["tolerance"] = tol
        report[fam]["passed"] = report[fam]["max_scaled"] <= tol
    report["all_passed"] = all(report[f]["passed"] for f in AUDIT_FAMILIES)
    return report
