import numpy as np
import pytest

from gallop.errors import InfeasibleBounds, LayoutMismatch, ZeroDisplacement
from gallop.hybrid import DomainTrajectory, StrideTrajectory
from gallop.model import LEG_ORDER, RobotModel
from gallop.taxonomy import find_template
from gallop.transcription import (
    MeshConfig,
    audit_constraints,
    cost_of_transport,
    extract_trajectory,
    friction_cone_margin,
    initial_guess,
    transcribe,
)

RNG = np.random.default_rng(11)


@pytest.fixture(scope="module")
def model():
    return RobotModel.default()


@pytest.fixture(scope="module")
def g2(model):
    tpl = find_template("G2-rotary-FR")
    mesh = MeshConfig(points_per_domain=5)
    problem = transcribe(tpl, model, 2.0, mesh)
    guess = initial_guess(tpl, model, 2.0, mesh, problem=problem)
    return problem, guess


def expected_counts(template, N, stance_form="acceleration"):
    """Independent variable/constraint counts from the layout formula."""
    contacts = template.schedule.contact_sets
    D = len(contacts)
    events = template.schedule.events
    c_sizes = [len(c) for c in contacts]
    td_post = [len(contacts[j]) for j in range(D) if events[j][1] == "TD"]
    n_vars = sum(N * 72 + 3 * N * c + 1 for c in c_sizes) + 3 * sum(td_post)

    # stance/swing sample bookkeeping
    def runs(flags):
        n = len(flags)
        if not any(flags):
            return []
        if all(flags):
            return [list(range(n))]
        starts = [i for i in range(n) if flags[i] and not flags[(i - 1) % n]]
        out = []
        for s in starts:
            run, i = [], s
            while flags[i]:
                run.append(i)
                i = (i + 1) % n
            out.append(run)
        return out

    pins = 0
    clear = 0
    for leg in ("LH", "LF", "RF", "RH"):
        flags = [leg in c for c in contacts]
        for run in runs(flags):
            if stance_form == "position":
                kept = N + (len(run) - 1) * (N - 1)
                pins += kept + 2 * (kept - 1)
            elif stance_form == "acceleration":
                # one z anchor; acceleration rows at every stance sample
                pins += 1 + 3 * N * len(run)
            else:
                # one z anchor; J qd rows everywhere except duplicates that
                # repeat a state across a lift-off junction
                n_vel = N
                for d in run[1:]:
                    n_vel += N - (1 if events[d][1] == "LO" else 0)
                pins += 1 + 3 * n_vel
        for run in runs([not f for f in flags]):
            clear += N + (len(run) - 1) * (N - 1)

    n_eq = D * (N - 1) * 36 + D * N * 12
    for j in range(D):
        if events[j][1] == "LO":
            n_eq += 36
        else:
            n_eq += (17 if j == 0 else 18) + 18
            if stance_form != "velocity":
                n_eq += 3 * len(contacts[j])
    n_eq += pins + 1 + 1 + 2
    n_ineq = clear + sum(c_sizes) * N + 2 * sum(1 for e in events if e[1] == "TD")
    return n_vars, n_eq, n_ineq


class TestLayout:
    @pytest.mark.parametrize("form", ["acceleration", "velocity", "position"])
    def test_counts_match_formula_g2_n10(self, model, form):
        tpl = find_template("G2-rotary-FR")
        problem = transcribe(tpl, model, 2.0,
                             MeshConfig(points_per_domain=10, stance_form=form))
        n_vars, n_eq, n_ineq = expected_counts(tpl, 10, form)
        assert problem.n == n_vars
        assert problem.m_eq == n_eq
        assert problem.m_ineq == n_ineq

    @pytest.mark.parametrize("name", ["G0-transverse-FR", "GG-rotary-FR",
                                      "GE-transverse-FR"])
    def test_counts_other_templates(self, model, name):
        tpl = find_template(name)
        problem = transcribe(tpl, model, 1.5, MeshConfig(points_per_domain=4))
        n_vars, n_eq, n_ineq = expected_counts(tpl, 4)
        assert problem.n == n_vars
        assert problem.m_eq == n_eq
        assert problem.m_ineq == n_ineq

    def test_layout_mismatch_rejected(self, g2):
        problem, _ = g2
        with pytest.raises(LayoutMismatch):
            problem.objective(np.zeros(problem.n + 1))

    def test_absurd_speed_rejected(self, model):
        tpl = find_template("G2-rotary-FR")
        with pytest.raises(InfeasibleBounds):
            transcribe(tpl, model, 100.0, MeshConfig())


class TestSpeedConstraint:
    def test_standing_residual_is_minus_target(self, g2):
        problem, guess = g2
        x = guess.copy()
        # Freeze the torso: zero displacement makes the average-speed
        # residual exactly -target.
        for d in range(problem.D):
            e = problem.dom[d]
            q = x[e["q"]]
            q[:, 0] = 0.0
            x[e["q"]] = q
        c_eq, _ = problem.constraints(x)
        r0, _ = problem.rows["speed"]
        assert c_eq[r0] == pytest.approx(-2.0, abs=1e-12)

    def test_guess_speed_residual_zero(self, g2):
        problem, guess = g2
        c_eq, _ = problem.constraints(guess)
        r0, _ = problem.rows["speed"]
        assert abs(c_eq[r0]) < 1e-10


class TestFrictionCone:
    def test_margin_example(self):
        assert friction_cone_margin([0.0, 0.0, 10.0], 0.6) == pytest.approx(-6.0)

    def test_squared_rows_match_sign(self, g2):
        problem, guess = g2
        _, c_ineq = problem.constraints(guess)
        r0, cnt = problem.rows["cone"]
        # guess forces are vertical: strictly inside the cone
        assert (c_ineq[r0:r0 + cnt] < 0).all()


class TestCostOfTransport:
    def _flat_trajectory(self, model, power, duration, displacement):
        n = 11
        ts = np.linspace(0.0, duration, n)
        q = np.zeros((n, 18))
        q[:, 0] = np.linspace(0.0, displacement, n)
        qd = np.zeros((n, 18))
        qd[:, 6] = 1.0
        u = np.zeros((n, 12))
        u[:, 0] = power
        dom = DomainTrajectory(contact_legs=("LH",), time=ts, q=q, qd=qd,
                               u=u, forces={"LH": np.zeros((n, 3))})
        return StrideTrajectory(domains=[dom], event_times=[0.0],
                                stride_duration=duration,
                                average_speed=displacement / duration)

    def test_constant_power_closed_form(self, model):
        traj = self._flat_trajectory(model, 10.0, 1.0, 1.0)
        expected = 10.0 * 1.0 / (model.weight * 1.0)
        assert cost_of_transport(traj, model) == pytest.approx(expected, rel=1e-12)

    def test_zero_torque_zero_cot(self, model):
        traj = self._flat_trajectory(model, 0.0, 1.0, 1.0)
        assert cost_of_transport(traj, model) == 0.0

    def test_sign_invariance(self, model):
        traj = self._flat_trajectory(model, 10.0, 1.0, 1.0)
        for dom in traj.domains:
            dom.u = -dom.u
            dom.qd = -dom.qd
        assert cost_of_transport(traj, model) == pytest.approx(
            10.0 / model.weight, rel=1e-12)

    def test_zero_displacement_rejected(self, model):
        traj = self._flat_trajectory(model, 10.0, 1.0, 0.0)
        with pytest.raises(ZeroDisplacement):
            cost_of_transport(traj, model)


class TestInitialGuess:
    def test_within_bounds(self, g2):
        problem, guess = g2
        assert (guess >= problem.lb - 1e-12).all()
        assert (guess <= problem.ub + 1e-12).all()

    def test_stance_feet_pinned(self, g2):
        from gallop.dynamics import compute_batch
        from gallop.model import LEG_ORDER
        problem, guess = g2
        Q = guess[problem.Q_idx]
        QD = guess[problem.QD_idx]
        batch = compute_batch(problem.model, Q, QD, need_mass=False)
        N = problem.N
        for d in range(problem.D):
            for leg in problem.contacts[d]:
                li = LEG_ORDER.index(leg)
                pos = batch.foot_pos[d * N:(d + 1) * N, li]
                assert np.abs(pos - pos[0]).max() < 1e-8
                assert np.abs(pos[:, 2]).max() < 1e-8
                vel = batch.foot_vel[d * N:(d + 1) * N, li]
                assert np.abs(vel).max() < 1e-8

    def test_dynamics_defects_nonzero(self, g2):
        problem, guess = g2
        report = audit_constraints(problem, guess)
        assert report["dynamics"]["max_violation"] > 1e-3

    def test_impact_junction_rows_exist(self, g2):
        problem, _ = g2
        kinds = [jn["kind"] for jn in problem.junctions]
        assert kinds.count("TD") == 4
        assert kinds.count("LO") == 4
        assert problem.junctions[0]["cyclic"]
        assert problem.junctions[0]["kind"] == "TD"


class TestExtract:
    def test_roundtrip_durations_and_counts(self, g2):
        problem, guess = g2
        traj = extract_trajectory(problem, guess)
        T = guess[problem.T_idx]
        for d, dom in enumerate(traj.domains):
            assert dom.duration == pytest.approx(T[d], abs=1e-15)
            assert len(dom.time) == problem.N
        assert traj.stride_duration == pytest.approx(T.sum(), rel=1e-15)
        assert sum(len(d.time) for d in traj.domains) == problem.S

    def test_objective_equals_cot_numerator(self, g2):
        problem, guess = g2
        x = guess.copy()
        # complementary slack values reproduce |u qd| exactly
        rng = np.random.default_rng(5)
        for d in range(problem.D):
            e = problem.dom[d]
            u = rng.uniform(-10, 10, (problem.N, 12))
            x[e["u"]] = u
            qd = x[e["qd"]]
            power = u * qd[:, 6:]
            x[e["pp"]] = np.maximum(power, 0.0)
            x[e["pm"]] = np.maximum(-power, 0.0)
        traj = extract_trajectory(problem, x)
        cot = cost_of_transport(traj, problem.model)
        dx = traj.forward_displacement()
        assert problem.objective(x) / (problem.model.weight * dx) == \
            pytest.approx(cot, abs=1e-10)

    def test_slack_rows_satisfied_by_construction(self, g2):
        problem, guess = g2
        x = guess.copy()
        c_eq, _ = problem.constraints(x)
        r0, cnt = problem.rows["slacks"]
        assert np.abs(c_eq[r0:r0 + cnt]).max() < 1e-12


class TestAudit:
    def test_families_named(self, g2):
        problem, guess = g2
        report = audit_constraints(problem, guess)
        assert set(report.keys()) - {"all_passed"} == {
            "dynamics", "holonomic_stance", "unilateral_swing",
            "average_speed", "periodicity", "friction_cone",
            "touchdown_velocity", "limits", "initial_yaw"}

    def test_limits_family_sees_bound_violation(self, g2):
        problem, guess = g2
        x = guess.copy()
        x[problem.T_idx[0]] = problem.model.phase_duration_max + 0.1
        report = audit_constraints(problem, x)
        assert not report["limits"]["passed"]


def fd_column_check(problem, x, n_cols=40, eps=1e-6, rtol=2e-4):
    J_eq, J_ineq = problem.jacobian(x)
    J_eq = J_eq.toarray()
    J_ineq = J_ineq.toarray()
    cols = RNG.choice(problem.n, size=n_cols, replace=False)
    worst = 0.0
    for j in cols:
        dx = np.zeros(problem.n)
        dx[j] = eps
        ce_p, ci_p = problem.constraints(x + dx)
        ce_m, ci_m = problem.constraints(x - dx)
        fd_e = (ce_p - ce_m) / (2 * eps)
        fd_i = (ci_p - ci_m) / (2 * eps)
        scale_e = max(1.0, np.abs(fd_e).max())
        scale_i = max(1.0, np.abs(fd_i).max()) if fd_i.size else 1.0
        err_e = np.abs(J_eq[:, j] - fd_e).max() / scale_e
        err_i = np.abs(J_ineq[:, j] - fd_i).max() / scale_i if fd_i.size else 0.0
        worst = max(worst, err_e, err_i)
    return worst


class TestJacobian:
    def _perturbed(self, problem, guess, scale=0.02):
        x = guess + scale * problem.x_scale * RNG.standard_normal(problem.n)
        return np.clip(x, problem.lb, problem.ub)

    def test_matches_finite_differences_trapezoid(self, g2):
        problem, guess = g2
        x = self._perturbed(problem, guess)
        assert fd_column_check(problem, x) < 1e-4

    def test_matches_finite_differences_hermite_simpson(self, model):
        tpl = find_template("G2-rotary-FR")
        mesh = MeshConfig(points_per_domain=4, scheme="hermite-simpson")
        problem = transcribe(tpl, model, 2.0, mesh)
        guess = initial_guess(tpl, model, 2.0, mesh, problem=problem)
        x = self._perturbed(problem, guess)
        assert fd_column_check(problem, x, n_cols=30) < 1e-4

    def test_sparsity_covers_fd_nonzeros(self, g2):
        problem, guess = g2
        x = self._perturbed(problem, guess)
        P_eq, P_ineq = problem.jacobian_sparsity()
        P_eq = np.asarray(P_eq.todense())
        P_ineq = np.asarray(P_ineq.todense())
        eps = 1e-6
        for j in RNG.choice(problem.n, size=25, replace=False):
            dx = np.zeros(problem.n)
            dx[j] = eps
            ce_p, ci_p = problem.constraints(x + dx)
            ce_m, ci_m = problem.constraints(x - dx)
            fd_e = np.abs(ce_p - ce_m) / (2 * eps)
            fd_i = np.abs(ci_p - ci_m) / (2 * eps)
            assert not np.any(fd_e[~P_eq[:, j]] > 1e-6)
            if fd_i.size:
                assert not np.any(fd_i[~P_ineq[:, j]] > 1e-6)
