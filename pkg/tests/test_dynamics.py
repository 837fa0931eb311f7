import numpy as np
import pytest
from scipy.integrate import solve_ivp

from gallop.dynamics import (
    compute_batch,
    dynamics_terms,
    euler_rate_map,
    euler_zyx_rotation,
    foot_kinematics,
    gravity_compensation,
    impact_map,
    leg_ik,
    leg_joint_rates,
    stance_forward_dynamics,
    standing_state,
    total_energy,
)
from gallop.errors import IkFailure, InconsistentContact
from gallop.model import LEG_ORDER, NQ, RobotModel, RobotState

RNG = np.random.default_rng(20240817)


@pytest.fixture(scope="module")
def model():
    return RobotModel.default()


def random_states(model, n, joint_scale=0.4, rate_scale=2.0):
    lo, hi = model.q_bounds()
    Q = np.zeros((n, NQ))
    Q[:, 0:2] = RNG.uniform(-1, 1, (n, 2))
    Q[:, 2] = RNG.uniform(0.15, 0.45, n)
    Q[:, 3:6] = RNG.uniform(-0.4, 0.4, (n, 3))
    mid = 0.5 * (lo[6:] + hi[6:])
    half = 0.5 * (hi[6:] - lo[6:])
    Q[:, 6:] = mid + joint_scale * half * RNG.uniform(-1, 1, (n, 12))
    QD = rate_scale * RNG.standard_normal((n, NQ))
    return Q, QD


class TestEulerKinematics:
    def test_rotation_is_orthonormal(self):
        e = RNG.uniform(-1, 1, (20, 3))
        R = euler_zyx_rotation(e)
        eye = np.einsum("bij,bkj->bik", R, R)
        assert np.allclose(eye, np.eye(3), atol=1e-12)

    def test_rate_map_matches_rotation_derivative(self):
        # [w]x = Rdot R^T with w = E @ euler_rates, via central differences.
        for _ in range(20):
            e = RNG.uniform(-1, 1, 3)
            er = RNG.standard_normal(3)
            eps = 1e-6
            Rp = euler_zyx_rotation(e + eps * er)
            Rm = euler_zyx_rotation(e - eps * er)
            Rdot = (Rp - Rm) / (2 * eps)
            W = Rdot @ euler_zyx_rotation(e).T
            w = euler_rate_map(e) @ er
            w_fd = np.array([W[2, 1], W[0, 2], W[1, 0]])
            assert np.allclose(w, w_fd, atol=1e-7)


class TestMassMatrix:
    def test_symmetric_positive_definite_1000_states(self, model):
        Q, QD = random_states(model, 1000)
        out = compute_batch(model, Q, QD)
        asym = np.abs(out.M - np.swapaxes(out.M, 1, 2)).max()
        assert asym < 1e-10
        eig = np.linalg.eigvalsh(out.M)
        assert eig.min() > 0.0

    def test_total_mass_block(self, model):
        # Uniform translational acceleration requires force = total mass * a.
        Q, QD = random_states(model, 5)
        out = compute_batch(model, Q, QD)
        a = np.array([0.7, -0.3, 1.1])
        qdd = np.zeros(NQ)
        qdd[0:3] = a
        for M in out.M:
            tau = M @ qdd
            assert np.allclose(tau[0:3], model.total_mass * a, atol=1e-10)

    def test_translation_invariance(self, model):
        Q, QD = random_states(model, 3)
        Q2 = Q.copy()
        Q2[:, 0] += 5.0
        Q2[:, 1] -= 2.0
        a = compute_batch(model, Q, QD)
        b = compute_batch(model, Q2, QD)
        assert np.allclose(a.M, b.M, atol=1e-12)
        assert np.allclose(a.h, b.h, atol=1e-12)

    def test_kinetic_energy_gradient(self, model):
        # d(KE)/d(qd) = M qd: independent consistency between M and energies.
        Q, QD = random_states(model, 3)
        out = compute_batch(model, Q, QD)
        for i in range(3):
            grad = out.M[i] @ QD[i]
            eps = 1e-6
            fd = np.zeros(NQ)
            for j in range(NQ):
                dp = QD[i].copy()
                dm = QD[i].copy()
                dp[j] += eps
                dm[j] -= eps
                kp, _ = total_energy(model, Q[i], dp)
                km, _ = total_energy(model, Q[i], dm)
                fd[j] = (kp - km) / (2 * eps)
            assert np.allclose(grad, fd, atol=1e-6)


class TestBias:
    def test_rest_bias_equals_gravity_gradient(self, model):
        # At qd = 0 the bias is G(q) = dV/dq; check against FD of potential.
        Q, _ = random_states(model, 10)
        Z = np.zeros_like(Q)
        out = compute_batch(model, Q, Z)
        eps = 1e-6
        for i in range(10):
            fd = np.zeros(NQ)
            for j in range(NQ):
                qp, qm = Q[i].copy(), Q[i].copy()
                qp[j] += eps
                qm[j] -= eps
                vp = compute_batch(model, qp[None], Z[:1], need_mass=False).potential[0]
                vm = compute_batch(model, qm[None], Z[:1], need_mass=False).potential[0]
                fd[j] = (vp - vm) / (2 * eps)
            assert np.allclose(out.h[i], fd, atol=1e-5)

    def test_coriolis_vanishes_at_rest(self, model):
        q = standing_state(model).q
        _, h0 = dynamics_terms(model, q, np.zeros(NQ))
        out = compute_batch(model, q[None], np.zeros((1, NQ)))
        assert np.allclose(h0, out.h[0], atol=1e-12)
        assert abs(h0[2] - model.weight) < 1e-9  # dV/dz = total weight


class TestFootKinematics:
    def test_standing_feet_on_ground(self, model):
        st = standing_state(model)
        for leg in LEG_ORDER:
            pos, vel, _ = foot_kinematics(model, st.q, st.qd, leg)
            assert abs(pos[2]) < 1e-9
            assert np.allclose(vel, 0.0, atol=1e-12)

    def test_jacobian_matches_finite_differences(self, model):
        Q, QD = random_states(model, 100)
        eps = 1e-6
        for i in range(100):
            leg = LEG_ORDER[i % 4]
            _, _, J = foot_kinematics(model, Q[i], QD[i], leg)
            fd = np.zeros((3, NQ))
            for j in range(NQ):
                qp, qm = Q[i].copy(), Q[i].copy()
                qp[j] += eps
                qm[j] -= eps
                pp, _, _ = foot_kinematics(model, qp, QD[i], leg)
                pm, _, _ = foot_kinematics(model, qm, QD[i], leg)
                fd[:, j] = (pp - pm) / (2 * eps)
            assert np.abs(J - fd).max() < 1e-6

    def test_velocity_is_jacobian_times_rates(self, model):
        Q, QD = random_states(model, 20)
        for i in range(20):
            for leg in LEG_ORDER:
                pos, vel, J = foot_kinematics(model, Q[i], QD[i], leg)
                assert np.allclose(vel, J @ QD[i], atol=1e-12)

    def test_jdot_qd_matches_finite_differences(self, model):
        Q, QD = random_states(model, 20)
        eps = 1e-7
        for i in range(20):
            out = compute_batch(model, Q[i][None], QD[i][None], need_mass=False)
            for li, leg in enumerate(LEG_ORDER):
                _, _, Jp = foot_kinematics(model, Q[i] + eps * QD[i], QD[i], leg)
                _, _, Jm = foot_kinematics(model, Q[i] - eps * QD[i], QD[i], leg)
                jdqd_fd = (Jp - Jm) / (2 * eps) @ QD[i]
                assert np.allclose(out.foot_avp[0, li], jdqd_fd, atol=1e-5)


class TestStanceDynamics:
    def test_flight_free_fall(self, model):
        st = standing_state(model)
        qdd, forces = stance_forward_dynamics(model, st.q, st.qd, np.zeros(12), [])
        expected = np.zeros(NQ)
        expected[2] = -model.gravity
        assert np.allclose(qdd, expected, atol=1e-9)
        assert forces == {}

    def test_static_equilibrium_force_balance(self, model):
        st = standing_state(model)
        u, forces = gravity_compensation(model, st.q, LEG_ORDER)
        qdd, lam = stance_forward_dynamics(model, st.q, st.qd, u, LEG_ORDER)
        assert np.abs(qdd).max() < 1e-8
        total_fz = sum(f[2] for f in lam.values())
        assert abs(total_fz - model.weight) < 1e-6

    def test_contact_acceleration_constraint(self, model):
        Q, QD = random_states(model, 20)
        for i in range(20):
            legs = ["LF", "RH"]
            batch = compute_batch(model, Q[i][None], QD[i][None], need_mass=False)
            J = batch.foot_jac[0, [LEG_ORDER.index(leg) for leg in legs]].reshape(-1, NQ)
            qd = QD[i] - np.linalg.pinv(J) @ (J @ QD[i])  # project onto contact manifold
            u = RNG.uniform(-5, 5, 12)
            qdd, _ = stance_forward_dynamics(model, Q[i], qd, u, legs)
            out = compute_batch(model, Q[i][None], qd[None], need_mass=False)
            Jq = out.foot_jac[0, [LEG_ORDER.index(leg) for leg in legs]].reshape(-1, NQ)
            jdqd = out.foot_avp[0, [LEG_ORDER.index(leg) for leg in legs]].reshape(-1)
            assert np.abs(Jq @ qdd + jdqd).max() < 1e-8

    def test_inconsistent_contact_rejected(self, model):
        st = standing_state(model)
        qd = np.zeros(NQ)
        qd[6] = 3.0  # abduction joint sweeping: stance foot clearly moving
        with pytest.raises(InconsistentContact):
            stance_forward_dynamics(model, st.q, qd, np.zeros(12), ["LH"])

    def test_massless_leg_limit(self, model):
        # With (near-)massless legs in stance, the torso obeys its own
        # rigid-body equation driven purely by the contact forces: torques
        # reach the torso only through lambda.
        import json
        from importlib import resources
        cfg = json.loads(resources.files("gallop.data").joinpath("a1_like.json").read_text())
        for key in ("hip_link", "upper_link", "lower_link"):
            cfg[key] = dict(cfg[key], mass=1e-7, inertia=[1e-9, 1e-9, 1e-9])
        light = RobotModel.from_dict(cfg)
        st = standing_state(light)
        M, h = compute_batch(light, st.q[None], st.qd[None]).M[0], \
            compute_batch(light, st.q[None], st.qd[None]).h[0]
        out = compute_batch(light, st.q[None], st.qd[None], need_mass=False)
        for _ in range(5):
            u = RNG.uniform(-10, 10, 12)
            qdd, lam = stance_forward_dynamics(light, st.q, st.qd, u, LEG_ORDER)
            rhs = -h[:6].copy()
            for leg, f in lam.items():
                J = out.foot_jac[0, LEG_ORDER.index(leg)]
                rhs += (J.T @ f)[:6]
            qdd_base_pred = np.linalg.solve(M[:6, :6], rhs)
            assert np.allclose(qdd[:6], qdd_base_pred, atol=1e-4)


class TestImpactMap:
    def test_zero_velocity_identity(self, model):
        st = standing_state(model)
        qd_plus, imp = impact_map(model, st.q, np.zeros(NQ), ["LF"])
        assert np.allclose(qd_plus, 0.0, atol=1e-12)
        assert np.allclose(imp["LF"], 0.0, atol=1e-12)

    def test_presatisfied_contact_no_change(self, model):
        st = standing_state(model)
        # Torso spinning about the LF foot: construct qd with zero LF foot velocity.
        qd = RNG.standard_normal(NQ)
        _, _, J = foot_kinematics(model, st.q, qd, "LF")
        qd = qd - np.linalg.pinv(J) @ (J @ qd)
        qd_plus, imp = impact_map(model, st.q, qd, ["LF"])
        assert np.allclose(qd_plus, qd, atol=1e-9)
        assert np.allclose(imp["LF"], 0.0, atol=1e-8)

    def test_energy_non_increasing_and_feet_stopped(self, model):
        Q, QD = random_states(model, 50)
        for i in range(50):
            legs = [LEG_ORDER[i % 4], LEG_ORDER[(i + 1) % 4]]
            M, _ = dynamics_terms(model, Q[i], QD[i])
            qd_plus, _ = impact_map(model, Q[i], QD[i], legs)
            ke_minus = 0.5 * QD[i] @ M @ QD[i]
            ke_plus = 0.5 * qd_plus @ M @ qd_plus
            assert ke_plus <= ke_minus + 1e-9 * max(1.0, ke_minus)
            for leg in legs:
                _, vel, J = foot_kinematics(model, Q[i], qd_plus, leg)
                assert np.abs(J @ qd_plus).max() < 1e-9


class TestEnergy:
    def test_zero_velocity_zero_kinetic(self, model):
        st = standing_state(model)
        k, p = total_energy(model, st.q, st.qd)
        assert k == 0.0
        assert p > 0.0

    def test_kinetic_quadratic_scaling(self, model):
        Q, QD = random_states(model, 5)
        for i in range(5):
            k1, _ = total_energy(model, Q[i], QD[i])
            k2, _ = total_energy(model, Q[i], 2.0 * QD[i])
            assert k2 == pytest.approx(4.0 * k1, rel=1e-12)

    def test_flight_energy_conservation(self, model):
        st = standing_state(model)
        q0 = st.q.copy()
        q0[2] = 0.6
        qd0 = np.zeros(NQ)
        qd0[0] = 1.2
        qd0[2] = 1.0
        qd0[4] = 0.8
        qd0[6:] = RNG.uniform(-1.5, 1.5, 12)

        def rhs(_, x):
            qdd, _ = stance_forward_dynamics(model, x[:NQ], x[NQ:], np.zeros(12), [])
            return np.concatenate([x[NQ:], qdd])

        x0 = np.concatenate([q0, qd0])
        sol = solve_ivp(rhs, (0.0, 0.2), x0, rtol=1e-11, atol=1e-11, method="RK45")
        assert sol.success
        e0 = sum(total_energy(model, q0, qd0))
        ef = sum(total_energy(model, sol.y[:NQ, -1], sol.y[NQ:, -1]))
        assert abs(ef - e0) / abs(e0) < 1e-6


class TestInverseKinematics:
    def test_roundtrip_through_forward_kinematics(self, model):
        from gallop.model import leg_joint_slice
        st = standing_state(model)
        solved = 0
        for leg in LEG_ORDER:
            pos, _, _ = foot_kinematics(model, st.q, st.qd, leg)
            for _ in range(20):
                target = pos + RNG.uniform(-0.08, 0.08, 3)
                q = st.q.copy()
                try:
                    q[leg_joint_slice(leg)] = leg_ik(model, q[0:3], q[3:6], leg, target)
                except IkFailure:
                    continue  # out of reach or joint-limited draw
                got, _, _ = foot_kinematics(model, q, st.qd, leg)
                assert np.allclose(got, target, atol=1e-9)
                solved += 1
        assert solved >= 60

    def test_out_of_reach_raises(self, model):
        st = standing_state(model)
        with pytest.raises(IkFailure):
            leg_ik(model, st.q[0:3], st.q[3:6], "LF", np.array([2.0, 0.1, 0.0]))

    def test_joint_rates_track_foot_velocity(self, model):
        st = standing_state(model)
        base_qd = np.zeros(6)
        base_qd[0] = 1.0
        want = np.array([0.0, 0.0, 0.0])
        rates = leg_joint_rates(model, st.q, "RF", want, base_qd)
        qd = np.zeros(NQ)
        qd[:6] = base_qd
        from gallop.model import leg_joint_slice
        qd[leg_joint_slice("RF")] = rates
        _, vel, _ = foot_kinematics(model, st.q, qd, "RF")
        assert np.allclose(vel, want, atol=1e-10)


class TestStateSerialization:
    def test_roundtrip(self, model):
        st = standing_state(model)
        arr = st.to_array()
        assert arr.shape == (36,)
        st2 = RobotState.from_array(arr)
        assert np.array_equal(st2.q, st.q)
        assert np.array_equal(st2.qd, st.qd)
