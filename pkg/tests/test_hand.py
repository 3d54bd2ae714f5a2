import math

import numpy as np
import pytest

from insertion.errors import CollinearContacts, DatasetError, HandError, InfeasibleTriangle, JointLimit
from insertion.hand import (
    CONSTRAINT_TOL, ContactTriangle, FingerParams, Hand, HandConfig, contact_triangle, equilibrium,
    finger_energy, finger_fk, finger_ik, frame_rate, generate_dataset, load_dataset, object_frame, radial_base_pose,
    sample_grasp, save_dataset, step, tendon_residual,
)
from insertion.posemath import Pose, so3_exp


def kkt_oracle(params: FingerParams, a: float) -> np.ndarray:
    """Interior minimizer of the spring energy on the tendon line"""
    lam = params.r_a * a / (params.r_p ** 2 / params.k_p + params.r_d ** 2 / params.k_d)
    return np.array([lam * params.r_p / params.k_p, lam * params.r_d / params.k_d])


def random_finger(rng):
    return FingerParams(k_p=rng.uniform(0.5, 2.0), k_d=rng.uniform(0.5, 2.0),
                        r_a=rng.uniform(3.0, 7.0), r_p=rng.uniform(3.0, 7.0), r_d=rng.uniform(3.0, 7.0))


def check_single_finger(rng, draws):
    for _ in range(draws):
        params = random_finger(rng)
        lam = rng.uniform(0.01, 0.1)
        q_star = np.array([lam * params.r_p / params.k_p, lam * params.r_d / params.k_d])
        a = (params.r_p * q_star[0] + params.r_d * q_star[1]) / params.r_a
        hand = Hand([params])
        start = HandConfig(np.zeros((1, 2)), np.zeros(1))
        q = hand.equilibrium(start, [a]).q[0]
        assert np.allclose(q, kkt_oracle(params, a), atol=1e-6)


@pytest.mark.unit
class TestFingerKinematics:
    """Planar two-link finger"""

    def test_straight_finger_points_down_the_hand_axis(self):
        params = FingerParams(base_pose=radial_base_pose(0.0, 70.0))
        assert np.allclose(finger_fk([0.0, 0.0], params), [70.0, 0.0, 80.0])

    def test_curl_moves_toward_palm_axis(self):
        params = FingerParams(base_pose=radial_base_pose(0.0, 70.0))
        tip = finger_fk([0.0, math.pi / 2], params)
        assert np.allclose(tip, [30.0, 0.0, 40.0])

    def test_joint_limits(self):
        with pytest.raises(JointLimit):
            finger_fk([-0.1, 0.2], FingerParams())
        with pytest.raises(JointLimit):
            finger_fk([0.2, 1.7], FingerParams())

    def test_ik_inverts_fk(self):
        params = FingerParams()
        q = np.array([0.4, 0.7])
        plane = finger_fk(q, params)[:2]
        assert np.allclose(finger_ik(plane, params), q, atol=1e-12)

    def test_ik_out_of_reach(self):
        with pytest.raises(JointLimit):
            finger_ik(np.array([100.0, 0.0]), FingerParams())

    def test_invalid_parameters(self):
        with pytest.raises(HandError):
            FingerParams(k_p=0.0)


@pytest.mark.unit
class TestContacts:
    """Contact triangle and object frame"""

    def test_triangle_lengths(self):
        P = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
        assert np.allclose(contact_triangle(P).as_array(), [3.0, 5.0, 4.0])

    def test_collinear_contacts(self):
        P = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        with pytest.raises(CollinearContacts):
            contact_triangle(P)

    def test_triangle_inequality(self):
        with pytest.raises(InfeasibleTriangle):
            ContactTriangle(1.0, 1.0, 3.0)

    def test_frame_origin_is_centroid(self):
        P = np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]])
        X = object_frame(P)
        assert np.allclose(X.translation, [1.0, 1.0, 0.0])
        assert np.allclose(X.rotation, np.eye(3))

    def test_frame_rotates_with_contacts(self, rng):
        P = rng.normal(size=(3, 3)) * 20.0
        R = so3_exp(rng.normal(size=3))
        X = object_frame(P)
        X_rot = object_frame(P @ R.T)
        assert np.allclose(X_rot.rotation, R @ X.rotation, atol=1e-12)
        assert np.allclose(X_rot.translation, R @ X.translation, atol=1e-12)

    def test_frame_rate_wraps_angles(self):
        a = Pose(so3_exp(np.array([math.pi - 0.01, 0.0, 0.0])), np.zeros(3))
        b = Pose(so3_exp(np.array([-(math.pi - 0.01), 0.0, 0.0])), np.zeros(3))
        rate = frame_rate(a, b, 1.0)
        assert abs(rate.omega[0]) == pytest.approx(0.02, abs=1e-9)


@pytest.mark.unit
class TestEquilibrium:
    """Energy minimization under tendon and triangle constraints"""

    def test_single_finger_kkt(self, rng):
        check_single_finger(rng, 20)

    @pytest.mark.slow
    def test_single_finger_kkt_sweep(self):
        check_single_finger(np.random.default_rng(99), 1000)

    def test_finger_energy(self):
        params = FingerParams(k_p=2.0, k_d=1.0)
        assert finger_energy([0.0, 0.0], params) == 0.0
        assert finger_energy([0.5, 1.0], params) == pytest.approx(0.75)

    def test_tendon_residual(self):
        params = FingerParams(r_a=4.0, r_p=5.0, r_d=3.0)
        assert tendon_residual([0.2, 0.1], 0.325, params) == pytest.approx(0.0)
        assert tendon_residual([0.0, 0.0], 1.0, params) == pytest.approx(4.0)

    def test_equilibrium_holds_tendon_relation(self):
        params = FingerParams()
        hand = Hand([params])
        q = hand.equilibrium(HandConfig(np.zeros((1, 2)), np.zeros(1)), [0.1]).q[0]
        assert abs(tendon_residual(q, 0.1, params)) <= CONSTRAINT_TOL

    def test_fixed_point(self, hand):
        state = hand.config_at([[0.5, 0.6], [0.7, 0.4], [0.6, 0.5]])
        P = hand.contacts(state.q)
        result = hand.equilibrium(state, state.a, contact_triangle(P))
        assert np.allclose(result.q, state.q, atol=1e-4)
        assert result.violation <= CONSTRAINT_TOL

    def test_triangle_solves_are_stationary(self, hand, rng):
        solved = 0
        for _ in range(30):
            state = hand.config_at(rng.uniform(0.3, 1.1, (3, 2)))
            tri = contact_triangle(hand.contacts(state.q))
            try:
                result = hand.equilibrium(state, state.a + rng.uniform(-0.02, 0.02, 3), tri)
            except InfeasibleTriangle:
                continue
            solved += 1
            assert result.projected_gradient <= 1e-6
            assert result.violation <= CONSTRAINT_TOL
        assert solved >= 25

    def test_equilibrium_is_a_local_minimum(self, hand, rng):
        start = HandConfig(np.zeros((3, 2)), np.zeros(3))
        result = hand.equilibrium(start, [0.1, 0.15, 0.2])
        for i, f in enumerate(hand.fingers):
            # tendon-preserving direction for finger i
            d = np.zeros((3, 2))
            d[i] = np.array([f.r_d, -f.r_p]) / math.hypot(f.r_p, f.r_d)
            for eps in (-1e-2, -1e-3, 1e-3, 1e-2):
                assert hand.energy(result.q + eps * d) >= result.energy - 1e-12

    def test_stiff_distal_limit(self):
        params = FingerParams(k_p=1.0, k_d=1e6)
        result = Hand([params]).equilibrium(HandConfig(np.zeros((1, 2)), np.zeros(1)), [0.1])
        assert np.allclose(result.q[0], kkt_oracle(params, 0.1), atol=1e-6)
        assert result.q[0, 1] < 1e-6
        assert result.q[0, 0] == pytest.approx(params.r_a * 0.1 / params.r_p, abs=1e-6)

    def test_step_agrees_when_dt_is_halved(self, hand):
        state = hand.config_at([[0.5, 0.6], [0.7, 0.4], [0.6, 0.5]])
        tri = contact_triangle(hand.contacts(state.q))
        a_dot, dt = [0.3, -0.2, 0.1], 1.0 / 30.0
        X_full, _, _ = hand.step(state, a_dot, dt, tri)
        _, mid, _ = hand.step(state, a_dot, dt / 2, tri)
        X_half, _, _ = hand.step(mid, a_dot, dt / 2, tri)
        assert np.allclose(X_full.translation, X_half.translation, atol=1e-5)
        assert np.allclose(X_full.rotation, X_half.rotation, atol=1e-6)

    def test_step_keeps_triangle(self, hand):
        state = hand.config_at([[0.5, 0.6], [0.7, 0.4], [0.6, 0.5]])
        tri = contact_triangle(hand.contacts(state.q))
        _, nxt, _ = hand.step(state, [0.3, -0.2, 0.1], 1.0 / 30.0, tri)
        drift = np.abs(contact_triangle(hand.contacts(nxt.q)).as_array() - tri.as_array())
        assert drift.max() <= 1e-3

    def test_zero_action_is_identity(self, hand):
        state = hand.config_at([[0.5, 0.6], [0.7, 0.4], [0.6, 0.5]])
        X = hand.object_frame(state)
        X_next, nxt, X_dot = step(X, state, np.zeros(3), 1.0 / 30.0, hand=hand)
        assert nxt is state
        assert X_next is X
        assert np.array_equal(X_dot.as_vector(), np.zeros(6))

    def test_non_positive_dt(self, hand):
        state = hand.config_at([[0.5, 0.6], [0.7, 0.4], [0.6, 0.5]])
        with pytest.raises(HandError):
            hand.step(state, [0.1, 0.1, 0.1], 0.0)

    def test_unreachable_triangle(self, hand):
        state = hand.config_at([[0.5, 0.6], [0.7, 0.4], [0.6, 0.5]])
        with pytest.raises(InfeasibleTriangle):
            equilibrium(state, state.a, ContactTriangle(400.0, 400.0, 400.0), hand=hand)

    def test_config_outside_limits(self, hand):
        with pytest.raises(JointLimit):
            hand.config_at([[2.0, 0.1], [0.1, 0.1], [0.1, 0.1]])


@pytest.mark.unit
class TestDataset:
    """Random-walk dataset generation"""

    def test_size_and_drift(self, small_dataset):
        assert len(small_dataset) == 1500
        assert max(r.triangle_drift for r in small_dataset.records) <= 1e-3

    def test_actions_within_rate_limit(self, small_dataset):
        assert np.all(np.abs(small_dataset.a_dot) <= 0.5)

    def test_empty_request(self):
        assert len(generate_dataset(3, 0)) == 0

    def test_invalid_request(self):
        with pytest.raises(DatasetError):
            generate_dataset(0, 10)

    def test_deterministic(self, hand):
        a = generate_dataset(2, 40, seed=5, hand=hand)
        b = generate_dataset(2, 40, seed=5, hand=hand)
        assert a.digest() == b.digest()

    def test_file_keeps_columns(self, small_dataset, tmp_path):
        path = tmp_path / "data.txt"
        save_dataset(small_dataset, path)
        loaded = load_dataset(path)
        assert loaded.digest() == small_dataset.digest()

    def test_bad_header(self, tmp_path):
        path = tmp_path / "data.txt"
        path.write_text("a b c\n1 2 3\n")
        with pytest.raises(DatasetError):
            load_dataset(path)

    def test_split_sizes(self, small_dataset):
        train, held = small_dataset.split(0.2, seed=1)
        assert len(train) == 1200 and len(held) == 300

    def test_sample_grasp_is_feasible(self, hand, rng):
        state = sample_grasp(hand, rng)
        assert np.all((state.q >= 0.15) & (state.q <= 1.3))
