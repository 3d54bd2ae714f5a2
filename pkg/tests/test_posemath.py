import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from insertion.errors import NearPiRotation, PoseError, StaleObservation
from insertion.posemath import (
    Pose, PoseTracker, Twist, compose, exp, initialize_track, inverse, log, observe, relative, so3_exp,
    so3_log, tilt_vector,
)
from insertion.schemas import TrackerConfig


def random_twist(rng, max_angle=3.0, max_trans=100.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Twist(axis * rng.uniform(0.0, max_angle), rng.uniform(-max_trans, max_trans, size=3))


def pose_close(a: Pose, b: Pose, tol=1e-9) -> bool:
    return np.allclose(a.rotation, b.rotation, atol=tol) and np.allclose(a.translation, b.translation, atol=tol)


@pytest.mark.unit
class TestLieMaps:
    """Exponential and logarithm on SE(3)"""

    def test_pure_translation_is_exact(self):
        p = exp(Twist(np.zeros(3), [1.0, -2.0, 3.5]))
        assert np.array_equal(p.rotation, np.eye(3))
        assert np.array_equal(p.translation, [1.0, -2.0, 3.5])

    def test_quarter_turn(self):
        R = so3_exp(np.array([0.0, 0.0, math.pi / 2]))
        assert np.allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])

    def test_roundtrip(self, rng):
        for _ in range(200):
            xi = random_twist(rng)
            back = log(exp(xi))
            assert np.allclose(back.as_vector(), xi.as_vector(), atol=1e-9)

    def test_small_angle_branch(self):
        xi = Twist([1e-7, -2e-7, 0.5e-7], [1.0, 2.0, 3.0])
        assert np.allclose(log(exp(xi)).as_vector(), xi.as_vector(), atol=1e-12)

    def test_near_pi_is_rejected(self):
        R = so3_exp(np.array([math.pi - 1e-8, 0.0, 0.0]))
        with pytest.raises(NearPiRotation):
            so3_log(R)

    def test_non_finite_twist(self):
        with pytest.raises(PoseError):
            Twist([np.nan, 0.0, 0.0], [0.0, 0.0, 0.0])

    @pytest.mark.slow
    def test_roundtrip_sweep(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(100_000):
            xi = random_twist(rng)
            worst = max(worst, float(np.max(np.abs(log(exp(xi)).as_vector() - xi.as_vector()))))
        assert worst <= 1e-9


@pytest.mark.unit
class TestComposition:
    """Composition, inverse and relative poses"""

    def test_inverse_cancels(self, rng):
        p = exp(random_twist(rng))
        assert pose_close(compose(p, inverse(p)), Pose.identity())

    def test_associativity(self, rng):
        for _ in range(200):
            a, b, c = (exp(random_twist(rng)) for _ in range(3))
            assert pose_close(compose(compose(a, b), c), compose(a, compose(b, c)))

    def test_relative(self, rng):
        a, b = exp(random_twist(rng)), exp(random_twist(rng))
        assert pose_close(compose(a, relative(a, b)), b)

    def test_long_chain_stays_orthonormal(self, rng):
        step = exp(random_twist(rng, max_angle=0.1, max_trans=1.0))
        p = Pose.identity()
        for _ in range(1000):
            p = compose(step, p)
        assert p.is_valid(1e-9)

    def test_line_format(self, rng):
        p = exp(random_twist(rng))
        assert pose_close(Pose.from_line(p.to_line()), p, tol=1e-12)
        with pytest.raises(PoseError):
            Pose.from_line("1 2 3")
        with pytest.raises(PoseError):
            Pose.from_line("1 2 3 0 0 0 0")


@pytest.mark.unit
class TestTiltVector:
    """Roll/pitch of a frame's z-axis"""

    def test_upright_has_no_tilt(self):
        assert np.array_equal(tilt_vector(np.eye(3)), np.zeros(2))

    def test_tilt_follows_rotation_axis(self):
        R = so3_exp(np.array([0.0, 0.2, 0.0]))
        assert np.allclose(tilt_vector(R), [0.0, 0.2])

    def test_yaw_does_not_tilt(self):
        R = so3_exp(np.array([0.0, 0.0, 1.3]))
        assert np.allclose(tilt_vector(R), 0.0, atol=1e-15)


@pytest.mark.unit
class TestTracker:
    """Seeded observation noise"""

    def test_zero_noise_returns_truth(self, rng):
        truth = exp(random_twist(rng))
        obs = PoseTracker(TrackerConfig()).observe(truth, 0.5)
        assert obs.pose is truth
        assert obs.stamp == 0.5

    def test_same_seed_same_noise(self, rng):
        truth = exp(random_twist(rng))
        cfg = TrackerConfig(trans_noise=5.0, rot_noise=5.0, seed=3)
        a = observe(truth, cfg, 1.0)
        b = observe(truth, cfg, 1.0)
        assert pose_close(a.pose, b.pose, tol=0.0)

    def test_targets_get_independent_noise(self):
        cfg = TrackerConfig(trans_noise=5.0, rot_noise=5.0, seed=3)
        tracker = PoseTracker(cfg)
        a = tracker.observe(Pose.identity(), 1.0, "object")
        b = tracker.observe(Pose.identity(), 1.0, "hole")
        assert not np.allclose(a.pose.translation, b.pose.translation)

    def test_noise_bounds(self):
        cfg = TrackerConfig(trans_noise=5.0, rot_noise=5.0, seed=11)
        tracker = PoseTracker(cfg)
        for k in range(200):
            obs = tracker.observe(Pose.identity(), k / 30.0)
            assert np.all(np.abs(obs.pose.translation) <= 5.0)

    def test_noise_statistics(self):
        tracker = PoseTracker(TrackerConfig(trans_noise=5.0, rot_noise=5.0, seed=21))
        obs = [tracker.observe(Pose.identity(), k / 30.0).pose for k in range(10_000)]
        trans = np.array([p.translation for p in obs])
        angles = np.array([Rotation.from_matrix(p.rotation).as_euler("xyz", degrees=True) for p in obs])
        assert np.all(np.abs(trans) <= 5.0)
        assert np.all(np.abs(angles) <= 5.0 + 1e-9)
        # uniform on [-5, 5]: mean absolute error 2.5 per axis
        assert np.allclose(np.abs(trans).mean(axis=0), 2.5, atol=0.1)
        assert np.allclose(np.abs(angles).mean(axis=0), 2.5, atol=0.1)
        assert np.allclose(trans.mean(axis=0), 0.0, atol=0.15)

    def test_initialization_is_wider(self):
        cfg = TrackerConfig(trans_noise=1.0, seed=5)
        widest = max(np.max(np.abs(initialize_track(Pose.identity(), cfg, clock=k / 30.0).pose.translation))
                     for k in range(100))
        assert 1.0 < widest <= 2.0

    def test_stale_query_rejected(self):
        tracker = PoseTracker(TrackerConfig())
        tracker.observe(Pose.identity(), 1.0)
        tracker.observe(Pose.identity(), 1.0)
        with pytest.raises(StaleObservation):
            tracker.observe(Pose.identity(), 0.5)
        assert tracker.queries == 2
