"""
SE(3) algebra and the simulated 6-D pose tracker.

Poses are immutable values: rotation matrix plus translation in mm. Twists
are (omega, v) pairs in the Lie algebra. The tracker stands in for the
vision pipeline: it returns the true pose perturbed by seeded uniform noise.
"""

import zlib
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NearPiRotation, PoseError, StaleObservation
from .schemas import TrackerConfig

logger = logging.getLogger(__name__)

RENORMALIZE_EVERY = 100
NEAR_PI_TOL = 1e-6
_SMALL_ANGLE = 1e-5


def skew(w: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(W: np.ndarray) -> np.ndarray:
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition through SVD)"""
    U, _, Vt = np.linalg.svd(R)
    Rn = U @ Vt
    if np.linalg.det(Rn) < 0:
        U[:, -1] *= -1
        Rn = U @ Vt
    return Rn


@dataclass(frozen=True)
class Twist:
    """Element of se(3): rotation part omega (rad), translation part v (mm)"""
    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))
        if not (np.all(np.isfinite(self.omega)) and np.all(np.isfinite(self.v))):
            raise PoseError("twist components must be finite")

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v])


@dataclass(frozen=True)
class Pose:
    """Rigid transform in SE(3); translation in mm"""
    rotation: np.ndarray
    translation: np.ndarray
    # compositions since the rotation was last re-orthonormalized
    drift_count: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "Pose":
        return cls(np.eye(3), np.asarray(t, dtype=float))

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix(), translation)

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or many points (n, 3)"""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)

    def to_line(self) -> str:
        """'tx ty tz qx qy qz qw' with repr-precision floats"""
        q = Rotation.from_matrix(self.rotation).as_quat()
        values = list(self.translation) + list(q)
        return " ".join(repr(float(v)) for v in values)

    @classmethod
    def from_line(cls, line: str) -> "Pose":
        parts = line.split()
        if len(parts) != 7:
            raise PoseError(f"expected 7 numbers in pose line, got {len(parts)}")
        values = np.array([float(p) for p in parts])
        q = values[3:]
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or norm < 1e-12:
            raise PoseError("pose line carries a zero quaternion")
        return cls(Rotation.from_quat(q / norm).as_matrix(), values[:3])


def compose(a: Pose, b: Pose) -> Pose:
    """a * b: apply b first, then a"""
    R = a.rotation @ b.rotation
    count = max(a.drift_count, b.drift_count) + 1
    if count >= RENORMALIZE_EVERY:
        R = orthonormalize(R)
        count = 0
    return Pose(R, a.rotation @ b.translation + a.translation, count)


def inverse(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation, p.drift_count)


def _left_jacobian(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    W = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + W @ W / 6.0
    A = (1.0 - np.cos(theta)) / theta ** 2
    B = (theta - np.sin(theta)) / theta ** 3
    return np.eye(3) + A * W + B * (W @ W)


def _left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    W = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + W @ W / 12.0
    half = 0.5 * theta
    C = (1.0 - half / np.tan(half)) / theta ** 2
    return np.eye(3) - 0.5 * W + C * (W @ W)


def so3_exp(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    W = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    return np.eye(3) + (np.sin(theta) / theta) * W + ((1.0 - np.cos(theta)) / theta ** 2) * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R; raises NearPiRotation where the axis sign is ambiguous"""
    s = 0.5 * vee(R - R.T)
    c = 0.5 * (np.trace(R) - 1.0)
    sin_theta = np.linalg.norm(s)
    theta = np.arctan2(sin_theta, np.clip(c, -1.0, 1.0))
    if abs(np.pi - theta) <= NEAR_PI_TOL:
        raise NearPiRotation(f"rotation angle {theta:.9f} is within {NEAR_PI_TOL} of pi")
    if theta < _SMALL_ANGLE:
        return s * (1.0 + theta ** 2 / 6.0)
    return s * (theta / sin_theta)


def exp(xi: Twist) -> Pose:
    """SE(3) exponential; exact for pure translations"""
    R = so3_exp(xi.omega)
    return Pose(R, _left_jacobian(xi.omega) @ xi.v)


def log(p: Pose) -> Twist:
    omega = so3_log(p.rotation)
    return Twist(omega, _left_jacobian_inv(omega) @ p.translation)


def relative(a: Pose, b: Pose) -> Pose:
    """Pose of b expressed in the frame of a"""
    return compose(inverse(a), b)


def tilt_vector(rotation: np.ndarray) -> np.ndarray:
    """Roll/pitch of a frame's z-axis away from the reference z, as a 2-vector (rad).

    The vector points along the rotation axis that carries +z onto the frame's
    z-axis; its norm is the tilt angle.
    """
    z = rotation[:, 2]
    axis = np.cross(np.array([0.0, 0.0, 1.0]), z)
    s = np.linalg.norm(axis)
    angle = np.arctan2(s, z[2])
    if s < 1e-15:
        return np.zeros(2)
    return (axis[:2] / s) * angle


def uniform_noise_pose(rng: np.random.Generator, trans_bound: float, rot_bound_deg: float) -> Pose:
    """Per-axis uniform translation noise and per-Euler-axis uniform rotation noise"""
    dt = rng.uniform(-trans_bound, trans_bound, size=3) if trans_bound > 0 else np.zeros(3)
    if rot_bound_deg > 0:
        angles = rng.uniform(-rot_bound_deg, rot_bound_deg, size=3)
        R = Rotation.from_euler("xyz", angles, degrees=True).as_matrix()
    else:
        R = np.eye(3)
    return Pose(R, dt)


@dataclass(frozen=True)
class Observation:
    pose: Pose
    stamp: float
    target_id: str


class PoseTracker:
    """Simulated 6-D tracker.

    Output depends only on (seed, clock, target_id) and the true pose, so two
    trackers with the same seed report the same noise at the same instant.
    One tracker per trial; it remembers the last stamp per target to reject
    queries that go back in time.
    """

    def __init__(self, cfg: TrackerConfig):
        self.cfg = cfg
        self._last_stamp: Dict[str, float] = {}
        self.queries = 0

    @property
    def period(self) -> float:
        return 1.0 / self.cfg.rate

    def _rng(self, clock: float, target_id: str, salt: int) -> np.random.Generator:
        tick = int(round(clock * 1e6))
        return np.random.default_rng([self.cfg.seed & 0xFFFFFFFF, tick, zlib.crc32(target_id.encode()), salt])

    def _check_clock(self, clock: float, target_id: str):
        last = self._last_stamp.get(target_id)
        if last is not None and clock < last:
            raise StaleObservation(f"clock {clock} precedes last stamp {last} for '{target_id}'")
        self._last_stamp[target_id] = clock

    def _perturb(self, true_pose: Pose, clock: float, target_id: str, scale: float, salt: int) -> Pose:
        trans = self.cfg.trans_noise * scale
        rot = self.cfg.rot_noise * scale
        if trans == 0 and rot == 0:
            return true_pose
        noise = uniform_noise_pose(self._rng(clock, target_id, salt), trans, rot)
        return Pose(noise.rotation @ true_pose.rotation, true_pose.translation + noise.translation)

    def observe(self, true_pose: Pose, clock: float, target_id: str = "object") -> Observation:
        self._check_clock(clock, target_id)
        self.queries += 1
        pose = self._perturb(true_pose, clock, target_id, 1.0, 0)
        return Observation(pose=pose, stamp=clock, target_id=target_id)

    def initialize_track(self, true_pose: Pose, clock: float = 0.0, target_id: str = "object") -> Observation:
        """One-shot initialization with noise bounds scaled by init_noise_scale"""
        self._check_clock(clock, target_id)
        self.queries += 1
        pose = self._perturb(true_pose, clock, target_id, self.cfg.init_noise_scale, 1)
        logger.debug(f"initialized track '{target_id}' at t={clock:.3f}")
        return Observation(pose=pose, stamp=clock, target_id=target_id)


def observe(true_pose: Pose, cfg: TrackerConfig, clock: float, target_id: str = "object") -> Observation:
    """Stateless form of PoseTracker.observe"""
    return PoseTracker(cfg).observe(true_pose, clock, target_id)


def initialize_track(true_pose: Pose, cfg: TrackerConfig, target_id: str = "object",
                     clock: Optional[float] = 0.0) -> Observation:
    return PoseTracker(cfg).initialize_track(true_pose, clock or 0.0, target_id)
