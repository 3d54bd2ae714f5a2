"""
Quasistatic model of the tendon-driven underactuated hand.

Three identical two-link fingers sit on a palm circle at 0, 120 and 240 deg.
Each finger curls in the radial plane through the palm axis; finger 0 is the
thumb. A single tendon per finger couples the actuator position to both
joints, and with the object held the contact triangle stays fixed, so the
equilibrium is the minimum of the joint spring energy under the tendon and
triangle constraints.
"""

import math
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from .errors import (
    CollinearContacts, DatasetError, HandError, InfeasibleTriangle,
    JointLimit, NonConvergence,
)
from .posemath import Pose, Twist
from .utils import array_digest, wrap_angle

logger = logging.getLogger(__name__)

JOINT_MIN = 0.0
JOINT_MAX = math.pi / 2
CONSTRAINT_TOL = 1e-3      # mm, accepted violation
INTERNAL_TOL = 1e-9        # mm, outer-loop target
GRADIENT_TOL = 1e-6
MAX_OUTER = 500
POLISH_STEPS = 8
BOUND_EPS = 1e-12
RHO_START = 10.0
RHO_MAX = 1e6
ACTUATOR_RATE_LIMIT = 0.5  # rad/s
CONTROL_DT = 1.0 / 30.0

DATASET_HEADER = "Xdot_x Xdot_y adot_0 adot_1 adot_2 t12 t23 t31"


# Domain types
@dataclass(frozen=True)
class FingerParams:
    k_p: float = 1.0
    k_d: float = 1.5
    r_a: float = 5.0
    r_p: float = 5.0
    r_d: float = 5.0
    l_p: float = 40.0
    l_d: float = 40.0
    base_pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        for name in ("k_p", "k_d", "r_a", "r_p", "r_d", "l_p", "l_d"):
            if not getattr(self, name) > 0:
                raise HandError(f"finger parameter {name} must be positive", field=name)

    @property
    def reach(self) -> float:
        return self.l_p + self.l_d


def radial_base_pose(angle: float, palm_radius: float) -> Pose:
    """Finger base on the palm circle; plane x maps to hand +z, plane y points at the palm axis"""
    inward = np.array([-math.cos(angle), -math.sin(angle), 0.0])
    ez = np.array([0.0, 0.0, 1.0])
    R = np.column_stack([ez, inward, np.cross(ez, inward)])
    return Pose(R, palm_radius * np.array([math.cos(angle), math.sin(angle), 0.0]))


@dataclass(frozen=True)
class ContactTriangle:
    t12: float
    t23: float
    t31: float

    def __post_init__(self):
        a, b, c = self.t12, self.t23, self.t31
        if not (a + b > c and b + c > a and c + a > b) or min(a, b, c) <= 0:
            raise InfeasibleTriangle(f"lengths ({a}, {b}, {c}) violate the strict triangle inequality")

    def as_array(self) -> np.ndarray:
        return np.array([self.t12, self.t23, self.t31])


@dataclass(frozen=True)
class HandConfig:
    """Joint angles q (n_fingers, 2) and actuator positions a (n_fingers,)"""
    q: np.ndarray
    a: np.ndarray
    multipliers: Optional[np.ndarray] = field(default=None, compare=False)
    energy: float = field(default=0.0, compare=False)
    violation: float = field(default=0.0, compare=False)
    projected_gradient: float = field(default=0.0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        if self.q.shape[0] != self.a.shape[0]:
            raise HandError("q and a disagree on the number of fingers")


@dataclass(frozen=True)
class TransitionRecord:
    X_t: Pose
    a_dot: np.ndarray
    X_dot: Twist
    triangle: ContactTriangle
    triangle_next: ContactTriangle

    @property
    def triangle_drift(self) -> float:
        return float(np.linalg.norm(self.triangle_next.as_array() - self.triangle.as_array()))


@dataclass
class TransitionBuffer:
    """Training columns; `records` is empty when loaded from a file"""
    xdot_xy: np.ndarray
    a_dot: np.ndarray
    triangles: np.ndarray
    records: List[TransitionRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.xdot_xy.shape[0])

    @classmethod
    def from_records(cls, records: List[TransitionRecord]) -> "TransitionBuffer":
        if not records:
            return cls(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros((0, 3)), [])
        xdot = np.array([[r.X_dot.omega[0], r.X_dot.omega[1]] for r in records])
        adot = np.array([r.a_dot for r in records])
        tri = np.array([r.triangle.as_array() for r in records])
        return cls(xdot, adot, tri, list(records))

    def digest(self) -> str:
        return array_digest(self.xdot_xy, self.a_dot, self.triangles)

    def split(self, fraction: float, seed: int = 0) -> Tuple["TransitionBuffer", "TransitionBuffer"]:
        """Random (train, held-out) partition"""
        idx = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(len(self) * (1.0 - fraction)))
        a, b = idx[:cut], idx[cut:]
        return (TransitionBuffer(self.xdot_xy[a], self.a_dot[a], self.triangles[a]),
                TransitionBuffer(self.xdot_xy[b], self.a_dot[b], self.triangles[b]))


# Contacts and frames
def _check_contacts(P) -> np.ndarray:
    P = np.asarray(P, dtype=float).reshape(3, 3)
    e1, e2 = P[1] - P[0], P[2] - P[0]
    scale = max(np.dot(e1, e1), np.dot(e2, e2))
    if scale == 0 or np.linalg.norm(np.cross(e1, e2)) <= 1e-9 * scale:
        raise CollinearContacts("contact points are collinear")
    return P


def contact_triangle(P) -> ContactTriangle:
    P = _check_contacts(P)
    return ContactTriangle(
        float(np.linalg.norm(P[0] - P[1])),
        float(np.linalg.norm(P[1] - P[2])),
        float(np.linalg.norm(P[2] - P[0])),
    )


def object_frame(P) -> Pose:
    """Gram-Schmidt frame of the contacts, origin at their centroid"""
    P = _check_contacts(P)
    x = P[1] - P[0]
    x = x / np.linalg.norm(x)
    z = np.cross(P[1] - P[0], P[2] - P[0])
    z = z / np.linalg.norm(z)
    y = np.cross(z, x)
    return Pose(np.column_stack([x, y, z]), P.mean(axis=0))


def frame_vector(X: Pose) -> np.ndarray:
    """(phi_x, phi_y, phi_z, t_x, t_y, t_z): extrinsic xyz Euler angles plus translation"""
    angles = Rotation.from_matrix(X.rotation).as_euler("xyz")
    return np.concatenate([angles, X.translation])


def frame_rate(X_0: Pose, X_1: Pose, dt: float) -> Twist:
    """Element-wise frame difference over dt, angle components wrapped"""
    diff = frame_vector(X_1) - frame_vector(X_0)
    diff[:3] = wrap_angle(diff[:3])
    return Twist(diff[:3] / dt, diff[3:] / dt)


# Single finger
def _planar_tip(q, params: FingerParams) -> np.ndarray:
    qp, qd = q
    return np.array([
        params.l_p * math.cos(qp) + params.l_d * math.cos(qp + qd),
        params.l_p * math.sin(qp) + params.l_d * math.sin(qp + qd),
    ])


def _planar_jacobian(q, params: FingerParams) -> np.ndarray:
    qp, qd = q
    s1, c1 = math.sin(qp), math.cos(qp)
    s12, c12 = math.sin(qp + qd), math.cos(qp + qd)
    return np.array([
        [-params.l_p * s1 - params.l_d * s12, -params.l_d * s12],
        [params.l_p * c1 + params.l_d * c12, params.l_d * c12],
    ])


def finger_fk(q, params: FingerParams, check_limits: bool = True) -> np.ndarray:
    """Fingertip position in the hand frame"""
    q = np.asarray(q, dtype=float)
    if check_limits and (np.any(q < JOINT_MIN - 1e-12) or np.any(q > JOINT_MAX + 1e-12)):
        raise JointLimit(f"joint angles {q.tolist()} outside [0, pi/2]")
    x, y = _planar_tip(q, params)
    return params.base_pose.apply(np.array([x, y, 0.0]))


def finger_energy(q, params: Optional[FingerParams] = None) -> float:
    params = params or FingerParams()
    qp, qd = q
    return 0.5 * (params.k_p * qp ** 2 + params.k_d * qd ** 2)


def finger_energy_grad(q, params: Optional[FingerParams] = None) -> np.ndarray:
    params = params or FingerParams()
    return np.array([params.k_p * q[0], params.k_d * q[1]])


def tendon_residual(q_dot, a_dot: float, params: FingerParams) -> float:
    return params.r_a * a_dot - params.r_p * q_dot[0] - params.r_d * q_dot[1]


class Hand:
    """Finger set plus the equilibrium solver"""

    def __init__(self, fingers: Optional[Sequence[FingerParams]] = None, palm_radius: float = 70.0):
        if fingers is None:
            fingers = [FingerParams(base_pose=radial_base_pose(math.radians(a), palm_radius))
                       for a in (0.0, 120.0, 240.0)]
        self.fingers = list(fingers)
        self.palm_radius = palm_radius

    @property
    def n_fingers(self) -> int:
        return len(self.fingers)

    def finger_angle(self, i: int) -> float:
        """Direction of finger i's base on the palm circle"""
        t = self.fingers[i].base_pose.translation
        return math.atan2(t[1], t[0])

    def contacts(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1, 2)
        return np.array([finger_fk(q[i], f) for i, f in enumerate(self.fingers)])

    def energy(self, q) -> float:
        q = np.asarray(q, dtype=float).reshape(-1, 2)
        return float(sum(finger_energy(q[i], f) for i, f in enumerate(self.fingers)))

    def tendon_positions(self, q) -> np.ndarray:
        """Actuator positions that satisfy the integrated tendon relation at q"""
        q = np.asarray(q, dtype=float).reshape(-1, 2)
        return np.array([(f.r_p * q[i, 0] + f.r_d * q[i, 1]) / f.r_a for i, f in enumerate(self.fingers)])

    def config_at(self, q) -> HandConfig:
        q = np.asarray(q, dtype=float).reshape(-1, 2)
        if np.any(q < JOINT_MIN) or np.any(q > JOINT_MAX):
            raise JointLimit(f"joint angles outside [0, pi/2]: {q.tolist()}")
        return HandConfig(q, self.tendon_positions(q), energy=self.energy(q))

    # Constraint evaluation on the flat joint vector
    def _constraints(self, x: np.ndarray, a: np.ndarray, target: Optional[np.ndarray]):
        q = x.reshape(-1, 2)
        n = self.n_fingers
        rows = n + (3 if target is not None else 0)
        c = np.zeros(rows)
        J = np.zeros((rows, 2 * n))
        for i, f in enumerate(self.fingers):
            c[i] = f.r_p * q[i, 0] + f.r_d * q[i, 1] - f.r_a * a[i]
            J[i, 2 * i] = f.r_p
            J[i, 2 * i + 1] = f.r_d
        if target is not None:
            tips = np.zeros((3, 3))
            jac = np.zeros((3, 3, 2))
            for i, f in enumerate(self.fingers):
                x_, y_ = _planar_tip(q[i], f)
                tips[i] = f.base_pose.apply(np.array([x_, y_, 0.0]))
                jac[i] = f.base_pose.rotation[:, :2] @ _planar_jacobian(q[i], f)
            for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
                d = tips[i] - tips[j]
                dist = np.linalg.norm(d)
                u = d / dist
                c[n + k] = dist - target[k]
                J[n + k, 2 * i:2 * i + 2] += u @ jac[i]
                J[n + k, 2 * j:2 * j + 2] -= u @ jac[j]
        return c, J

    def _energy_and_grad(self, x: np.ndarray):
        q = x.reshape(-1, 2)
        E = 0.0
        g = np.zeros_like(x)
        for i, f in enumerate(self.fingers):
            E += finger_energy(q[i], f)
            g[2 * i:2 * i + 2] = finger_energy_grad(q[i], f)
        return E, g

    def equilibrium(self, q0: HandConfig, a, triangle: Optional[ContactTriangle] = None) -> HandConfig:
        """Minimum-energy joint configuration for actuator positions `a`.

        Augmented Lagrangian over the tendon (and optional triangle) equality
        constraints, with L-BFGS-B handling the joint bounds in the inner
        solves. Multipliers from q0 warm-start the outer loop.
        """
        if triangle is not None and self.n_fingers != 3:
            raise HandError("a contact triangle needs exactly three fingers")
        a = np.asarray(a, dtype=float).reshape(-1)
        target = triangle.as_array() if triangle is not None else None
        x = np.clip(q0.q.reshape(-1).copy(), JOINT_MIN, JOINT_MAX)
        bounds = [(JOINT_MIN, JOINT_MAX)] * x.size
        rows = self.n_fingers + (3 if target is not None else 0)
        lam = np.zeros(rows)
        if q0.multipliers is not None and q0.multipliers.shape == (rows,):
            lam = q0.multipliers.copy()
        rho = RHO_START
        best = math.inf
        stalled = 0

        def merit(xv):
            E, gE = self._energy_and_grad(xv)
            c, J = self._constraints(xv, a, target)
            shifted = lam + rho * c
            return E + lam @ c + 0.5 * rho * (c @ c), gE + J.T @ shifted

        violation = math.inf
        for outer in range(MAX_OUTER):
            x_prev = x
            res = minimize(merit, x, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": 200, "ftol": 1e-15, "gtol": 1e-12})
            x = res.x
            c, _ = self._constraints(x, a, target)
            violation = float(np.max(np.abs(c)))
            lam = lam + rho * c
            if violation <= INTERNAL_TOL:
                break
            # numerically settled inside the accepted tolerance
            if violation <= CONSTRAINT_TOL and np.max(np.abs(x - x_prev)) < 1e-10:
                break
            if violation > 0.25 * best:
                rho = min(rho * 10.0, RHO_MAX)
                stalled = stalled + 1 if rho >= RHO_MAX else 0
            else:
                stalled = 0
            best = min(best, violation)
            if stalled >= 5:
                if violation <= CONSTRAINT_TOL:
                    break
                raise InfeasibleTriangle(
                    f"constraints unsatisfiable (violation {violation:.3e} mm after {outer + 1} iterations)")
        else:
            if violation > CONSTRAINT_TOL:
                raise NonConvergence(f"equilibrium did not converge in {MAX_OUTER} outer iterations")

        if violation > CONSTRAINT_TOL:
            raise InfeasibleTriangle(f"constraint violation {violation:.3e} mm exceeds {CONSTRAINT_TOL}")

        pg = self._stationarity(x, a, target, lam)
        if pg > GRADIENT_TOL:
            x_p, lam_p = self._kkt_polish(x, a, target, lam)
            c_p, _ = self._constraints(x_p, a, target)
            violation_p = float(np.max(np.abs(c_p)))
            pg_p = self._stationarity(x_p, a, target, lam_p)
            if violation_p <= max(violation, INTERNAL_TOL) and pg_p < pg:
                x, lam, violation, pg = x_p, lam_p, violation_p, pg_p
        if pg > GRADIENT_TOL:
            raise NonConvergence(f"equilibrium stationarity {pg:.2e} above {GRADIENT_TOL}")
        E, _ = self._energy_and_grad(x)
        logger.debug(f"equilibrium converged: E={E:.6f} violation={violation:.2e} pg={pg:.2e}")
        return HandConfig(x.reshape(-1, 2), a, multipliers=lam, energy=E,
                          violation=violation, projected_gradient=pg)

    def _stationarity(self, x: np.ndarray, a: np.ndarray, target: Optional[np.ndarray], lam: np.ndarray) -> float:
        _, gE = self._energy_and_grad(x)
        _, J = self._constraints(x, a, target)
        return _projected_gradient(x, gE + J.T @ lam)

    def _kkt_polish(self, x: np.ndarray, a: np.ndarray, target: Optional[np.ndarray], lam: np.ndarray):
        """Newton steps on the KKT system; joints resting on a bound stay fixed.

        Energy curvature is exact (quadratic springs), triangle curvature is
        dropped. A step that leaves the joint box is clipped onto the bound.
        """
        h = np.concatenate([[f.k_p, f.k_d] for f in self.fingers])
        for _ in range(POLISH_STEPS):
            _, gE = self._energy_and_grad(x)
            c, J = self._constraints(x, a, target)
            free = (x > JOINT_MIN + BOUND_EPS) & (x < JOINT_MAX - BOUND_EPS)
            nf, m = int(free.sum()), c.size
            K = np.zeros((nf + m, nf + m))
            K[:nf, :nf] = np.diag(h[free])
            K[:nf, nf:] = J[:, free].T
            K[nf:, :nf] = J[:, free]
            sol = np.linalg.lstsq(K, -np.concatenate([gE[free], c]), rcond=None)[0]
            dx = np.zeros_like(x)
            dx[free] = sol[:nf]
            x, lam = np.clip(x + dx, JOINT_MIN, JOINT_MAX), sol[nf:]
            if np.max(np.abs(dx), initial=0.0) < 1e-14:
                break
        return x, lam

    def object_frame(self, state: HandConfig) -> Pose:
        return object_frame(self.contacts(state.q))

    def step(self, state: HandConfig, a_dot, dt: float,
             triangle: Optional[ContactTriangle] = None) -> Tuple[Pose, HandConfig, Twist]:
        """Advance the actuators by a_dot*dt with the contact triangle held fixed"""
        if dt <= 0:
            raise HandError("dt must be positive", field="dt")
        a_dot = np.asarray(a_dot, dtype=float).reshape(-1)
        P = self.contacts(state.q)
        X_t = object_frame(P)
        tri = triangle or contact_triangle(P)
        if not np.any(a_dot):
            return X_t, state, Twist.zero()
        nxt = self.equilibrium(state, state.a + a_dot * dt, tri)
        X_next = object_frame(self.contacts(nxt.q))
        return X_next, nxt, frame_rate(X_t, X_next, dt)


_DEFAULT_HAND: Optional[Hand] = None


def default_hand() -> Hand:
    global _DEFAULT_HAND
    if _DEFAULT_HAND is None:
        _DEFAULT_HAND = Hand()
    return _DEFAULT_HAND


def _projected_gradient(x: np.ndarray, g: np.ndarray) -> float:
    pg = g.copy()
    at_lo = (x <= JOINT_MIN + BOUND_EPS) & (g > 0)
    at_hi = (x >= JOINT_MAX - BOUND_EPS) & (g < 0)
    pg[at_lo | at_hi] = 0.0
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def equilibrium(q0: HandConfig, a, triangle: Optional[ContactTriangle] = None,
                hand: Optional[Hand] = None) -> HandConfig:
    return (hand or default_hand()).equilibrium(q0, a, triangle)


def step(X_t: Pose, q_t: HandConfig, a_dot, dt: float, hand: Optional[Hand] = None,
         triangle: Optional[ContactTriangle] = None) -> Tuple[Pose, HandConfig, Twist]:
    """(X_t, a_dot) -> (X_{t+1}, q_{t+1}, X_dot); X_dot is measured against X_t"""
    if dt <= 0:
        raise HandError("dt must be positive", field="dt")
    hand = hand or default_hand()
    if not np.any(a_dot):
        return X_t, q_t, Twist.zero()
    X_next, q_next, _ = hand.step(q_t, a_dot, dt, triangle)
    return X_next, q_next, frame_rate(X_t, X_next, dt)


# Dataset generation
def sample_grasp(hand: Hand, rng: np.random.Generator, low: float = 0.15, high: float = 1.3) -> HandConfig:
    """Random joint configuration whose contacts form a proper triangle"""
    q = rng.uniform(low, high, size=(hand.n_fingers, 2))
    contact_triangle(hand.contacts(q))
    return hand.config_at(q)


def generate_dataset(n_triangles: int, n_transitions: int, seed: int = 0,
                     hand: Optional[Hand] = None, dt: float = CONTROL_DT,
                     walk_length: int = 50) -> TransitionBuffer:
    """Random actuator transitions from `n_triangles` sampled grasps.

    Each grasp starts a random walk of actuator velocities; the walk restarts
    from the grasp every `walk_length` transitions or when a joint nears its
    limit. Infeasible samples are logged and skipped.
    """
    if n_triangles < 1:
        raise DatasetError("n_triangles must be at least 1", field="n_triangles")
    if n_transitions < 0:
        raise DatasetError("n_transitions must be non-negative", field="n_transitions")
    hand = hand or default_hand()
    rng = np.random.default_rng(seed)
    records: List[TransitionRecord] = []
    attempts = 0
    failures = 0

    if n_transitions == 0:
        return TransitionBuffer.from_records(records)

    per_triangle = [n_transitions // n_triangles + (1 if k < n_transitions % n_triangles else 0)
                    for k in range(n_triangles)]

    for k, quota in enumerate(per_triangle):
        start = None
        while start is None:
            attempts += 1
            try:
                start = sample_grasp(hand, rng)
            except HandError as e:
                failures += 1
                logger.warning(f"skipping infeasible grasp sample: {e}")
                _check_failure_ratio(attempts, failures)
        triangle = contact_triangle(hand.contacts(start.q))
        state = start
        walked = 0
        produced = 0
        while produced < quota:
            a_dot = rng.uniform(-ACTUATOR_RATE_LIMIT, ACTUATOR_RATE_LIMIT, size=hand.n_fingers)
            attempts += 1
            X_t = hand.object_frame(state)
            try:
                X_next, nxt, X_dot = hand.step(state, a_dot, dt, triangle)
                tri_next = contact_triangle(hand.contacts(nxt.q))
            except HandError as e:
                failures += 1
                logger.warning(f"skipping infeasible transition on triangle {k}: {e}")
                _check_failure_ratio(attempts, failures)
                state, walked = start, 0
                continue
            records.append(TransitionRecord(X_t, a_dot, X_dot, triangle, tri_next))
            produced += 1
            walked += 1
            state = nxt
            margin = min(state.q.min() - JOINT_MIN, JOINT_MAX - state.q.max())
            if walked >= walk_length or margin < 0.05:
                state, walked = start, 0

    _check_failure_ratio(attempts, failures, final=True)
    logger.info(f"generated {len(records)} transitions from {n_triangles} triangles "
                f"({failures} infeasible samples skipped)")
    return TransitionBuffer.from_records(records)


def _check_failure_ratio(attempts: int, failures: int, final: bool = False):
    # judge only once enough samples exist to be meaningful
    if (final or attempts >= 20) and failures > 0.5 * attempts:
        raise DatasetError(f"{failures} of {attempts} samples infeasible")


def save_dataset(buffer: TransitionBuffer, path: Union[str, Path]) -> None:
    lines = [DATASET_HEADER]
    for xd, ad, tri in zip(buffer.xdot_xy, buffer.a_dot, buffer.triangles):
        lines.append(" ".join(repr(float(v)) for v in (*xd, *ad, *tri)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: Union[str, Path]) -> TransitionBuffer:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != DATASET_HEADER.split():
        raise DatasetError(f"{path} does not start with the dataset header")
    rows = [[float(v) for v in line.split()] for line in lines[1:] if line.strip()]
    if any(len(r) != 8 for r in rows):
        raise DatasetError(f"{path} has rows without 8 columns")
    data = np.array(rows, dtype=float).reshape(-1, 8)
    return TransitionBuffer(data[:, :2], data[:, 2:5], data[:, 5:8])


# Grasping a peg
def finger_ik(target_plane: np.ndarray, params: FingerParams) -> np.ndarray:
    """Elbow-down inverse kinematics in the finger plane (equal or unequal links)"""
    x, y = target_plane
    D = math.hypot(x, y)
    lp, ld = params.l_p, params.l_d
    if D > lp + ld or D < abs(lp - ld) or D == 0:
        raise JointLimit(f"target at distance {D:.2f} mm is out of finger reach")
    cos_qd = (D * D - lp * lp - ld * ld) / (2 * lp * ld)
    qd = math.acos(max(-1.0, min(1.0, cos_qd)))
    qp = math.atan2(y, x) - math.atan2(ld * math.sin(qd), lp + ld * math.cos(qd))
    q = np.array([qp, qd])
    if np.any(q < JOINT_MIN) or np.any(q > JOINT_MAX):
        raise JointLimit(f"target needs joints {q.tolist()} outside [0, pi/2]")
    return q
