"""
Quasistatic plant: imprecise arm, compliance springs, peg-hole contact
resolution, jamming and success detection.

Contact is resolved in the insertion plane spanned by the hole axis and the
direction the peg leans toward (plus the lateral error across that plane).
The peg's cross-section in that plane is clipped at the rim; whatever lies
below the rim has to fit between the hole walls. Misfit is absorbed by the
compliant elements as lateral or tilt deflection, and a tilt deflection that
presses on both walls is a wedge.
"""

import math
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import SolverFailure, WorkspaceExceeded, WorldError
from .geometry import HoleGeometry, PegGeometry
from .hand import Hand, HandConfig, contact_triangle, object_frame
from .posemath import Pose, compose, inverse, relative, so3_exp, tilt_vector
from .schemas import ComplianceConfig, DisturbanceEvent, DisturbanceKind

logger = logging.getLogger(__name__)

MAX_RESOLVE_ITERATIONS = 200
ARM_BIAS_LIMIT = 26.0
RIGID_ARM_BIAS_LIMIT = 1.0
ARM_NOISE = 0.5
WORKSPACE_BOUND = 500.0
FLAT_TILT = math.radians(1.0)
INSERTED_FRACTION = 0.95
INSERTED_TILT = math.radians(2.0)
_EPS = 1e-9


# Arm
@dataclass
class ArmModel:
    """Position-controlled arm with a per-trial constant bias and per-step uniform noise.

    ``end_effector`` is the commanded pose, i.e. what the arm believes; the
    executed pose adds the bias and fresh noise.
    """
    bias: np.ndarray
    noise: float = ARM_NOISE
    end_effector: Pose = field(default_factory=Pose.identity)
    bounds: float = WORKSPACE_BOUND
    seed: int = 0
    actual: Optional[Pose] = None

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=float).reshape(3)
        self._rng = np.random.default_rng([self.seed & 0xFFFFFFFF, 7])

    @classmethod
    def sample(cls, rng: np.random.Generator, max_bias: float = ARM_BIAS_LIMIT,
               noise: float = ARM_NOISE, seed: int = 0) -> "ArmModel":
        """Bias drawn uniformly from the ball of radius max_bias"""
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        radius = max_bias * rng.uniform() ** (1.0 / 3.0)
        return cls(bias=direction * radius, noise=noise, seed=seed)

    def realize(self, commanded: Pose) -> Pose:
        jitter = self._rng.uniform(-self.noise, self.noise, size=3) if self.noise > 0 else np.zeros(3)
        actual = Pose(commanded.rotation, commanded.translation + self.bias + jitter)
        if np.any(np.abs(actual.translation) > self.bounds):
            raise WorkspaceExceeded(f"end effector at {actual.translation.round(1).tolist()} leaves the workspace")
        return actual

    def execute(self, cmd_delta: Pose) -> Pose:
        """Apply a world-frame delta (rotation about the end-effector origin) and move"""
        if not (np.all(np.isfinite(cmd_delta.rotation)) and np.all(np.isfinite(cmd_delta.translation))):
            raise WorkspaceExceeded("non-finite arm command")
        cmd = Pose(cmd_delta.rotation @ self.end_effector.rotation,
                   self.end_effector.translation + cmd_delta.translation)
        self.actual = self.realize(cmd)
        self.end_effector = cmd
        return self.actual

    def sync_to(self, actual: Pose) -> None:
        """Set the commanded pose so the arm currently sits at `actual`"""
        self.end_effector = Pose(actual.rotation, actual.translation - self.bias)
        self.actual = actual


def arm_execute(cmd_delta: Pose, arm: ArmModel) -> Pose:
    return arm.execute(cmd_delta)


# Contacts
@dataclass(frozen=True)
class ContactPoint:
    position: np.ndarray    # world frame
    normal: np.ndarray      # world frame, pointing into the peg
    force: float            # N
    sticking: bool
    kind: str               # wall, wedge, bottom, surface


@dataclass(frozen=True)
class WorldState:
    peg: PegGeometry
    hole: HoleGeometry
    peg_pose: Pose
    hole_pose: Pose
    commanded_peg: Pose
    grasp: Optional[np.ndarray] = None
    clock: float = 0.0
    contact_report: Tuple[ContactPoint, ...] = ()
    jammed: bool = False
    inserted_depth: float = 0.0
    entered: bool = False
    energy: float = 0.0


@dataclass(frozen=True)
class _Section:
    lo: float
    hi: float
    z_low: float


def _section(p_min: float, p_max: float, height: float, e_u: float, z_b: float, theta: float) -> _Section:
    """Peg cross-section in the insertion plane clipped to the part below the rim (z <= 0)"""
    c, s = math.cos(theta), math.sin(theta)
    local = ((p_min, 0.0), (p_max, 0.0), (p_max, height), (p_min, height))
    pts = [(e_u + x * c + z * s, z_b - x * s + z * c) for x, z in local]
    z_low = min(p[1] for p in pts)
    below = []
    for i in range(4):
        (u0, z0), (u1, z1) = pts[i], pts[(i + 1) % 4]
        if z0 <= 0:
            below.append(u0)
        if (z0 < 0 < z1) or (z1 < 0 < z0):
            below.append(u0 + (u1 - u0) * (-z0) / (z1 - z0))
    if not below:
        return _Section(math.nan, math.nan, z_low)
    return _Section(min(below), max(below), z_low)


def _fit_tilt(p_min, p_max, height, z_b, theta, width) -> float:
    """Largest tilt in [0, theta] whose below-rim section fits in `width`"""
    def fits(th):
        sec = _section(p_min, p_max, height, 0.0, z_b, th)
        return math.isnan(sec.lo) or sec.hi - sec.lo <= width + _EPS

    if fits(theta):
        return theta
    lo, hi = 0.0, theta
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _plane_frame(cmd: Pose):
    tilt = tilt_vector(cmd.rotation)
    theta = float(np.linalg.norm(tilt))
    e = cmd.translation[:2]
    if theta > 1e-12:
        axis = tilt / theta
        u = np.array([axis[1], -axis[0]])
    elif np.linalg.norm(e) > 1e-12:
        axis = None
        u = e / np.linalg.norm(e)
    else:
        axis = None
        u = np.array([1.0, 0.0])
    return tilt, theta, axis, u, np.array([-u[1], u[0]])


def _extents(points: np.ndarray, direction: np.ndarray) -> Tuple[float, float]:
    p = points @ direction
    return float(p.min()), float(p.max())


def resolve_contacts(state: WorldState, cfg: ComplianceConfig) -> WorldState:
    """Project the commanded peg onto the feasible set and report contacts.

    Works in the hole frame. z is the height of the peg's bottom-face
    centroid over the rim; the peg never goes below the rim unless it has
    entered the hole.
    """
    hole_pose = state.hole_pose
    cmd = relative(hole_pose, state.commanded_peg)
    prev = relative(hole_pose, state.peg_pose)
    tilt, theta_cmd, axis, u, v = _plane_frame(cmd)

    # face extents of peg and hole in the insertion plane
    centroid = state.peg.face.centroid
    flat_R = so3_exp(-np.array([*tilt, 0.0])) @ cmd.rotation if theta_cmd > 0 else cmd.rotation
    peg_pts = np.column_stack([state.peg.face.points - centroid, np.zeros(len(state.peg.face))])
    peg_xy = (peg_pts @ flat_R.T)[:, :2]
    hole_xy = state.hole.face.points - centroid
    p_min, p_max = _extents(peg_xy, u)
    q_min, q_max = _extents(peg_xy, v)
    h_min, h_max = _extents(hole_xy, u)
    g_min, g_max = _extents(hole_xy, v)
    height = state.peg.height
    depth = state.hole.depth

    k_lat = cfg.lateral_stiffness
    k_tilt = cfg.tilt_stiffness
    k_vert = k_lat
    e_u_cmd = float(cmd.translation[:2] @ u)
    e_v_cmd = float(cmd.translation[:2] @ v)
    z_cmd = float(cmd.translation[2])
    z_prev = float(prev.translation[2])
    capture = cfg.push_limit / k_lat

    entered = state.entered
    z = z_cmd
    e_u, e_v, theta = e_u_cmd, e_v_cmd, theta_cmd
    wedge = False
    jammed = False
    n_wedge = 0.0
    f_down = 0.0
    raise_kind = None

    sec0 = _section(p_min, p_max, height, e_u_cmd, z_cmd, theta_cmd)
    if not entered and sec0.z_low < 0:
        entered = _entry_allowed(sec0, theta_cmd, e_v_cmd, (p_min, p_max, q_min, q_max),
                                 (h_min, h_max, g_min, g_max), capture)
        if entered:
            logger.debug(f"peg entered the hole (lateral {e_u_cmd:.3f}, {e_v_cmd:.3f}, tilt {math.degrees(theta_cmd):.2f} deg)")
    elif entered and sec0.z_low > 0 and z_cmd > 0:
        entered = False

    for iteration in range(MAX_RESOLVE_ITERATIONS):
        theta, e_u, e_v = theta_cmd, e_u_cmd, e_v_cmd
        sec = _section(p_min, p_max, height, e_u, z, theta)
        z_floor = z
        wedge = False
        if not entered:
            if sec.z_low < 0:
                z_floor = z - sec.z_low
                raise_kind = "surface"
        else:
            if not math.isnan(sec.lo):
                theta = _fit_tilt(p_min, p_max, height, z, theta_cmd, h_max - h_min)
                wedge = theta < theta_cmd - 1e-9
                sec = _section(p_min, p_max, height, e_u, z, theta)
                if sec.hi > h_max:
                    e_u -= sec.hi - h_max
                elif sec.lo < h_min:
                    e_u += h_min - sec.lo
                e_v = min(max(e_v, g_min - q_min), g_max - q_max)
            if sec.z_low < -depth:
                z_floor = z + (-depth - sec.z_low)
                raise_kind = "bottom"
            if wedge:
                lever = max(-sec.z_low, cfg.tilt_lever)
                n_wedge = k_tilt * (theta_cmd - theta) / lever
                f_down = min(k_vert * max(0.0, z_prev - z_cmd), cfg.push_limit)
                if f_down <= cfg.mu * 2.0 * n_wedge:
                    jammed = True
                if jammed and z_floor < z_prev:
                    z_floor = z_prev
                    raise_kind = raise_kind or "jam"
        if z_floor <= z + 1e-12:
            break
        z = z_floor
    else:
        raise SolverFailure(f"contact resolution did not settle in {MAX_RESOLVE_ITERATIONS} iterations")

    # resolved pose in the hole frame
    R = cmd.rotation
    if axis is not None and theta != theta_cmd:
        R = so3_exp(np.array([*axis, 0.0]) * (theta - theta_cmd)) @ R
    lateral = e_u * u + e_v * v
    resolved = Pose(R, np.array([lateral[0], lateral[1], z]))
    peg_pose = compose(hole_pose, resolved)

    d_lat = math.hypot(e_u - e_u_cmd, e_v - e_v_cmd)
    d_tilt = theta_cmd - theta
    d_vert = z - z_cmd
    energy = 0.5 * k_lat * d_lat ** 2 + 0.5 * k_tilt * d_tilt ** 2 + 0.5 * k_vert * d_vert ** 2

    report = _contact_report(hole_pose, u, v, sec if entered else None, e_u, e_v, z,
                             (h_min, h_max), d_lat, k_lat, wedge or jammed, n_wedge, f_down, cfg.mu,
                             raise_kind, k_vert * d_vert, (e_u - e_u_cmd, e_v - e_v_cmd))
    inserted = min(max(-z, 0.0), depth) if entered else 0.0
    if jammed:
        logger.debug(f"jammed: wedge force {n_wedge:.2f} N, push {f_down:.2f} N")
    return replace(state, peg_pose=peg_pose, contact_report=tuple(report), jammed=jammed,
                   inserted_depth=inserted, entered=entered, energy=energy)


def _entry_allowed(sec: _Section, theta: float, e_v: float, peg_ext, hole_ext, capture: float) -> bool:
    p_min, p_max, q_min, q_max = peg_ext
    h_min, h_max, g_min, g_max = hole_ext
    across = max(0.0, e_v + q_max - g_max, g_min - (e_v + q_min))
    if theta < FLAT_TILT:
        along = max(0.0, sec.hi - h_max, h_min - sec.lo)
        return along <= _EPS and across <= _EPS
    along = max(0.0, sec.hi - h_max, h_min - sec.lo)
    return along <= capture and across <= capture


def _contact_report(hole_pose: Pose, u, v, sec: Optional[_Section], e_u, e_v, z, h_ext, d_lat, k_lat,
                    wedge, n_wedge, f_down, mu, raise_kind, f_vert, shift) -> List[ContactPoint]:
    R = hole_pose.rotation
    u3, v3 = np.array([u[0], u[1], 0.0]), np.array([v[0], v[1], 0.0])
    up = np.array([0.0, 0.0, 1.0])
    out: List[ContactPoint] = []

    def world(point, normal):
        return hole_pose.apply(point), R @ normal

    if sec is not None and not math.isnan(sec.lo):
        h_min, h_max = h_ext
        walls = []
        if wedge:
            walls = [(h_max, -u3, n_wedge), (h_min, u3, n_wedge)]
        elif d_lat > 1e-9:
            side = h_max if shift[0] < 0 else h_min
            normal = -u3 if shift[0] < 0 else u3
            if abs(shift[0]) < abs(shift[1]):
                normal = -v3 if shift[1] < 0 else v3
            walls = [(side, normal, k_lat * d_lat)]
        share = f_down / max(len(walls), 1)
        for pos, normal, force in walls:
            p, n = world(pos * u3 + e_v * v3 + np.array([0.0, 0.0, 0.5 * sec.z_low]), normal)
            out.append(ContactPoint(p, n, float(force), share <= mu * force, "wedge" if wedge else "wall"))
    if raise_kind in ("surface", "bottom") and f_vert > 0:
        level = 0.0 if raise_kind == "surface" else (sec.z_low if sec is not None else z)
        p, n = world(e_u * u3 + e_v * v3 + np.array([0.0, 0.0, level]), up)
        out.append(ContactPoint(p, n, float(f_vert), True, raise_kind))
    return out


def signed_clearance(state: WorldState) -> float:
    """Smallest geometric slack of the resolved peg against rim, walls and bottom (mm)"""
    hole_pose = state.hole_pose
    rel = relative(hole_pose, state.peg_pose)
    tilt, theta, _, u, v = _plane_frame(rel)
    centroid = state.peg.face.centroid
    flat_R = so3_exp(-np.array([*tilt, 0.0])) @ rel.rotation if theta > 0 else rel.rotation
    peg_pts = np.column_stack([state.peg.face.points - centroid, np.zeros(len(state.peg.face))])
    peg_xy = (peg_pts @ flat_R.T)[:, :2]
    hole_xy = state.hole.face.points - centroid
    p_min, p_max = _extents(peg_xy, u)
    q_min, q_max = _extents(peg_xy, v)
    h_min, h_max = _extents(hole_xy, u)
    g_min, g_max = _extents(hole_xy, v)
    e_u, e_v, z = float(rel.translation[:2] @ u), float(rel.translation[:2] @ v), float(rel.translation[2])
    sec = _section(p_min, p_max, state.peg.height, e_u, z, theta)
    if not state.entered:
        return sec.z_low
    slack = [sec.z_low + state.hole.depth]
    if not math.isnan(sec.lo):
        slack += [h_max - sec.hi, sec.lo - h_min, g_max - (e_v + q_max), (e_v + q_min) - g_min]
    return float(min(slack))


def spring_energy(state: WorldState) -> float:
    return state.energy


def relative_tilt(state: WorldState) -> float:
    """Angle between peg axis and hole axis (rad)"""
    rel = relative(state.hole_pose, state.peg_pose)
    return float(np.linalg.norm(tilt_vector(rel.rotation)))


def check_inserted(state: WorldState, hole: Optional[HoleGeometry] = None) -> bool:
    hole = hole or state.hole
    return bool(state.inserted_depth >= INSERTED_FRACTION * hole.depth and relative_tilt(state) <= INSERTED_TILT)


def disturb(state: WorldState, kind: DisturbanceKind, magnitude: Sequence[float]) -> WorldState:
    """Displace the hole or the peg.

    push_arm moves the arm bias, which a bare WorldState does not carry; it is
    rejected here and applied by World.disturb.
    """
    kind = DisturbanceKind(kind)
    if kind == DisturbanceKind.PUSH_ARM:
        raise WorldError("push_arm needs the arm model; apply it through World.disturb")
    shift = np.asarray(magnitude, dtype=float).reshape(3)
    if not np.all(np.isfinite(shift)):
        raise ValueError("disturbance magnitude must be finite")
    if not np.any(shift):
        return state
    offset = Pose.from_translation(shift)
    if kind == DisturbanceKind.MOVE_HOLE:
        return replace(state, hole_pose=compose(offset, state.hole_pose), entered=False)
    return replace(state, commanded_peg=compose(offset, state.commanded_peg),
                   peg_pose=compose(offset, state.peg_pose))


# Trial plant
class World:
    """One trial's plant: the value-typed WorldState plus the arm, hand and grasp bookkeeping.

    The peg's commanded pose is actual end effector * X (contact frame in the
    hand) * peg-in-X; contact resolution turns it into the true peg pose.
    """

    def __init__(self, peg: PegGeometry, hole: HoleGeometry, peg_pose: Pose, cfg: ComplianceConfig,
                 arm: ArmModel, hand: Optional[Hand] = None, rate: float = 30.0,
                 disturbances: Sequence[DisturbanceEvent] = (), trace: Optional[list] = None):
        self.cfg = cfg
        self.arm = arm
        self.hand = hand or Hand()
        self.period = 1.0 / rate
        self.tick = 0
        self.trace = trace
        self.disturbances = sorted(disturbances, key=lambda d: d.tick)
        self.hand_state: Optional[HandConfig] = None
        self.triangle = None
        self.X: Optional[Pose] = None
        self.peg_in_X: Optional[Pose] = None
        state = WorldState(peg=peg, hole=hole, peg_pose=peg_pose, hole_pose=hole.pose,
                           commanded_peg=peg_pose)
        self.state = resolve_contacts(replace(state, entered=self._starts_inside(state)), cfg)

    @staticmethod
    def _starts_inside(state: WorldState) -> bool:
        rel = relative(state.hole_pose, state.peg_pose)
        return bool(rel.translation[2] < 0 and np.linalg.norm(rel.translation[:2]) <= state.hole.clearance)

    @property
    def clock(self) -> float:
        return self.state.clock

    @property
    def peg_pose(self) -> Pose:
        return self.state.peg_pose

    @property
    def hole_pose(self) -> Pose:
        return self.state.hole_pose

    @property
    def grasped(self) -> bool:
        return self.hand_state is not None

    def attach(self, hand_state: HandConfig, hand_in_peg: Pose) -> None:
        """Close the hand on the peg at its current pose"""
        contacts = self.hand.contacts(hand_state.q)
        self.hand_state = hand_state
        self.triangle = contact_triangle(contacts)
        self.X = object_frame(contacts)
        self.peg_in_X = compose(inverse(self.X), inverse(hand_in_peg))
        self.arm.sync_to(compose(self.state.peg_pose, hand_in_peg))
        self.state = replace(self.state, grasp=contacts)
        self._update(self.arm.actual)

    def command_arm(self, delta: Pose) -> Pose:
        actual = self.arm.execute(delta)
        self._update(actual)
        return actual

    def actuate_hand(self, a_dot, dt: Optional[float] = None):
        """One hand step with the contact triangle held; raises HandError at the workspace boundary"""
        X_next, nxt, x_dot = self.hand.step(self.hand_state, a_dot, dt or self.period, self.triangle)
        self.hand_state, self.X = nxt, X_next
        self.state = replace(self.state, grasp=self.hand.contacts(nxt.q))
        self._update(self.arm.actual)
        return x_dot

    def slip(self, transform: Pose) -> None:
        """Move the held peg by a world-frame transform relative to the hand"""
        peg_cmd = compose(transform, self.state.commanded_peg)
        if self.grasped:
            hand_X = compose(self.arm.actual, self.X)
            self.peg_in_X = compose(inverse(hand_X), peg_cmd)
            self._update(self.arm.actual)
        else:
            self.state = resolve_contacts(replace(self.state, commanded_peg=peg_cmd), self.cfg)

    def tilt_slip(self, angle: float, axis_xy: np.ndarray) -> None:
        """In-hand rotation of the peg about a horizontal axis through the grasp"""
        axis = np.array([axis_xy[0], axis_xy[1], 0.0])
        axis /= np.linalg.norm(axis)
        pivot = self.arm.actual.apply(self.hand.contacts(self.hand_state.q).mean(axis=0)) if self.grasped \
            else self.state.commanded_peg.translation
        R = so3_exp(axis * angle)
        self.slip(Pose(R, pivot - R @ pivot))

    def disturb(self, kind: DisturbanceKind, magnitude: Sequence[float]) -> None:
        kind = DisturbanceKind(kind)
        logger.info(f"disturbance {kind.value} {list(magnitude)} at tick {self.tick}")
        if kind == DisturbanceKind.PUSH_ARM:
            self.arm.bias = self.arm.bias + np.asarray(magnitude, dtype=float)
            self.arm.actual = self.arm.realize(self.arm.end_effector)
            self._update(self.arm.actual)
        elif kind == DisturbanceKind.PUSH_OBJECT and self.grasped:
            self.slip(Pose.from_translation(magnitude))
        else:
            self.state = resolve_contacts(disturb(self.state, kind, magnitude), self.cfg)

    def _update(self, actual: Pose) -> None:
        if self.grasped:
            commanded = compose(compose(actual, self.X), self.peg_in_X)
            self.state = resolve_contacts(replace(self.state, commanded_peg=commanded), self.cfg)

    def advance(self, tag: str) -> int:
        """Move the simulated clock one tracker period, apply due disturbances, trace the tick"""
        self.tick += 1
        self.state = replace(self.state, clock=self.tick * self.period)
        while self.disturbances and self.disturbances[0].tick <= self.tick:
            event = self.disturbances.pop(0)
            self.disturb(event.kind, event.magnitude)
        if self.trace is not None:
            self.trace.append(trace_line(self.state, tag))
        return self.tick

    def inserted(self) -> bool:
        return check_inserted(self.state)


def trace_line(state: WorldState, tag: str) -> str:
    """'t state_tag peg_pose hole_pose depth jammed'"""
    return (f"{state.clock!r} {tag} {state.peg_pose.to_line()} {state.hole_pose.to_line()} "
            f"{state.inserted_depth!r} {int(state.jammed)}")
