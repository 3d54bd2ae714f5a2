"""
Closed-loop insertion controller.

The controller only sees tracker observations, its own grasp plan and the
arm's commanded pose; ground truth stays inside the World. Per-trial state
(tick budget, counters, telemetry) lives on a ServoContext.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    ControlError, GraspInfeasible, HandError, InsertionError, SolverFailure,
    TimeoutExceeded, WIHMWorkspaceExceeded,
)
from .geometry import (
    FaceCloud, InsertionParams, ManipulationFrame, PegGeometry, chord_end, manipulation_frame,
)
from .hand import Hand, HandConfig, contact_triangle, finger_ik, object_frame
from .inverse_model import InverseHandModel
from .posemath import Observation, Pose, PoseTracker, compose, inverse, relative, so3_exp, tilt_vector
from .schemas import ControllerMode, FailureCause, ServoParams, SpiralParams, TrialResult
from .utils import wrap_angle
from .world import World

logger = logging.getLogger(__name__)

GRASP_DEPTH = 40.0       # contact depth below the palm (mm)
PALM_OFFSET = 0.4        # palm axis position along the grasp chord, from the back


# Grasp planning
@dataclass(frozen=True)
class GraspPlan:
    state: HandConfig
    contacts: np.ndarray      # hand frame, thumb first
    hand_in_peg: Pose
    hand_pose: Pose           # planned hand pose in the world
    width: float              # contact span along pi1

    @property
    def peg_in_X(self) -> Pose:
        X0 = object_frame(self.contacts)
        return compose(inverse(X0), inverse(self.hand_in_peg))


def grasp(X: Pose, pi1: np.ndarray, peg: PegGeometry, hand: Hand, contact_depth: float = GRASP_DEPTH) -> GraspPlan:
    """Thumb on the +pi1 side, the other two fingers split around the -pi1 side.

    The palm axis sits on the pi1 chord through the face centroid; every
    finger touches the boundary where its radial ray from the palm axis meets
    it, at grasp height h on the sidewall.
    """
    face = FaceCloud(peg.face.points - peg.face.centroid)
    pi1 = np.asarray(pi1, dtype=float)
    pi2 = np.array([-pi1[1], pi1[0]])
    origin = np.zeros(2)
    front = chord_end(face, origin, pi1)
    back = chord_end(face, origin, -pi1)
    span = float(np.linalg.norm(front - back))
    palm = back + PALM_OFFSET * span * pi1

    qs = []
    contacts = []
    for i, finger in enumerate(hand.fingers):
        phi = hand.finger_angle(i)
        ray = math.cos(phi) * pi1 - math.sin(phi) * pi2
        r = float(np.linalg.norm(chord_end(face, palm, ray) - palm))
        target = np.array([r * math.cos(phi), r * math.sin(phi), contact_depth])
        plane = inverse(finger.base_pose).apply(target)
        try:
            qs.append(finger_ik(plane[:2], finger))
        except HandError as e:
            raise GraspInfeasible(f"finger {i} cannot reach its contact: {e}") from e
        contacts.append(target)

    try:
        state = hand.config_at(np.array(qs))
        state = hand.equilibrium(state, state.a, contact_triangle(np.array(contacts)))
    except HandError as e:
        raise GraspInfeasible(f"grasp has no equilibrium: {e}") from e

    R = np.column_stack([[pi1[0], pi1[1], 0.0], [-pi2[0], -pi2[1], 0.0], [0.0, 0.0, -1.0]])
    hand_in_peg = Pose(R, np.array([palm[0], palm[1], peg.grasp_height + contact_depth]))
    return GraspPlan(state, hand.contacts(state.q), hand_in_peg, compose(X, hand_in_peg), span)


# Sensing
class VisionSensor:
    """Pulls tracker observations of the peg and the hole on the world's clock"""

    def __init__(self, tracker: PoseTracker, world: World):
        self.tracker = tracker
        self.world = world

    @property
    def queries(self) -> int:
        return self.tracker.queries

    def initialize(self) -> Tuple[Observation, Observation]:
        return (self.tracker.initialize_track(self.world.peg_pose, self.world.clock, "object"),
                self.tracker.initialize_track(self.world.hole_pose, self.world.clock, "hole"))

    def peg(self) -> Observation:
        return self.tracker.observe(self.world.peg_pose, self.world.clock, "object")

    def hole(self) -> Observation:
        return self.tracker.observe(self.world.hole_pose, self.world.clock, "hole")


@dataclass
class ServoContext:
    """Everything one trial's controller owns"""
    world: World
    sensor: VisionSensor
    frame: ManipulationFrame
    params: InsertionParams
    servo: ServoParams
    model: Optional[InverseHandModel] = None
    plan: Optional[GraspPlan] = None
    ticks: int = 0
    servo_ticks: int = 0
    hand_actions: int = 0
    oscillations: int = 0
    commands: List[Tuple[str, Tuple[float, ...]]] = field(default_factory=list)

    @property
    def dt(self) -> float:
        return self.world.period

    def tick(self, tag: str) -> None:
        if self.ticks >= self.servo.max_ticks:
            raise TimeoutExceeded(f"tick budget of {self.servo.max_ticks} exhausted in {tag}")
        self.world.advance(tag)
        self.ticks += 1

    def event(self, message: str) -> None:
        if self.world.trace is not None:
            self.world.trace.append(f"# {self.world.clock!r} {message}")

    def move(self, delta: Pose) -> None:
        self.commands.append(("arm", tuple(np.round(delta.translation, 12))))
        self.world.command_arm(delta)

    def actuate(self, a_dot: np.ndarray) -> None:
        self.commands.append(("hand", tuple(np.round(a_dot, 12))))
        try:
            self.world.actuate_hand(a_dot, self.dt)
        except HandError as e:
            raise WIHMWorkspaceExceeded(f"within-hand rotation left the hand workspace: {e}") from e

    # Frames built from observations
    def edge_offset(self) -> np.ndarray:
        return np.array([*(self.frame.m - self.frame.centroid), 0.0])

    def m_position(self, peg_pose: Pose) -> np.ndarray:
        return compose(peg_pose, self.frame.T).translation

    def hole_reference(self, hole_pose: Pose) -> np.ndarray:
        """Coaxial target of m inside the hole, lowered by delta"""
        return hole_pose.apply(self.edge_offset()) - np.array([0.0, 0.0, self.params.delta])

    def pi2_world(self, peg_pose: Pose) -> np.ndarray:
        v = (peg_pose.rotation @ np.array([*self.frame.pi2, 0.0]))[:2]
        return v / np.linalg.norm(v)


def rotation_request(peg_rotation: np.ndarray, ee_rotation: np.ndarray, peg_in_X: Pose,
                     omega_world: np.ndarray, dt: float) -> np.ndarray:
    """Object-frame Euler-rate request (Xdot_x, Xdot_y) that realizes a world angular velocity"""
    R_X = ee_rotation.T @ peg_rotation @ peg_in_X.rotation.T
    R_next = so3_exp(ee_rotation.T @ omega_world * dt) @ R_X
    now = Rotation.from_matrix(R_X).as_euler("xyz")
    nxt = Rotation.from_matrix(R_next).as_euler("xyz")
    return wrap_angle(nxt - now)[:2] / dt


def _hand_rotate(ctx: ServoContext, peg_obs: Observation, omega_world: np.ndarray) -> None:
    request = rotation_request(peg_obs.pose.rotation, ctx.world.arm.end_effector.rotation,
                               ctx.plan.peg_in_X, omega_world, ctx.dt)
    a_dot = ctx.model.predict(request)
    logger.debug(f"hand request {request.round(4).tolist()} -> a_dot {a_dot.round(4).tolist()}")
    ctx.actuate(a_dot)


def rotation_servo(ctx: ServoContext, target: str, beta: float) -> int:
    """Within-hand rotation under visual feedback.

    target "beta0": rotate about pi2 until the edge m is lowered by beta.
    target "beta_f": rotate back until both tilt components relative to the
    observed hole are below beta.
    """
    if target not in ("beta0", "beta_f"):
        raise ControlError(f"unknown rotation target '{target}'")
    iterations = 0
    rate = ctx.servo.rotation_rate
    while True:
        peg_obs = ctx.sensor.peg()
        if target == "beta0":
            pi2 = ctx.pi2_world(peg_obs.pose)
            progress = float(tilt_vector(peg_obs.pose.rotation) @ pi2)
            if progress >= beta:
                break
            omega = rate * np.array([pi2[0], pi2[1], 0.0])
        else:
            hole_obs = ctx.sensor.hole()
            rel = relative(hole_obs.pose, peg_obs.pose)
            tilt = tilt_vector(rel.rotation)
            if abs(tilt[0]) < beta and abs(tilt[1]) < beta:
                break
            direction = -tilt / np.linalg.norm(tilt)
            omega = hole_obs.pose.rotation @ (rate * np.array([direction[0], direction[1], 0.0]))
        _hand_rotate(ctx, peg_obs, omega)
        ctx.hand_actions += 1
        ctx.servo_ticks += 1
        iterations += 1
        ctx.tick(f"rotate_{target}")
    logger.debug(f"rotation servo {target}: {iterations} iterations")
    return iterations


def translation_servo(ctx: ServoContext, delta_c: float, gamma: float, sigma: float) -> int:
    """Arm translation under visual feedback until m is delta_c above the hole reference"""
    iterations = 0
    flips = 0
    last_signs = None
    while True:
        peg_obs, hole_obs = ctx.sensor.peg(), ctx.sensor.hole()
        err = ctx.m_position(peg_obs.pose) - ctx.hole_reference(hole_obs.pose)
        if err[2] <= delta_c:
            break
        if abs(err[0]) <= gamma and abs(err[1]) <= gamma:
            step = np.array([0.0, 0.0, -sigma])
        else:
            step = np.array([-np.sign(err[0]) * sigma, -np.sign(err[1]) * sigma, 0.0])
            signs = np.sign(step[:2])
            if last_signs is not None and np.any((signs * last_signs) < 0):
                flips += 1
                if flips == ctx.servo.oscillation_flips + 1:
                    ctx.oscillations += 1
                    logger.warning(f"oscillation detected: {flips} consecutive sign flips")
                    ctx.event(f"oscillation flips={flips}")
            else:
                flips = 0
            last_signs = signs
        ctx.move(Pose.from_translation(step))
        ctx.servo_ticks += 1
        iterations += 1
        ctx.tick("translate")
    return iterations


def spiral_offset(spiral: SpiralParams, k: int) -> np.ndarray:
    """Roll/pitch target of tick k: an envelope growing by pitch per revolution up to amplitude, then shrinking"""
    if spiral.amplitude <= 0:
        return np.zeros(2)
    rev = k / spiral.ticks_per_rev
    peak = spiral.amplitude / spiral.pitch
    envelope = spiral.pitch * rev if rev <= peak else max(0.0, spiral.amplitude - spiral.pitch * (rev - peak))
    phase = 2.0 * math.pi * rev
    return envelope * np.array([math.cos(phase), math.sin(phase)])


def spiral_insertion(ctx: ServoContext, spiral: SpiralParams, use_hand: bool = True) -> bool:
    """Roll/pitch spiral through the hand while the arm keeps descending"""
    jam_streak = 0
    rate = ctx.servo.rotation_rate
    for k in range(spiral.max_ticks):
        if ctx.world.inserted():
            return True
        if use_hand and spiral.amplitude > 0:
            peg_obs, hole_obs = ctx.sensor.peg(), ctx.sensor.hole()
            tilt = tilt_vector(relative(hole_obs.pose, peg_obs.pose).rotation)
            wanted = spiral_offset(spiral, k) - tilt
            speed = np.linalg.norm(wanted) / ctx.dt
            if speed > 1e-12:
                omega_xy = wanted / ctx.dt * min(1.0, rate / speed)
                omega = hole_obs.pose.rotation @ np.array([omega_xy[0], omega_xy[1], 0.0])
                _hand_rotate(ctx, peg_obs, omega)
        ctx.move(Pose.from_translation([0.0, 0.0, -spiral.descent_rate]))
        ctx.tick("spiral")
        jam_streak = jam_streak + 1 if ctx.world.state.jammed else 0
        if jam_streak >= spiral.jam_ticks:
            raise SolverFailure(f"peg jammed for {jam_streak} ticks during spiral insertion")
    if ctx.world.inserted():
        return True
    raise TimeoutExceeded(f"spiral insertion did not seat the peg in {spiral.max_ticks} ticks")


def _yaw(R: np.ndarray) -> float:
    tilt = tilt_vector(R)
    flat = so3_exp(-np.array([tilt[0], tilt[1], 0.0])) @ R
    return math.atan2(flat[1, 0], flat[0, 0])


def _move_above(ctx: ServoContext, peg_pose: Pose, hole_pose: Pose, height: float) -> None:
    """Yaw-align the peg with the hole, then put m `height` above the hole reference"""
    yaw = float(wrap_angle(_yaw(hole_pose.rotation) - _yaw(peg_pose.rotation)))
    if abs(yaw) > 1e-9:
        pivot = ctx.m_position(peg_pose)
        ee = ctx.world.arm.end_effector.translation
        R = so3_exp(np.array([0.0, 0.0, yaw]))
        # rotate about m rather than the end-effector origin
        ctx.move(Pose(R, (pivot - ee) - R @ (pivot - ee)))
        ctx.tick("align_yaw")
        peg_pose = Pose(R @ peg_pose.rotation, R @ (peg_pose.translation - pivot) + pivot)
    target = ctx.hole_reference(hole_pose) + np.array([0.0, 0.0, height])
    ctx.move(Pose.from_translation(target - ctx.m_position(peg_pose)))
    ctx.tick("move_above")


def vision_driven_insertion(peg: PegGeometry, params: InsertionParams, mode: ControllerMode, world: World,
                            tracker: PoseTracker, hand: Hand, model: Optional[InverseHandModel] = None,
                            servo: Optional[ServoParams] = None, spiral: Optional[SpiralParams] = None,
                            seed: int = 0, frame: Optional[ManipulationFrame] = None,
                            on_spiral_start: Optional[Callable[[World], None]] = None,
                            sensor: Optional[VisionSensor] = None) -> TrialResult:
    """Run one insertion attempt and summarize it as a TrialResult.

    Sequence: manipulation frame, grasp and lift, rotate to beta0, move
    above the hole, translation servo down to delta_c, rotate to beta_f,
    spiral insertion. naive skips both rotations, open_loop also skips the
    translation servo and never queries the tracker after planning.
    """
    mode = ControllerMode(mode)
    servo = servo or ServoParams()
    spiral = spiral or SpiralParams()
    if mode == ControllerMode.FULL and model is None:
        raise ControlError("full mode needs a fitted inverse hand model")
    frame = frame or manipulation_frame(peg.face)
    sensor = sensor or VisionSensor(tracker, world)
    ctx = ServoContext(world, sensor, frame, params, servo, model)

    def result(success: bool, cause: FailureCause = FailureCause.NONE) -> TrialResult:
        return TrialResult(success=success, servo_ticks=ctx.servo_ticks, total_ticks=ctx.ticks,
                           hand_actions=ctx.hand_actions, failure_cause=cause, seed=seed,
                           oscillations=ctx.oscillations)

    if world.inserted():
        logger.info("peg already seated")
        return result(True)

    try:
        peg_obs, hole_obs = sensor.initialize()
        logger.info(f"grasping (mode {mode.value}, d_o {frame.d_o:.1f} mm)")
        ctx.plan = grasp(peg_obs.pose, frame.pi1, peg, hand)
        world.attach(ctx.plan.state, ctx.plan.hand_in_peg)
        ctx.tick("grasp")
        ctx.move(Pose.from_translation([0.0, 0.0, servo.lift_height]))
        ctx.tick("lift")

        if mode == ControllerMode.FULL:
            logger.info(f"rotating to beta0 = {math.degrees(params.beta0):.2f} deg")
            rotation_servo(ctx, "beta0", params.beta0)

        approach = params.delta_c + servo.approach_height
        if mode == ControllerMode.OPEN_LOOP:
            believed_peg = compose(world.arm.end_effector, inverse(ctx.plan.hand_in_peg))
            _move_above(ctx, believed_peg, hole_obs.pose, approach)
            for _ in range(int(math.ceil(servo.approach_height / params.sigma))):
                ctx.move(Pose.from_translation([0.0, 0.0, -params.sigma]))
                ctx.tick("descend")
        else:
            _move_above(ctx, sensor.peg().pose, sensor.hole().pose, approach)
            logger.info("translation servo")
            translation_servo(ctx, params.delta_c, params.gamma, params.sigma)

        if mode == ControllerMode.FULL:
            logger.info(f"rotating to beta_f = {math.degrees(params.beta_f):.2f} deg")
            rotation_servo(ctx, "beta_f", params.beta_f)

        if on_spiral_start is not None:
            on_spiral_start(world)
        logger.info("spiral insertion")
        spiral_insertion(ctx, spiral, use_hand=mode == ControllerMode.FULL)
    except InsertionError as e:
        if e.failure_cause == FailureCause.NONE.value:
            raise
        cause = FailureCause(e.failure_cause)
        logger.info(f"trial failed ({cause.value}): {e}")
        ctx.event(f"failure {cause.value}")
        return result(False, cause)

    logger.info(f"inserted after {ctx.ticks} ticks, {ctx.hand_actions} hand actions")
    ctx.event("inserted")
    return result(True)
