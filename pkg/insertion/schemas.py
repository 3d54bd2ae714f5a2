"""
Typed configuration and result models
Enums, pydantic configs for every subsystem and the per-trial result record
"""

import math
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# Common Enums
class ControllerMode(str, Enum):
    FULL = "full"
    NAIVE = "naive"          # omits within-hand rotation servo
    OPEN_LOOP = "open_loop"  # omits rotation servo and translation servo


class CompliancePreset(str, Enum):
    COMPLIANT = "compliant"
    RIGID_HAND_COMPLIANT_ARM = "rigid_hand_compliant_arm"
    RIGID_HAND_RIGID_ARM_COMPLIANT_HOLE = "rigid_hand_rigid_arm_compliant_hole"
    ALL_RIGID = "all_rigid"


class NoiseLevel(str, Enum):
    NONE = "none"
    N5 = "n5"
    N10 = "n10"

    @property
    def bounds(self) -> Tuple[float, float]:
        """(translation mm, rotation deg)"""
        return {"none": (0.0, 0.0), "n5": (5.0, 5.0), "n10": (10.0, 10.0)}[self.value]


class FailureCause(str, Enum):
    NONE = "none"
    JAM = "jam"
    TIMEOUT = "timeout"
    GRASP = "grasp"
    WORKSPACE = "workspace"


class DisturbanceKind(str, Enum):
    MOVE_HOLE = "move_hole"
    PUSH_OBJECT = "push_object"
    PUSH_ARM = "push_arm"


class ReportFormat(str, Enum):
    CSV = "csv"
    MARKDOWN = "markdown"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Subsystem configs
class TrackerConfig(StrictModel):
    rate: float = Field(30.0, gt=0)
    trans_noise: float = Field(0.0, ge=0)
    rot_noise: float = Field(0.0, ge=0)
    seed: int = 0
    init_noise_scale: float = Field(2.0, ge=0)


class ComplianceConfig(StrictModel):
    arm_compliant: bool = True
    hand_compliant: bool = True
    hole_compliant: bool = False
    k_c: float = Field(5.0, gt=0)
    hole_spring: float = Field(5.0, gt=0)
    mu: float = Field(0.3, ge=0)
    rigid_stiffness: float = Field(1.0e4, gt=0)
    tilt_lever: float = Field(10.0, gt=0)
    push_limit: float = Field(10.0, gt=0)

    @classmethod
    def from_preset(cls, preset: "CompliancePreset", **overrides) -> "ComplianceConfig":
        preset = CompliancePreset(preset)
        flags = {
            CompliancePreset.COMPLIANT: (True, True, False),
            CompliancePreset.RIGID_HAND_COMPLIANT_ARM: (True, False, False),
            CompliancePreset.RIGID_HAND_RIGID_ARM_COMPLIANT_HOLE: (False, False, True),
            CompliancePreset.ALL_RIGID: (False, False, False),
        }[preset]
        return cls(arm_compliant=flags[0], hand_compliant=flags[1], hole_compliant=flags[2], **overrides)

    @property
    def any_compliant(self) -> bool:
        return self.arm_compliant or self.hand_compliant or self.hole_compliant

    def _springs(self) -> List[float]:
        springs = []
        if self.arm_compliant:
            springs.append(self.k_c)
        if self.hand_compliant:
            springs.append(self.k_c)
        if self.hole_compliant:
            springs.append(self.hole_spring)
        return springs

    @property
    def lateral_stiffness(self) -> float:
        """Series combination of the compliant elements (N/mm)"""
        springs = self._springs()
        if not springs:
            return self.rigid_stiffness
        return 1.0 / sum(1.0 / k for k in springs)

    @property
    def tilt_stiffness(self) -> float:
        """N*mm/rad"""
        return self.lateral_stiffness * self.tilt_lever ** 2


class ServoParams(StrictModel):
    sigma: float = Field(1.0, gt=0)
    gamma: float = Field(0.5, gt=0)
    overshoot: float = Field(2.0, ge=0)
    beta_f_fraction: float = Field(0.8, gt=0, le=1)
    beta0: Optional[float] = Field(None, gt=0, lt=math.pi / 2)
    approach_height: float = Field(15.0, ge=0)
    lift_height: float = Field(80.0, gt=0)
    rotation_rate: float = Field(0.3, gt=0)
    oscillation_flips: int = Field(6, ge=1)
    max_ticks: int = Field(5000, ge=1)


class SpiralParams(StrictModel):
    amplitude: float = Field(math.radians(3.0), ge=0)
    pitch: float = Field(math.radians(0.5), gt=0)
    descent_rate: float = Field(0.2, gt=0)
    ticks_per_rev: int = Field(10, ge=2)
    max_ticks: int = Field(600, ge=1)
    jam_ticks: int = Field(10, ge=1)


class TrainingConfig(StrictModel):
    n_triangles: int = Field(12, ge=1)
    n_transitions: int = Field(20000, ge=0)
    hidden: int = Field(64, ge=1)
    epochs: int = Field(60, ge=1)
    batch_size: int = Field(256, ge=1)
    learning_rate: float = Field(3e-3, gt=0)
    seed: int = 0

    @classmethod
    def full_scale(cls, **overrides) -> "TrainingConfig":
        return cls(n_triangles=50, n_transitions=200000, **overrides)


class DisturbanceEvent(StrictModel):
    tick: int = Field(..., ge=0)
    kind: DisturbanceKind
    magnitude: List[float] = Field(..., min_length=3, max_length=3)

    @field_validator("magnitude")
    @classmethod
    def finite_magnitude(cls, v):
        if not all(math.isfinite(x) for x in v):
            raise ValueError("disturbance magnitude must be finite")
        return v


class OutputConfig(StrictModel):
    """Where and how run/ablate write their reports; command-line flags win"""
    out_dir: Optional[str] = None
    format: ReportFormat = ReportFormat.CSV
    trace: bool = False


class ExperimentConfig(StrictModel):
    name: str = Field("experiment", min_length=1)
    object: str = "large_circle"
    trials: int = Field(12, ge=1)
    mode: ControllerMode = ControllerMode.FULL
    compliance: CompliancePreset = CompliancePreset.COMPLIANT
    noise_level: NoiseLevel = NoiseLevel.NONE
    seed: int = 0
    clearance: float = Field(0.25, gt=0)
    tilt_perturbation: float = Field(0.0, ge=0)
    disturbances: List[DisturbanceEvent] = []
    model_path: Optional[str] = None
    servo: ServoParams = ServoParams()
    spiral: SpiralParams = SpiralParams()
    compliance_overrides: dict = {}
    output: OutputConfig = OutputConfig()

    def compliance_config(self) -> ComplianceConfig:
        return ComplianceConfig.from_preset(self.compliance, **self.compliance_overrides)

    def tracker_config(self, trial_seed: int) -> TrackerConfig:
        trans, rot = self.noise_level.bounds
        return TrackerConfig(trans_noise=trans, rot_noise=rot, seed=trial_seed)


# Results
class TrialResult(BaseModel):
    success: bool
    servo_ticks: int = Field(..., ge=0)
    total_ticks: int = Field(..., ge=0)
    hand_actions: int = Field(..., ge=0)
    failure_cause: FailureCause = FailureCause.NONE
    seed: int
    oscillations: int = 0

    class Config:
        from_attributes = True

    @model_validator(mode="after")
    def single_failure_cause(self):
        if self.success and self.failure_cause != FailureCause.NONE:
            raise ValueError("a successful trial cannot carry a failure cause")
        if not self.success and self.failure_cause == FailureCause.NONE:
            raise ValueError("a failed trial needs exactly one failure cause")
        return self


class SummaryRow(BaseModel):
    config: str
    object: str
    mode: str
    compliance: str
    noise: str
    trials: int
    successes: int
    servo_ticks_mean: float
    servo_ticks_std: float
    total_ticks_mean: float
    total_ticks_std: float
    hand_actions_mean: float
    hand_actions_std: float

    @property
    def success(self) -> str:
        return f"{self.successes}/{self.trials}"

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials
