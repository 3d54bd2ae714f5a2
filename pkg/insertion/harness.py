"""
Experiment harness: object library, seeded trial runner, ablation matrix,
CSV/markdown reports, plot data and trace replay.
"""

import io
import csv
import json
import math
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from jinja2 import Template
from pydantic import ValidationError

from .control import vision_driven_insertion
from .errors import ConfigError, GeometryError, HandError, ModelFormatError, PoseError, ReportError, UnknownObject
from .geometry import (
    FaceCloud, HoleGeometry, InsertionParams, PegGeometry, circle_cloud, load_face, manipulation_frame,
    pear_cloud, rectangle_cloud, triangle_cloud,
)
from .hand import Hand, generate_dataset
from .inverse_model import InverseHandModel, fit_inverse_model, load_model, save_model, training_digest
from .posemath import Pose, PoseTracker, so3_exp
from .schemas import (
    CompliancePreset, ControllerMode, ExperimentConfig, NoiseLevel, SummaryRow,
    TrainingConfig, TrialResult,
)
from .utils import get_config, mean_std
from .world import ARM_BIAS_LIMIT, RIGID_ARM_BIAS_LIMIT, ArmModel, World

logger = logging.getLogger(__name__)

DEFAULT_CLEARANCE = 0.25
PEG_HEIGHT = 60.0
GRASP_HEIGHT = 40.0
HOLE_DEPTH = 20.0
PLACEMENT_RANGE = (150.0, 250.0)
COMPLIANCE_TILT = 1.5   # deg, tilt perturbation used for the compliance rows of the ablation

CSV_COLUMNS = [
    "config", "object", "mode", "compliance", "noise", "trials", "success",
    "servo_ticks_mean", "servo_ticks_std", "total_ticks_mean", "total_ticks_std",
    "hand_actions_mean", "hand_actions_std",
]


# Object library
def builtin_shapes() -> Dict[str, FaceCloud]:
    return {
        "small_circle": circle_cloud(12.5),
        "large_circle": circle_cloud(20.0),
        "pear": pear_cloud(12.0, 8.0, 16.0),
        "triangle": triangle_cloud(35.0),
        "rectangle": rectangle_cloud(40.0, 20.0),
    }


def builtin_objects(clearance: float = DEFAULT_CLEARANCE, height: float = PEG_HEIGHT,
                    grasp_height: float = GRASP_HEIGHT, depth: float = HOLE_DEPTH,
                    shapes: Optional[Dict[str, FaceCloud]] = None) -> Dict[str, Tuple[PegGeometry, HoleGeometry]]:
    """Peg and matching hole for every named shape"""
    shapes = shapes or builtin_shapes()
    return {name: (PegGeometry(face, height, grasp_height), HoleGeometry.for_peg(face, clearance, depth))
            for name, face in shapes.items()}


def load_object(name: str, clearance: float = DEFAULT_CLEARANCE) -> Tuple[PegGeometry, HoleGeometry]:
    """Builtin object by name, or a face cloud file"""
    shapes = builtin_shapes()
    if name in shapes:
        face = shapes[name]
    elif Path(name).is_file():
        face = load_face(name)
    else:
        raise UnknownObject(f"unknown object '{name}' (builtin: {', '.join(shapes)})", field="object")
    return PegGeometry(face, PEG_HEIGHT, GRASP_HEIGHT), HoleGeometry.for_peg(face, clearance, HOLE_DEPTH)


def place_peg(rng: np.random.Generator) -> Pose:
    """Upright on the support surface at a random spot around the hole, random yaw"""
    radius = rng.uniform(*PLACEMENT_RANGE)
    bearing = rng.uniform(0.0, 2.0 * math.pi)
    yaw = rng.uniform(-math.pi, math.pi)
    return Pose(so3_exp(np.array([0.0, 0.0, yaw])),
                np.array([radius * math.cos(bearing), radius * math.sin(bearing), 0.0]))


# Inverse model for full-mode trials
_MODELS: Dict[Tuple[str, str], InverseHandModel] = {}


def _cached_model(cache: Path, config_hash: str) -> Optional[InverseHandModel]:
    """The model stored at `cache` if it was fitted under `config_hash`"""
    if not cache.is_file():
        return None
    try:
        model = load_model(cache)
    except ModelFormatError as e:
        logger.warning(f"ignoring unreadable inverse model cache {cache}: {e}")
        return None
    if model.config_hash != config_hash:
        logger.info(f"inverse model cache {cache} was fitted under another training config, refitting")
        return None
    return model


def default_model(cache_dir: Optional[str] = None, cfg: Optional[TrainingConfig] = None) -> InverseHandModel:
    """Fit (or load the cached) inverse hand model for a training config.

    The cache file records the digest of the training config and hand
    parameters, which fix the generated dataset; a file written under any
    other digest is refitted and overwritten.
    """
    cfg = cfg or TrainingConfig()
    cache = Path(cache_dir or get_config()["out_dir"]) / "inverse_model.txt"
    key = (str(cache), training_digest(cfg))
    if key in _MODELS:
        return _MODELS[key]
    model = _cached_model(cache, key[1])
    if model is None:
        logger.info(f"no usable cached inverse model, generating {cfg.n_transitions} transitions")
        buffer = generate_dataset(cfg.n_triangles, cfg.n_transitions, seed=cfg.seed)
        model = fit_inverse_model(buffer, cfg)
        cache.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, cache)
    _MODELS[key] = model
    return model


def resolve_model(cfg: ExperimentConfig, model: Optional[InverseHandModel] = None) -> Optional[InverseHandModel]:
    if cfg.mode != ControllerMode.FULL:
        return model
    if model is not None:
        return model
    if cfg.model_path:
        try:
            return load_model(cfg.model_path)
        except (OSError, HandError) as e:
            raise ConfigError(f"cannot load model_path '{cfg.model_path}': {e}", field="model_path") from e
    return default_model()


# Running experiments
def run_trial(cfg: ExperimentConfig, index: int, peg: PegGeometry, hole: HoleGeometry, params: InsertionParams,
              model: Optional[InverseHandModel], hand: Hand, trace: Optional[list] = None) -> TrialResult:
    seed = cfg.seed + index
    rng = np.random.default_rng(seed)
    compliance = cfg.compliance_config()
    max_bias = ARM_BIAS_LIMIT if compliance.arm_compliant else RIGID_ARM_BIAS_LIMIT
    arm = ArmModel.sample(rng, max_bias=max_bias, seed=seed)
    tracker = PoseTracker(cfg.tracker_config(seed))
    world = World(peg, hole, place_peg(rng), compliance, arm, hand, rate=tracker.cfg.rate,
                  disturbances=cfg.disturbances, trace=trace)
    perturb_axis = rng.uniform(0.0, 2.0 * math.pi)

    def perturb(w: World) -> None:
        if cfg.tilt_perturbation > 0:
            w.tilt_slip(math.radians(cfg.tilt_perturbation), np.array([math.cos(perturb_axis), math.sin(perturb_axis)]))

    result = vision_driven_insertion(peg, params, cfg.mode, world, tracker, hand, model, cfg.servo, cfg.spiral,
                                     seed=seed, on_spiral_start=perturb)
    if not result.success:
        logger.error(f"{cfg.name} trial {index} (seed {seed}) failed: {result.failure_cause.value}")
    return result


def run_experiment(cfg: ExperimentConfig, model: Optional[InverseHandModel] = None,
                   trace_dir: Optional[Union[str, Path]] = None, hand: Optional[Hand] = None) -> List[TrialResult]:
    """Run cfg.trials seeded trials (seed + i) sequentially"""
    peg, hole = load_object(cfg.object, cfg.clearance)
    frame = manipulation_frame(peg.face)
    servo = cfg.servo
    try:
        params = InsertionParams.from_geometry(peg, hole, frame, servo.gamma, servo.sigma, servo.overshoot,
                                               servo.beta_f_fraction, servo.beta0)
    except GeometryError as e:
        raise ConfigError(f"object '{cfg.object}' cannot be inserted: {e}", field=e.field or "object") from e
    model = resolve_model(cfg, model)
    hand = hand or Hand()
    logger.info(f"experiment {cfg.name}: {cfg.trials} trials of {cfg.object}, mode {cfg.mode.value}, "
                f"compliance {cfg.compliance.value}, noise {cfg.noise_level.value}")

    results = []
    for i in range(cfg.trials):
        trace = [] if trace_dir is not None else None
        results.append(run_trial(cfg, i, peg, hole, params, model, hand, trace))
        if trace is not None:
            path = Path(trace_dir) / f"{cfg.name}_seed{cfg.seed + i}.trace"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("\n".join(trace) + "\n")
    successes = sum(r.success for r in results)
    logger.info(f"experiment {cfg.name}: {successes}/{len(results)} inserted")
    return results


def ablation_matrix(base: ExperimentConfig) -> List[ExperimentConfig]:
    """Control, compliance and noise rows around the full/compliant/noise-free baseline"""
    full = base.model_copy(update={"mode": ControllerMode.FULL, "compliance": CompliancePreset.COMPLIANT,
                                   "noise_level": NoiseLevel.NONE})
    rows = [full.model_copy(update={"name": "full"})]
    rows += [full.model_copy(update={"name": mode.value, "mode": mode})
             for mode in (ControllerMode.NAIVE, ControllerMode.OPEN_LOOP)]
    tilt = base.tilt_perturbation or COMPLIANCE_TILT
    rows += [full.model_copy(update={"name": preset.value, "compliance": preset, "tilt_perturbation": tilt})
             for preset in CompliancePreset]
    rows += [full.model_copy(update={"name": f"noise_{level.value}", "noise_level": level})
             for level in (NoiseLevel.N5, NoiseLevel.N10)]
    return rows


def ablate(base: ExperimentConfig, model: Optional[InverseHandModel] = None,
           trace_dir: Optional[Union[str, Path]] = None) -> List[Tuple[ExperimentConfig, List[TrialResult]]]:
    runs = []
    for cfg in ablation_matrix(base):
        runs.append((cfg, run_experiment(cfg, resolve_model(cfg, model), trace_dir)))
    return runs


# Reporting
def summarize(cfg: ExperimentConfig, results: Sequence[TrialResult]) -> SummaryRow:
    return summarize_labels(cfg.name, cfg.object, cfg.mode.value, cfg.compliance.value, cfg.noise_level.value, results)


def summarize_labels(name: str, obj: str, mode: str, compliance: str, noise: str,
                     results: Sequence[TrialResult]) -> SummaryRow:
    if not results:
        raise ReportError(f"no results to summarize for '{name}'")
    servo = mean_std(r.servo_ticks for r in results)
    total = mean_std(r.total_ticks for r in results)
    hand = mean_std(r.hand_actions for r in results)
    return SummaryRow(config=name, object=obj, mode=mode, compliance=compliance, noise=noise,
                      trials=len(results), successes=sum(r.success for r in results),
                      servo_ticks_mean=servo[0], servo_ticks_std=servo[1],
                      total_ticks_mean=total[0], total_ticks_std=total[1],
                      hand_actions_mean=hand[0], hand_actions_std=hand[1])


MARKDOWN_TEMPLATE = Template("""\
# {{ title }}

Tick counts replace wall-clock planning and total times (one tick is one tracker period).
{% for group, rows in groups %}
## {{ group }}

| Config | Object | Mode | Compliance | Noise | Servo ticks | Total ticks | Hand actions | Success |
|---|---|---|---|---|---|---|---|---|
{% for r in rows -%}
| {{ r.config }} | {{ r.object }} | {{ r.mode }} | {{ r.compliance }} | {{ r.noise }} | \
{{ "%.1f"|format(r.servo_ticks_mean) }} ± {{ "%.1f"|format(r.servo_ticks_std) }} | \
{{ "%.1f"|format(r.total_ticks_mean) }} ± {{ "%.1f"|format(r.total_ticks_std) }} | \
{{ "%.1f"|format(r.hand_actions_mean) }} ± {{ "%.1f"|format(r.hand_actions_std) }} | {{ r.success }} |
{% endfor %}{% endfor %}""")


def _csv(rows: Sequence[SummaryRow]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({
            "config": r.config, "object": r.object, "mode": r.mode, "compliance": r.compliance,
            "noise": r.noise, "trials": r.trials, "success": r.success,
            **{name: f"{getattr(r, name):.3f}" for name in CSV_COLUMNS[7:]},
        })
    return out.getvalue()


def report(runs: Sequence[Union[SummaryRow, Tuple[ExperimentConfig, Sequence[TrialResult]]]], fmt: str = "csv",
           group_by: str = "object", title: str = "Insertion results") -> str:
    """CSV or markdown table from (config, results) pairs or precomputed summary rows"""
    if not runs:
        raise ReportError("report needs at least one experiment")
    rows = [r if isinstance(r, SummaryRow) else summarize(*r) for r in runs]
    if fmt == "csv":
        return _csv(rows)
    if fmt != "markdown":
        raise ReportError(f"unknown report format '{fmt}'", field="format")

    groups: Dict[str, List[SummaryRow]] = {}
    for r in rows:
        key = r.object if group_by == "object" else f"{r.mode} / {r.compliance} / {r.noise}"
        groups.setdefault(key, []).append(r)
    return MARKDOWN_TEMPLATE.render(title=title, groups=list(groups.items()))


def write_trials_jsonl(path: Union[str, Path], runs: Iterable[Tuple[ExperimentConfig, Sequence[TrialResult]]]) -> None:
    """Plot data: one TrialResult per line, tagged with its config name"""
    lines = []
    for cfg, results in runs:
        for r in results:
            lines.append(json.dumps({"config": cfg.name, **r.model_dump(mode="json")}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


# Config files
SECTIONS = ("experiment", "servo", "spiral", "compliance", "disturbances", "output")


def load_config(path: Union[str, Path], **overrides) -> ExperimentConfig:
    """YAML experiment config; overrides (seed, ...) win over file values"""
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}", field="file") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping of sections", field="file")
    return parse_config(raw, **overrides)


def parse_config(raw: dict, **overrides) -> ExperimentConfig:
    unknown = [k for k in raw if k not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config section '{unknown[0]}'", field=str(unknown[0]))

    data = dict(raw.get("experiment") or {})
    for section in ("servo", "spiral", "output"):
        if raw.get(section) is not None:
            data[section] = raw[section]
    compliance = dict(raw.get("compliance") or {})
    if "preset" in compliance:
        data["compliance"] = compliance.pop("preset")
    if compliance:
        data["compliance_overrides"] = compliance
    if raw.get("disturbances") is not None:
        data["disturbances"] = raw["disturbances"]
    data.update({k: v for k, v in overrides.items() if v is not None})

    try:
        cfg = ExperimentConfig(**data)
        cfg.compliance_config()
    except ValidationError as e:
        err = e.errors()[0]
        name = ".".join(str(x) for x in err["loc"]) or "experiment"
        raise ConfigError(f"invalid config field '{name}': {err['msg']}", field=name) from e
    except TypeError as e:
        raise ConfigError(f"invalid compliance override: {e}", field="compliance") from e
    return cfg


# Trace replay
@dataclass
class TraceTick:
    clock: float
    tag: str
    peg_pose: Pose
    hole_pose: Pose
    depth: float
    jammed: bool


@dataclass
class ReplaySummary:
    ticks: List[TraceTick]
    events: List[str] = field(default_factory=list)

    @property
    def phases(self) -> List[Tuple[str, int]]:
        """Consecutive (tag, tick count) runs"""
        out: List[Tuple[str, int]] = []
        for t in self.ticks:
            if out and out[-1][0] == t.tag:
                out[-1] = (t.tag, out[-1][1] + 1)
            else:
                out.append((t.tag, 1))
        return out

    @property
    def final(self) -> Optional[TraceTick]:
        return self.ticks[-1] if self.ticks else None

    def render(self) -> str:
        lines = [f"{tag:<20} {count:>5} ticks" for tag, count in self.phases]
        lines += [f"event {e}" for e in self.events]
        if self.final is not None:
            f = self.final
            lines.append(f"final t={f.clock:.3f} depth={f.depth:.3f} jammed={int(f.jammed)} "
                         f"peg={f.peg_pose.translation.round(3).tolist()}")
        return "\n".join(lines)


def replay(path: Union[str, Path]) -> ReplaySummary:
    """Parse a trace file back into ticks; raises ReportError on malformed lines"""
    summary = ReplaySummary([])
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            summary.events.append(line[1:].strip())
            continue
        parts = line.split()
        if len(parts) != 18:
            raise ReportError(f"{path}:{n}: expected 18 fields, got {len(parts)}")
        try:
            summary.ticks.append(TraceTick(
                clock=float(parts[0]), tag=parts[1],
                peg_pose=Pose.from_line(" ".join(parts[2:9])),
                hole_pose=Pose.from_line(" ".join(parts[9:16])),
                depth=float(parts[16]), jammed=parts[17] == "1",
            ))
        except (ValueError, PoseError) as e:
            raise ReportError(f"{path}:{n}: {e}") from e
    return summary
