"""
Peg and hole geometry, manipulation-frame selection and the closed-form
insertion-condition formulas.

All lengths are mm, all angles radians. Functions here are pure.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateCloud, InvalidDimension, PegExceedsHole
from .posemath import Pose

# relative tolerance used for eigenvalue and projection ties
TIE_TOL = 1e-9
DISC_SAMPLES = 360


@dataclass(frozen=True)
class FaceCloud:
    """Ordered 2-D point cloud of a peg (or hole) cross-section"""
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise DegenerateCloud(f"face cloud needs at least 3 2-D points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DegenerateCloud("face cloud has non-finite coordinates")
        try:
            hull = ConvexHull(pts)
        except QhullError as e:
            raise DegenerateCloud(f"face cloud has no area: {e}") from e
        if hull.volume <= 0:
            raise DegenerateCloud("face cloud convex hull has zero area")
        object.__setattr__(self, "points", pts)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def hull(self) -> ConvexHull:
        return ConvexHull(self.points)

    @property
    def area(self) -> float:
        return float(self.hull.volume)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class PegGeometry:
    face: FaceCloud
    height: float
    grasp_height: float

    def __post_init__(self):
        if self.height <= 0:
            raise InvalidDimension("peg height must be positive", field="height")
        if not 0 < self.grasp_height <= self.height:
            raise InvalidDimension("grasp height must lie in (0, height]", field="grasp_height")


@dataclass(frozen=True)
class HoleGeometry:
    face: FaceCloud
    clearance: float
    pose: Pose
    depth: float

    def __post_init__(self):
        if self.clearance <= 0:
            raise InvalidDimension("hole clearance must be positive", field="clearance")
        if self.depth <= 0:
            raise InvalidDimension("hole depth must be positive", field="depth")

    @classmethod
    def for_peg(cls, peg_face: FaceCloud, clearance: float, depth: float,
                pose: Optional[Pose] = None) -> "HoleGeometry":
        return cls(dilate(peg_face, clearance), clearance, pose or Pose.identity(), depth)

    def width(self, direction: np.ndarray) -> float:
        return support_width(self.face, direction)


@dataclass(frozen=True)
class ManipulationFrame:
    T: Pose
    pi1: np.ndarray
    pi2: np.ndarray
    m: np.ndarray
    d_o: float
    centroid: np.ndarray


@dataclass(frozen=True)
class InsertionParams:
    beta0: float
    beta_f: float
    delta: float
    delta_c: float
    gamma: float
    sigma: float
    beta_f_limit: Optional[float] = None   # beta_f_max of the peg/hole pair

    def __post_init__(self):
        if not 0 < self.beta0 < math.pi / 2:
            raise InvalidDimension("beta0 must lie in (0, pi/2)", field="beta0")
        if self.beta_f <= 0:
            raise InvalidDimension("beta_f must be positive", field="beta_f")
        if self.beta_f_limit is not None and self.beta_f > self.beta_f_limit:
            raise InvalidDimension(
                f"beta_f {self.beta_f:.4f} exceeds the largest feasible angle {self.beta_f_limit:.4f}", field="beta_f")
        if self.delta_c > self.delta:
            raise InvalidDimension("delta_c cannot exceed delta", field="delta_c")
        if self.gamma <= 0 or self.sigma <= 0:
            raise InvalidDimension("gamma and sigma must be positive")

    @classmethod
    def from_geometry(cls, peg: PegGeometry, hole: HoleGeometry, frame: ManipulationFrame,
                      gamma: float = 0.5, sigma: float = 1.0, overshoot: float = 2.0,
                      beta_f_fraction: float = 0.8, beta0_override: Optional[float] = None) -> "InsertionParams":
        """Derive the insertion angles and heights from peg and hole dimensions"""
        b0 = beta0_override if beta0_override is not None else beta0(frame.d_o, peg.grasp_height)
        d_h = hole.width(frame.pi1)
        bf_max = beta_f_max(frame.d_o, d_h)
        bf = beta_f_fraction * bf_max
        delta = insertion_height(peg.grasp_height, frame.d_o, b0, bf)
        return cls(b0, bf, delta, compliant_depth(delta, overshoot), gamma, sigma, bf_max)


def support_width(face: Union[FaceCloud, np.ndarray], direction: np.ndarray) -> float:
    """Extent of the cloud projected on a direction"""
    pts = face.points if isinstance(face, FaceCloud) else np.asarray(face, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    p = pts @ d
    return float(p.max() - p.min())


def dilate(face: FaceCloud, clearance: float) -> FaceCloud:
    """Outward offset of a convex face by `clearance` (Minkowski sum with a sampled disc)"""
    if clearance <= 0:
        raise InvalidDimension("clearance must be positive", field="clearance")
    angles = np.linspace(0.0, 2.0 * np.pi, DISC_SAMPLES, endpoint=False)
    disc = clearance * np.column_stack([np.cos(angles), np.sin(angles)])
    hull_pts = face.points[face.hull.vertices]
    summed = (hull_pts[:, None, :] + disc[None, :, :]).reshape(-1, 2)
    hull = ConvexHull(summed)
    return FaceCloud(summed[hull.vertices])


def principal_axes(face: FaceCloud):
    """First and second principal axes of the cloud and its centroid.

    pi1 belongs to the largest covariance eigenvalue. Equal eigenvalues pick
    pi1 = (1, 0). The sign puts the larger projection extent on the positive
    side; equal extents orient pi1 toward +x, then +y.
    """
    pts = face.points
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / pts.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    if vals[1] <= 0 or vals[0] <= 1e-12 * vals[1]:
        raise DegenerateCloud("point covariance has rank < 2 (collinear points)")

    if vals[1] - vals[0] <= TIE_TOL * vals[1]:
        pi1 = np.array([1.0, 0.0])
    else:
        pi1 = vecs[:, 1].copy()

    proj = centered @ pi1
    scale = max(np.abs(proj).max(), 1.0)
    hi, lo = proj.max(), -proj.min()
    if lo > hi + TIE_TOL * scale:
        pi1 = -pi1
    elif abs(hi - lo) <= TIE_TOL * scale:
        if pi1[0] < -TIE_TOL or (abs(pi1[0]) <= TIE_TOL and pi1[1] < 0):
            pi1 = -pi1
    pi1 = pi1 / np.linalg.norm(pi1)
    pi2 = np.array([-pi1[1], pi1[0]])
    return pi1, pi2, centroid


def manipulation_frame(face: FaceCloud) -> ManipulationFrame:
    """Edge frame at the outermost point m along pi1"""
    pi1, pi2, centroid = principal_axes(face)
    pts = face.points
    proj = (pts - centroid) @ pi1
    top = proj.max()
    scale = max(np.abs(proj).max(), 1.0)
    candidates = np.flatnonzero(proj >= top - TIE_TOL * scale)
    # tie-break toward lower y, then lower x
    best = min(candidates, key=lambda i: (pts[i, 1], pts[i, 0]))
    m = pts[best].copy()

    raw = pts @ pi1
    d_o = float(raw.max() - raw.min())

    R = np.eye(3)
    R[:2, 0] = pi1
    R[:2, 1] = pi2
    T = Pose(R, np.array([m[0] - centroid[0], m[1] - centroid[1], 0.0]))
    return ManipulationFrame(T=T, pi1=pi1, pi2=pi2, m=m, d_o=d_o, centroid=centroid)


def chord_end(face: FaceCloud, start: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Far boundary point of the convex face along a ray from `start` (inside or on the boundary)"""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    eq = face.hull.equations  # normal . x + offset <= 0 inside
    normals, offsets = eq[:, :2], eq[:, 2]
    rate = normals @ d
    slack = -(normals @ start + offsets)
    mask = rate > 1e-15
    t = np.min(np.maximum(slack[mask], 0.0) / rate[mask])
    return start + t * d


def beta0(d_o: float, h: float) -> float:
    if d_o <= 0 or h <= 0:
        raise InvalidDimension(f"beta0 needs d_o > 0 and h > 0 (got {d_o}, {h})")
    return math.atan(d_o / (2.0 * h))


def beta_f_max(d_o: float, d_h: float) -> float:
    if d_o <= 0 or d_h <= 0:
        raise InvalidDimension(f"beta_f_max needs positive widths (got {d_o}, {d_h})")
    if d_o > d_h:
        raise PegExceedsHole(f"peg width {d_o} exceeds hole width {d_h}")
    return math.acos(d_o / d_h)


def insertion_height(h: float, d_o: float, beta0: float, beta_f: float) -> float:
    if h <= 0 or d_o < 0:
        raise InvalidDimension(f"insertion height needs h > 0 and d_o >= 0 (got {h}, {d_o})")
    return h * (math.cos(beta0) + math.cos(beta_f)) + 0.5 * d_o * (math.sin(beta0) + math.sin(beta_f))


def compliant_depth(delta: float, overshoot: float = 2.0) -> float:
    if overshoot < 0:
        raise InvalidDimension("overshoot must be non-negative", field="overshoot")
    delta_c = delta - overshoot
    if delta_c <= 0:
        raise InvalidDimension(f"compliant depth {delta_c} is not positive", field="overshoot")
    return delta_c


# Analytic shapes
def circle_cloud(radius: float, n: int = 360) -> FaceCloud:
    a = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return FaceCloud(radius * np.column_stack([np.cos(a), np.sin(a)]))


def rectangle_cloud(length: float, width: float, n: int = 240) -> FaceCloud:
    """Perimeter samples of a length x width rectangle centred at the origin, long side on x"""
    corners = np.array([
        [length / 2, -width / 2], [length / 2, width / 2],
        [-length / 2, width / 2], [-length / 2, -width / 2],
    ])
    return FaceCloud(_sample_polygon(corners, n))


def triangle_cloud(side: float, n: int = 240) -> FaceCloud:
    r = side / math.sqrt(3.0)
    a = np.radians([90.0, 210.0, 330.0])
    corners = r * np.column_stack([np.cos(a), np.sin(a)])
    return FaceCloud(_sample_polygon(corners, n))


def pear_cloud(big_radius: float, small_radius: float, offset: float, n: int = 360) -> FaceCloud:
    """Convex hull of two circles whose centres are `offset` apart along x"""
    a = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    unit = np.column_stack([np.cos(a), np.sin(a)])
    pts = np.vstack([big_radius * unit, small_radius * unit + np.array([offset, 0.0])])
    hull = ConvexHull(pts)
    return FaceCloud(pts[hull.vertices])


def _sample_polygon(corners: np.ndarray, n: int) -> np.ndarray:
    k = len(corners)
    per_edge = max(n // k, 1)
    out = []
    for i in range(k):
        a, b = corners[i], corners[(i + 1) % k]
        t = np.linspace(0.0, 1.0, per_edge, endpoint=False)[:, None]
        out.append(a + t * (b - a))
    return np.vstack(out)


# Face cloud files
def load_face(path: Union[str, Path]) -> FaceCloud:
    """Read "x y" pairs, one per line; '#' starts a comment"""
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DegenerateCloud(f"bad face line '{raw}' in {path}")
        rows.append([float(parts[0]), float(parts[1])])
    return FaceCloud(np.array(rows))


def save_face(face: FaceCloud, path: Union[str, Path], comment: Optional[str] = None) -> None:
    lines = [f"# {comment}"] if comment else []
    lines += [f"{x!r} {y!r}" for x, y in face.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")
