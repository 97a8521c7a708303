"""Rigid transforms, point clouds, oriented boxes, IoU and point density.

Everything in this module is a pure function on immutable values; no
operation mutates its arguments, so all of it is safe to call from any
number of threads.

Conventions used throughout the package:

* poses map points from their own frame into a parent frame via
  ``R @ p + t``;
* boxes are yaw-rotated around +z only, dimensions are full extents;
* box membership is boundary-inclusive on all six faces, so crops are
  deterministic regardless of floating-point tie direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "ObjectClass",
    "Pose",
    "PointCloud",
    "OrientedBox",
    "DetectedBox",
    "FEATURE_INTENSITY",
    "FEATURE_ELONGATION",
    "FEATURE_REL_TIMESTAMP",
    "NUM_FEATURES",
    "relative_pose",
    "transform_points",
    "transform_detection",
    "points_in_box",
    "half_surface_area",
    "point_density",
    "bev_intersection_area",
    "iou_3d",
    "normalize_yaw",
]

# Feature column layout of every PointCloud.
FEATURE_INTENSITY = 0
FEATURE_ELONGATION = 1
FEATURE_REL_TIMESTAMP = 2
NUM_FEATURES = 3

_ORTHONORMAL_ATOL = 1e-9
# Intersection areas below this are treated as no contact.
_AREA_EPS = 1e-12


class ObjectClass(IntEnum):
    VEHICLE = 1
    PEDESTRIAN = 2
    CYCLIST = 3


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.fmod(yaw + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``rotation`` (3x3, det +1) plus ``translation`` (3,) in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=_ORTHONORMAL_ATOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHONORMAL_ATOL:
            raise ValueError("rotation determinant must be +1")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(x: float, y: float, z: float = 0.0) -> "Pose":
        return Pose(np.eye(3), np.array([x, y, z], dtype=np.float64))

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Pose rotating about +z by ``yaw``, then translating."""
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose(rot, np.asarray(translation, dtype=np.float64))

    @property
    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 representation."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def yaw(self) -> float:
        """Rotation angle about +z; exact for planar poses."""
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self @ other``: apply ``other`` first, then ``self``."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def invert(self) -> "Pose":
        rot_t = self.rotation.T
        return Pose(rot_t, -(rot_t @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map one point (3,) or a batch (N, 3) through the transform."""
        pts = np.asarray(points, dtype=np.float64)
        out = pts @ self.rotation.T
        out += self.translation
        return out


def relative_pose(t_target: Pose, t_source: Pose) -> Pose:
    """Transform taking source-frame coordinates into the target frame.

    Both arguments map their local frame into a common parent frame; the
    result is ``invert(t_target) . t_source``, which re-expresses points
    captured in the source frame in target-frame coordinates.
    """
    return t_target.invert().compose(t_source)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Point positions (N, 3) in meters plus per-point features (N, 3).

    Feature columns are intensity, elongation and relative timestamp in
    seconds (0 for a live sweep, negative for points borrowed from past
    sweeps). Arrays are treated as immutable by every consumer; callers
    must not mutate them after construction.
    """

    positions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        feat = np.asarray(self.features, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if feat.ndim != 2 or feat.shape[1] != NUM_FEATURES:
            raise ValueError(f"features must be (N, {NUM_FEATURES}), got {feat.shape}")
        if pos.shape[0] != feat.shape[0]:
            raise ValueError(
                f"positions and features disagree on point count: "
                f"{pos.shape[0]} vs {feat.shape[0]}"
            )
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feat)

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.empty((0, 3)), np.empty((0, NUM_FEATURES)))

    @staticmethod
    def concatenate(clouds: "list[PointCloud]") -> "PointCloud":
        if not clouds:
            return PointCloud.empty()
        return PointCloud(
            np.concatenate([c.positions for c in clouds], axis=0),
            np.concatenate([c.features for c in clouds], axis=0),
        )

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def select(self, indices: np.ndarray) -> "PointCloud":
        return PointCloud(self.positions[indices], self.features[indices])


def transform_points(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Rigidly map a cloud's positions; features pass through untouched."""
    return PointCloud(pose.apply(cloud.positions), cloud.features)


@dataclass(frozen=True, eq=False)
class OrientedBox:
    """Upright box: center (3,) m, full extents l/w/h > 0 m, yaw in (-pi, pi]."""

    center: np.ndarray
    length: float
    width: float
    height: float
    yaw: float

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64).reshape(3)
        center.flags.writeable = False
        object.__setattr__(self, "center", center)
        for name in ("length", "width", "height"):
            value = float(getattr(self, name))
            if not value > 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def volume(self) -> float:
        return self.length * self.width * self.height

    def corners_bev(self) -> np.ndarray:
        """Footprint corners (4, 2), counter-clockwise."""
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]

    def scaled(self, factor: float) -> "OrientedBox":
        """Same center and heading with all extents multiplied by ``factor``."""
        return OrientedBox(
            self.center,
            self.length * factor,
            self.width * factor,
            self.height * factor,
            self.yaw,
        )


@dataclass(frozen=True, eq=False)
class DetectedBox:
    """A detection: box, confidence, planar velocity and its in-box point count."""

    box: OrientedBox
    score: float = 1.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    point_count: int = 0
    class_id: int = ObjectClass.VEHICLE

    def __post_init__(self):
        score = float(self.score)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {score}")
        vel = np.array(self.velocity, dtype=np.float64).reshape(2)
        vel.flags.writeable = False
        count = int(self.point_count)
        if count < 0:
            raise ValueError(f"point_count must be >= 0, got {count}")
        object.__setattr__(self, "score", score)
        object.__setattr__(self, "velocity", vel)
        object.__setattr__(self, "point_count", count)
        object.__setattr__(self, "class_id", int(self.class_id))

    @property
    def speed(self) -> float:
        return float(np.hypot(self.velocity[0], self.velocity[1]))

    @property
    def density(self) -> float:
        """Points per square meter of half the box surface."""
        return point_density(
            self.point_count, self.box.length, self.box.width, self.box.height
        )


def transform_detection(det: DetectedBox, pose: Pose) -> DetectedBox:
    """Re-express a detection in another frame related by a planar pose.

    The box keeps yaw-only orientation, so ``pose`` must not introduce
    roll or pitch; only its z-rotation component is applied to yaw and
    velocity.
    """
    yaw_shift = pose.yaw
    c, s = math.cos(yaw_shift), math.sin(yaw_shift)
    vel = np.array(
        [
            c * det.velocity[0] - s * det.velocity[1],
            s * det.velocity[0] + c * det.velocity[1],
        ]
    )
    box = OrientedBox(
        pose.apply(det.box.center),
        det.box.length,
        det.box.width,
        det.box.height,
        det.box.yaw + yaw_shift,
    )
    return DetectedBox(box, det.score, vel, det.point_count, det.class_id)


def points_in_box(points, box: OrientedBox) -> np.ndarray:
    """Indices of points inside the box, boundaries included.

    ``points`` may be a PointCloud or a bare (N, 3) array. A point belongs
    to the box when its coordinates, expressed in the box's yaw-aligned
    frame, satisfy |x| <= l/2, |y| <= w/2, |z| <= h/2.
    """
    pos = points.positions if isinstance(points, PointCloud) else np.asarray(points)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise ValueError(f"expected (N, 3) positions, got {pos.shape}")
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = pos[:, 0] - box.center[0]
    dy = pos[:, 1] - box.center[1]
    dz = pos[:, 2] - box.center[2]
    bx = c * dx + s * dy
    by = -s * dx + c * dy
    inside = (
        (np.abs(bx) <= 0.5 * box.length)
        & (np.abs(by) <= 0.5 * box.width)
        & (np.abs(dz) <= 0.5 * box.height)
    )
    return np.flatnonzero(inside)


def half_surface_area(length: float, width: float, height: float) -> float:
    """l*w + l*h + w*h: half the surface area of the box."""
    if not (length > 0.0 and width > 0.0 and height > 0.0):
        raise ValueError(
            f"dimensions must be positive, got ({length}, {width}, {height})"
        )
    return length * width + length * height + width * height


def point_density(count: int, length: float, width: float, height: float) -> float:
    """In-box point count divided by half the box surface area, pts/m^2."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    return count / half_surface_area(length, width, height)


# Vertices within this distance (meters) of a clip line count as inside;
# without the slack, a vertex sitting exactly on a shared edge can round
# to the wrong side and silently lose a polygon corner.
_CLIP_EPS = 1e-9


def _clip_polygon(polygon: np.ndarray, origin: np.ndarray, unit_normal: np.ndarray) -> np.ndarray:
    """Clip a CCW polygon against the half-plane (p - origin) . n >= 0."""
    kept = []
    n = polygon.shape[0]
    dist = (polygon - origin) @ unit_normal
    for i in range(n):
        j = (i + 1) % n
        di, dj = dist[i], dist[j]
        inside_i = di >= -_CLIP_EPS
        inside_j = dj >= -_CLIP_EPS
        if inside_i:
            kept.append(polygon[i])
        if inside_i != inside_j:
            t = di / (di - dj)
            kept.append(polygon[i] + t * (polygon[j] - polygon[i]))
    if not kept:
        return np.empty((0, 2))
    return np.asarray(kept)


def _polygon_area(polygon: np.ndarray) -> float:
    """Shoelace area of a CCW polygon."""
    if polygon.shape[0] < 3:
        return 0.0
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def bev_intersection_area(a: OrientedBox, b: OrientedBox) -> float:
    """Area of the overlap of the two footprints, via convex polygon clipping.

    Clipping keeps the counter-clockwise vertex order; overlaps whose area
    falls below 1e-12 m^2 are reported as zero so that glancing contact
    between near-degenerate rectangles does not produce noise-level areas.
    """
    poly = a.corners_bev()
    corners_b = b.corners_bev()
    for i in range(4):
        edge = corners_b[(i + 1) % 4] - corners_b[i]
        # Inward unit normal of a CCW edge.
        normal = np.array([-edge[1], edge[0]]) / math.hypot(edge[0], edge[1])
        poly = _clip_polygon(poly, corners_b[i], normal)
        if poly.shape[0] == 0:
            return 0.0
    area = _polygon_area(poly)
    if area < _AREA_EPS:
        return 0.0
    return area


def iou_3d(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection-over-union of two upright boxes, in [0, 1]."""
    area = bev_intersection_area(a, b)
    if area == 0.0:
        return 0.0
    lo = max(a.center[2] - 0.5 * a.height, b.center[2] - 0.5 * b.height)
    hi = min(a.center[2] + 0.5 * a.height, b.center[2] + 0.5 * b.height)
    dz = hi - lo
    if dz <= 0.0:
        return 0.0
    intersection = area * dz
    union = a.volume + b.volume - intersection
    return min(intersection / union, 1.0)
