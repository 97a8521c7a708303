"""Per-object variable aggregation.

Instead of concatenating a fixed number of past sweeps for the whole
scene, each previously detected object gets its own aggregation depth,
read from a speed x density lookup table, and its own crop region grown
along the heading to cover the trail the object leaves while moving.
Points outside every region fall back to a shallow fixed aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _crop
from .binning import bin_index, validate_edges
from .errors import InsufficientHistoryError
from .frames import FrameBuffer, fixed_aggregate
from .geometry import (
    FEATURE_REL_TIMESTAMP,
    DetectedBox,
    OrientedBox,
    PointCloud,
    relative_pose,
    transform_points,
)

__all__ = [
    "EtaTable",
    "AggregationRegion",
    "VadetConfig",
    "lookup_eta",
    "predict_region",
    "aggregate_objects",
    "aggregate_background",
    "build_vadet_input",
]


@dataclass(frozen=True, eq=False)
class EtaTable:
    """Lookup from (speed bin, density bin) to an aggregation frame count.

    Bins are lower-inclusive with an unbounded top bin, so the grid has
    exactly one row per speed edge and one column per density edge.
    """

    speed_edges: np.ndarray
    density_edges: np.ndarray
    frames: np.ndarray
    n_min: int = 3
    n_max: int = 16

    def __post_init__(self):
        speed = validate_edges(self.speed_edges, "speed_edges")
        density = validate_edges(self.density_edges, "density_edges")
        frames = np.asarray(self.frames)
        if not np.issubdtype(frames.dtype, np.integer):
            raise ValueError("frame grid must be integer-valued")
        frames = frames.astype(np.int64)
        if frames.shape != (speed.size, density.size):
            raise ValueError(
                f"frame grid shape {frames.shape} does not match "
                f"({speed.size}, {density.size}) bins"
            )
        if self.n_min > self.n_max:
            raise ValueError(f"n_min ({self.n_min}) exceeds n_max ({self.n_max})")
        if frames.size and (frames.min() < self.n_min or frames.max() > self.n_max):
            raise ValueError(
                f"frame entries must lie in [{self.n_min}, {self.n_max}], "
                f"got range [{frames.min()}, {frames.max()}]"
            )
        object.__setattr__(self, "speed_edges", speed)
        object.__setattr__(self, "density_edges", density)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "n_min", int(self.n_min))
        object.__setattr__(self, "n_max", int(self.n_max))

    @staticmethod
    def constant(value: int, n_min: int = 3, n_max: int = 16) -> "EtaTable":
        """Single-bin table mapping every object to ``value`` frames."""
        return EtaTable(
            np.zeros(1), np.zeros(1), np.full((1, 1), value, dtype=np.int64), n_min, n_max
        )


@dataclass(frozen=True, eq=False)
class AggregationRegion:
    """A crop box for one object's history plus how many frames feed it."""

    box: OrientedBox
    frame_count: int
    source_box_id: int = 0


@dataclass(frozen=True)
class VadetConfig:
    """Knobs of the variable-aggregation pipeline.

    ``sigma`` is the multiplicative margin applied to every region
    dimension (>= 1); ``background_frames`` is the fixed depth used for
    points outside all regions; ``n_min``/``n_max`` bound table entries.
    """

    sigma: float = 1.1
    background_frames: int = 3
    frame_rate: float = 10.0
    n_min: int = 3
    n_max: int = 16

    def __post_init__(self):
        if not self.sigma >= 1.0:
            raise ValueError(f"sigma must be >= 1, got {self.sigma}")
        if not 1 <= self.background_frames <= self.n_max:
            raise ValueError(
                f"background_frames must be in [1, {self.n_max}], "
                f"got {self.background_frames}"
            )
        if self.n_min > self.n_max:
            raise ValueError(f"n_min ({self.n_min}) exceeds n_max ({self.n_max})")
        if not self.frame_rate > 0.0:
            raise ValueError(f"frame_rate must be positive, got {self.frame_rate}")


def lookup_eta(table: EtaTable, speed: float, density: float) -> int:
    """Frame count for an object with the given speed (m/s) and density (pts/m^2)."""
    i = bin_index(table.speed_edges, speed)
    j = bin_index(table.density_edges, density)
    return int(table.frames[i, j])


def predict_region(
    det: DetectedBox, eta: int, cfg: VadetConfig, *, source_box_id: int = 0
) -> AggregationRegion:
    """Aggregation region for one previous detection.

    The box is advanced one frame under a constant-velocity model, then
    recentered halfway back along the trail covered during the ``eta``
    aggregated frames; its length grows by the full trail extent and all
    dimensions pick up the ``sigma`` margin. Heading and the vertical
    coordinate are carried through unchanged (velocity is planar).
    """
    if eta < 1:
        raise ValueError(f"eta must be >= 1, got {eta}")
    f = cfg.frame_rate
    vx, vy = det.velocity
    trail_frames = (eta - 1) / f
    center = np.array(
        [
            det.box.center[0] + vx / f - 0.5 * vx * trail_frames,
            det.box.center[1] + vy / f - 0.5 * vy * trail_frames,
            det.box.center[2],
        ]
    )
    box = OrientedBox(
        center,
        cfg.sigma * det.box.length + det.speed * trail_frames,
        cfg.sigma * det.box.width,
        cfg.sigma * det.box.height,
        det.box.yaw,
    )
    return AggregationRegion(box, int(eta), source_box_id)


def _sorted_regions(regions: list[AggregationRegion]) -> list[AggregationRegion]:
    return sorted(enumerate(regions), key=lambda item: (item[1].source_box_id, item[0]))


def aggregate_objects(buf: FrameBuffer, regions: list[AggregationRegion]) -> PointCloud:
    """Collect each region's point history over its own frame count.

    Walking frame ages from newest to oldest, every sweep is corrected
    into the current ego frame and cropped by the union of the regions
    still deep enough to include that age. A point inside several
    overlapping regions is emitted exactly once, attributed to the lowest
    region id, so the output order (frame age, region id, point ordinal)
    is deterministic and schedule-independent.
    """
    if not regions:
        return PointCloud.empty()
    deepest = max(r.frame_count for r in regions)
    if deepest > len(buf):
        raise InsufficientHistoryError(
            f"a region requests {deepest} frames of history "
            f"but the buffer holds only {len(buf)}"
        )
    ordered = [region for _, region in _sorted_regions(regions)]
    counts = np.array([r.frame_count for r in ordered])
    table_all = _crop.pack_regions([r.box for r in ordered])
    current_pose = buf.newest.pose
    parts = []
    for age in range(deepest):
        active = np.flatnonzero(counts > age)
        if active.size == 0:
            break
        frame = buf.frame_at_age(age)
        if age == 0:
            moved = frame.cloud
        else:
            moved = transform_points(frame.cloud, relative_pose(current_pose, frame.pose))
        claimed = _crop.claim(moved.positions, table_all[active])
        hit = np.flatnonzero(claimed >= 0)
        if hit.size == 0:
            continue
        order = hit[np.argsort(claimed[hit], kind="stable")]
        features = moved.features[order].copy()
        features[:, FEATURE_REL_TIMESTAMP] = -age / buf.frame_rate
        parts.append(PointCloud(moved.positions[order], features))
    return PointCloud.concatenate(parts)


def aggregate_background(
    buf: FrameBuffer, regions: list[AggregationRegion], cfg: VadetConfig
) -> PointCloud:
    """Fixed shallow aggregation of everything outside all region boxes."""
    base = fixed_aggregate(buf, cfg.background_frames)
    if not regions:
        return base
    table = _crop.pack_regions([r.box for r in regions])
    claimed = _crop.claim(base.positions, table)
    return base.select(np.flatnonzero(claimed < 0))


def build_vadet_input(
    buf: FrameBuffer,
    prev: list[DetectedBox],
    table: EtaTable,
    cfg: VadetConfig,
    *,
    clamp_history: bool = False,
) -> PointCloud:
    """Assemble one variable-aggregation input cloud.

    Every previous detection contributes a region whose depth comes from
    the lookup table applied to its estimated speed and point density;
    the result is the union of the per-object histories and the shallow
    background. Objects with no previous detection are only covered by
    the background. With ``clamp_history`` set, depths are capped at the
    buffered frame count instead of raising, which a streaming caller
    needs while the window warms up.
    """
    if len(buf) == 0:
        raise InsufficientHistoryError("buffer is empty")
    available = len(buf)
    regions = []
    for i, det in enumerate(prev):
        eta = lookup_eta(table, det.speed, det.density)
        if clamp_history:
            eta = min(eta, available)
        regions.append(predict_region(det, eta, cfg, source_box_id=i))
    if clamp_history and cfg.background_frames > available:
        cfg = VadetConfig(
            cfg.sigma, available, cfg.frame_rate, min(cfg.n_min, available), cfg.n_max
        )
    objects = aggregate_objects(buf, regions)
    background = aggregate_background(buf, regions, cfg)
    return PointCloud.concatenate([objects, background])
