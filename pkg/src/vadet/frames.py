"""Rolling frame window and fixed multi-frame aggregation.

A buffer holds the most recent sweeps of one sensor, gap-free and in
arrival order. Aggregation re-expresses past sweeps in the newest sweep's
ego frame and concatenates them, stamping each point with its age in
seconds. One writer owns a buffer; the clouds it hands out are immutable
snapshots that may be processed on any thread.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientHistoryError, SequenceGapError
from .geometry import FEATURE_REL_TIMESTAMP, PointCloud, Pose, relative_pose, transform_points

__all__ = ["LidarFrame", "FrameBuffer", "fixed_aggregate", "sample_rat_count"]


@dataclass(frozen=True, eq=False)
class LidarFrame:
    """One sweep: cloud in ego coordinates, ego->world pose, capture time."""

    cloud: PointCloud
    pose: Pose
    timestamp_us: int
    frame_index: int


class FrameBuffer:
    """Sliding window over the last ``n_max`` consecutive frames.

    Frames must arrive with strictly consecutive indices; gaps raise
    rather than being silently bridged, because interpolating over a gap
    would corrupt motion-based region prediction downstream.
    """

    def __init__(self, n_max: int = 16, frame_rate: float = 10.0):
        if n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {n_max}")
        if not frame_rate > 0.0:
            raise ValueError(f"frame_rate must be positive, got {frame_rate}")
        self.n_max = int(n_max)
        self.frame_rate = float(frame_rate)
        self._frames: deque[LidarFrame] = deque(maxlen=self.n_max)

    def __len__(self) -> int:
        return len(self._frames)

    def push(self, frame: LidarFrame) -> None:
        """Append a frame, evicting the oldest once the window is full."""
        if self._frames:
            expected = self._frames[-1].frame_index + 1
            if frame.frame_index != expected:
                raise SequenceGapError(
                    f"expected frame index {expected}, got {frame.frame_index}"
                )
        self._frames.append(frame)

    def frame_at_age(self, age: int) -> LidarFrame:
        """The frame ``age`` steps behind the newest one (age 0 = newest)."""
        if not 0 <= age < len(self._frames):
            raise InsufficientHistoryError(
                f"frame age {age} requested but buffer holds {len(self._frames)} frames"
            )
        return self._frames[len(self._frames) - 1 - age]

    @property
    def newest(self) -> LidarFrame:
        if not self._frames:
            raise InsufficientHistoryError("buffer is empty")
        return self._frames[-1]

    def frames(self) -> tuple[LidarFrame, ...]:
        """Snapshot of the window, oldest first."""
        return tuple(self._frames)


def fixed_aggregate(buf: FrameBuffer, n: int) -> PointCloud:
    """Concatenate the ``n`` newest frames in the newest frame's ego coordinates.

    Each past sweep is corrected for ego motion between its capture pose
    and the current pose, and every point's timestamp feature is set to
    -age/frame_rate seconds. Points come out grouped by frame, newest
    first, preserving within-frame order, so downstream crops see a
    reproducible layout.
    """
    if n < 1:
        raise ValueError(f"frame count must be >= 1, got {n}")
    if n > len(buf):
        raise InsufficientHistoryError(
            f"aggregation of {n} frames requested but buffer holds {len(buf)}"
        )
    current_pose = buf.newest.pose
    parts = []
    for age in range(n):
        frame = buf.frame_at_age(age)
        if age == 0:
            moved = frame.cloud
        else:
            moved = transform_points(frame.cloud, relative_pose(current_pose, frame.pose))
        features = moved.features.copy()
        features[:, FEATURE_REL_TIMESTAMP] = -age / buf.frame_rate
        parts.append(PointCloud(moved.positions, features))
    return PointCloud.concatenate(parts)


def sample_rat_count(rng: np.random.Generator, n_min: int, n_max: int) -> int:
    """Draw the frame count for one randomized-aggregation training scene.

    Uniform over the closed range [n_min, n_max]; deterministic for a
    seeded generator. Callers choose the resampling granularity by how
    often they call this (per scene, per iteration, ...).
    """
    if n_min > n_max:
        raise ValueError(f"n_min ({n_min}) must not exceed n_max ({n_max})")
    return int(rng.integers(n_min, n_max + 1))
