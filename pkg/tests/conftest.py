"""Shared fixtures and independent oracles used across the test suite.

The oracles here deliberately avoid the library's own code paths: box
membership is re-derived from face half-spaces, IoU from Monte-Carlo
volume sampling, so that agreement between the two is evidence rather
than tautology.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from vadet import LidarFrame, FrameBuffer, OrientedBox, PointCloud, Pose


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR with positive determinant."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pose(rng: np.random.Generator, translation_scale: float = 10.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-translation_scale, translation_scale, 3))


def random_cloud(rng: np.random.Generator, n: int, extent: float = 50.0) -> PointCloud:
    features = np.zeros((n, 3))
    features[:, 0] = rng.uniform(0, 1, n)
    features[:, 1] = rng.uniform(0, 0.3, n)
    return PointCloud(rng.uniform(-extent, extent, (n, 3)), features)


def make_buffer(
    rng: np.random.Generator,
    n_frames: int,
    points_per_frame: int = 200,
    *,
    ego_step: tuple[float, float, float] = (0.0, 0.0, 0.0),
    frame_rate: float = 10.0,
    n_max: int = 16,
    extent: float = 50.0,
) -> FrameBuffer:
    buf = FrameBuffer(n_max=n_max, frame_rate=frame_rate)
    for i in range(n_frames):
        pose = Pose.from_translation(
            ego_step[0] * i, ego_step[1] * i, ego_step[2] * i
        )
        buf.push(
            LidarFrame(random_cloud(rng, points_per_frame, extent), pose, i * 100_000, i)
        )
    return buf


def halfspace_membership(positions: np.ndarray, box: OrientedBox) -> np.ndarray:
    """Independent box membership: test the three face half-space pairs.

    A point is inside when its signed distance along each face normal is
    within the half extent (boundary inclusive).
    """
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    axes = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    half = np.array([box.length, box.width, box.height]) * 0.5
    rel = positions - box.center
    inside = np.ones(positions.shape[0], dtype=bool)
    for axis, h in zip(axes, half):
        d = rel @ axis
        inside &= (d >= -h) & (d <= h)
    return inside


def random_box(
    rng: np.random.Generator,
    center_scale: float = 10.0,
    max_dim: float = 6.0,
) -> OrientedBox:
    dims = rng.uniform(0.5, max_dim, 3)
    return OrientedBox(
        rng.uniform(-center_scale, center_scale, 3),
        dims[0], dims[1], dims[2],
        rng.uniform(-math.pi, math.pi),
    )


def monte_carlo_iou(
    a: OrientedBox, b: OrientedBox, n_samples: int, rng: np.random.Generator
) -> float:
    """IoU estimated by uniform sampling over the joint bounding volume."""

    def bounds(box: OrientedBox) -> tuple[np.ndarray, np.ndarray]:
        hd = 0.5 * math.hypot(box.length, box.width)
        lo = box.center - np.array([hd, hd, 0.5 * box.height])
        hi = box.center + np.array([hd, hd, 0.5 * box.height])
        return lo, hi

    lo_a, hi_a = bounds(a)
    lo_b, hi_b = bounds(b)
    lo = np.minimum(lo_a, lo_b)
    hi = np.maximum(hi_a, hi_b)
    samples = rng.uniform(lo, hi, size=(n_samples, 3))
    in_a = halfspace_membership(samples, a)
    in_b = halfspace_membership(samples, b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240831)
