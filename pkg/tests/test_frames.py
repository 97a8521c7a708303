import numpy as np
import pytest

from vadet import (
    FrameBuffer,
    InsufficientHistoryError,
    LidarFrame,
    PointCloud,
    Pose,
    SequenceGapError,
    fixed_aggregate,
    sample_rat_count,
)
from vadet.geometry import FEATURE_REL_TIMESTAMP
from conftest import random_cloud


def frame(rng, n, index, pose=None):
    return LidarFrame(random_cloud(rng, n), pose or Pose.identity(), index * 100_000, index)


class TestFrameBuffer:
    def test_eviction_keeps_newest_window(self, rng):
        buf = FrameBuffer(n_max=16)
        for i in range(1, 18):  # indices 1..17
            buf.push(frame(rng, 10, i))
        assert len(buf) == 16
        assert [f.frame_index for f in buf.frames()] == list(range(2, 18))

    def test_gap_rejected(self, rng):
        buf = FrameBuffer()
        buf.push(frame(rng, 5, 3))
        with pytest.raises(SequenceGapError, match="expected frame index 4, got 5"):
            buf.push(frame(rng, 5, 5))

    def test_push_into_empty(self, rng):
        buf = FrameBuffer()
        buf.push(frame(rng, 5, 0))
        assert len(buf) == 1


class TestFixedAggregate:
    def test_counts_and_timestamps(self, rng):
        buf = FrameBuffer(frame_rate=10.0)
        buf.push(frame(rng, 100, 0))
        buf.push(frame(rng, 150, 1))
        out = fixed_aggregate(buf, 2)
        assert out.count == 250
        stamps = set(out.features[:, FEATURE_REL_TIMESTAMP])
        assert stamps == {0.0, -0.1}

    def test_single_frame_is_identity_with_zeroed_stamp(self, rng):
        buf = FrameBuffer()
        buf.push(frame(rng, 80, 0))
        out = fixed_aggregate(buf, 1)
        np.testing.assert_array_equal(out.positions, buf.newest.cloud.positions)
        assert (out.features[:, FEATURE_REL_TIMESTAMP] == 0.0).all()
        np.testing.assert_array_equal(out.features[:, :2], buf.newest.cloud.features[:, :2])

    def test_ego_motion_correction(self):
        # Ego advanced 1 m in x between frames; a point at the old ego origin
        # must land at (-1, 0, 0) in the current frame.
        cloud = PointCloud(np.zeros((1, 3)), np.zeros((1, 3)))
        buf = FrameBuffer()
        buf.push(LidarFrame(cloud, Pose.identity(), 0, 0))
        buf.push(LidarFrame(PointCloud.empty(), Pose.from_translation(1, 0, 0), 100_000, 1))
        out = fixed_aggregate(buf, 2)
        np.testing.assert_allclose(out.positions[0], [-1.0, 0.0, 0.0], atol=1e-12)

    def test_order_newest_first_within_frame_stable(self, rng):
        buf = FrameBuffer()
        a, b = random_cloud(rng, 30), random_cloud(rng, 40)
        buf.push(LidarFrame(a, Pose.identity(), 0, 0))
        buf.push(LidarFrame(b, Pose.identity(), 100_000, 1))
        out = fixed_aggregate(buf, 2)
        np.testing.assert_array_equal(out.positions[:40], b.positions)
        np.testing.assert_array_equal(out.positions[40:], a.positions)

    def test_exact_timestamp_set(self, rng):
        buf = FrameBuffer(frame_rate=10.0)
        for i in range(5):
            buf.push(frame(rng, 20, i))
        out = fixed_aggregate(buf, 4)
        expected = {0.0, -0.1, -0.2, -0.3}
        assert set(out.features[:, FEATURE_REL_TIMESTAMP]) == expected

    def test_count_is_sum_of_recent_frames(self, rng):
        buf = FrameBuffer()
        sizes = [13, 7, 101, 55, 29]
        for i, n in enumerate(sizes):
            buf.push(frame(rng, n, i))
        for k in range(1, 6):
            assert fixed_aggregate(buf, k).count == sum(sizes[-k:])

    def test_insufficient_history(self, rng):
        buf = FrameBuffer()
        buf.push(frame(rng, 10, 0))
        with pytest.raises(InsufficientHistoryError):
            fixed_aggregate(buf, 2)

    def test_rejects_zero_frames(self, rng):
        buf = FrameBuffer()
        buf.push(frame(rng, 10, 0))
        with pytest.raises(ValueError):
            fixed_aggregate(buf, 0)


class TestRatSampler:
    def test_degenerate_range(self):
        rng = np.random.default_rng(0)
        assert all(sample_rat_count(rng, 3, 3) == 3 for _ in range(100))

    def test_determinism(self):
        g1, g2 = np.random.default_rng(123), np.random.default_rng(123)
        seq1 = [sample_rat_count(g1, 3, 16) for _ in range(500)]
        seq2 = [sample_rat_count(g2, 3, 16) for _ in range(500)]
        assert seq1 == seq2

    def test_uniformity_130k_draws(self):
        rng = np.random.default_rng(42)
        draws = np.array([sample_rat_count(rng, 3, 16) for _ in range(130_000)])
        freqs = np.bincount(draws, minlength=17)[3:17] / draws.size
        assert np.abs(freqs - 1 / 14).max() < 0.02

    def test_rejects_inverted_range(self):
        with pytest.raises(ValueError):
            sample_rat_count(np.random.default_rng(0), 5, 4)
