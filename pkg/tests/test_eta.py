import numpy as np
import pytest

from vadet import (
    BinEdges,
    DetectedBox,
    NoiseModel,
    OrientedBox,
    StepCurve,
    SweepResult,
    VadetConfig,
    bin_object,
    build_eta_table,
    make_aggregation_detector,
    run_sweep,
)


class TestBinEdgesAndBinning:
    def test_default_edges_carry_corrected_entry(self):
        edges = BinEdges()
        assert edges.speed_edges[5] == pytest.approx(8.16)
        assert np.all(np.diff(edges.speed_edges) > 0)
        assert edges.density_edges[0] == 0.0

    def test_stationary_speed_bin(self):
        assert bin_object(0.1, 1.0, BinEdges())[0] == 0

    def test_density_edge_goes_to_upper_bin(self):
        assert bin_object(0.0, 1.86, BinEdges())[1] == 2

    def test_unbounded_top_speed_bin(self):
        edges = BinEdges()
        assert bin_object(40.0, 0.0, edges)[0] == edges.speed_edges.size - 1

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            bin_object(-0.1, 1.0, BinEdges())

    def test_edges_must_start_at_zero(self):
        with pytest.raises(ValueError, match="start at 0"):
            BinEdges(speed_edges=np.array([0.5, 1.0]))


def small_sweep(ap_rows, frame_counts=(3, 4, 5), counts=None):
    """SweepResult over a 1 x len(ap_rows) bin grid; each row is one bin."""
    edges = BinEdges(
        speed_edges=np.zeros(1),
        density_edges=np.arange(len(ap_rows), dtype=float),
    )
    ap = np.array([ap_rows], dtype=np.float64)
    if counts is None:
        counts = np.array(
            [[0 if np.all(np.isnan(row)) else 10 for row in ap_rows]]
        )
    return SweepResult(edges, np.array(frame_counts), ap, np.array(counts))


class TestBuildEtaTable:
    def test_tie_breaks_toward_fewer_frames(self):
        sweep = small_sweep([[0.5, 0.6, 0.6]])
        table = build_eta_table(sweep, VadetConfig())
        assert table.frames[0, 0] == 4

    def test_strictly_increasing_picks_top(self):
        frame_counts = tuple(range(3, 17))
        row = [np.linspace(0.2, 0.9, 14).tolist()]
        sweep = small_sweep(row, frame_counts)
        table = build_eta_table(sweep, VadetConfig())
        assert table.frames[0, 0] == 16

    def test_absent_bin_falls_back_to_background(self):
        sweep = small_sweep([[0.5, 0.9, 0.7], [np.nan, np.nan, np.nan]])
        table = build_eta_table(sweep, VadetConfig())
        assert table.frames[0, 0] == 4
        assert table.frames[0, 1] == 3

    def test_recovers_planted_argmax(self, rng):
        frame_counts = np.arange(3, 17)
        for _ in range(50):
            n_speed = int(rng.integers(1, 5))
            n_density = int(rng.integers(1, 5))
            planted = rng.integers(3, 17, size=(n_speed, n_density))
            ap = rng.uniform(0.0, 0.79, size=(n_speed, n_density, 14))
            for i in range(n_speed):
                for j in range(n_density):
                    ap[i, j, planted[i, j] - 3] = rng.uniform(0.8, 1.0)
            edges = BinEdges(
                speed_edges=np.arange(n_speed, dtype=float),
                density_edges=np.arange(n_density, dtype=float),
            )
            sweep = SweepResult(
                edges, frame_counts, ap, np.full((n_speed, n_density), 5)
            )
            table = build_eta_table(sweep, VadetConfig())
            np.testing.assert_array_equal(table.frames, planted)

    def test_entries_within_bounds(self, rng):
        sweep = small_sweep([[0.1, 0.9, 0.3]])
        table = build_eta_table(sweep, VadetConfig())
        assert table.n_min <= table.frames.min() <= table.frames.max() <= table.n_max


def gt_object(x, speed, n_points, dims=(4.0, 2.0, 1.5)):
    box = OrientedBox(np.array([x, 0.0, 1.0]), *dims, 0.0)
    return DetectedBox(box, 1.0, np.array([speed, 0.0]), n_points)


def static_corpus(n_frames, objects):
    """One sequence whose objects never move (keeps binning trivial)."""
    return [[list(objects) for _ in range(n_frames)]]


class TestRunSweep:
    def test_only_populated_bins_get_ap(self):
        edges = BinEdges()
        corpus = static_corpus(6, [gt_object(0.0, speed=0.05, n_points=40)])
        noise = NoiseModel(smudge=False)
        detector = make_aggregation_detector(corpus[0:1], noise, edges, 10.0, seed=1)
        sweep = run_sweep(corpus, detector, edges, (3, 5))
        populated = sweep.sample_counts > 0
        assert populated.sum() == 1
        assert np.isfinite(sweep.ap[populated]).all()
        assert np.isnan(sweep.ap[~populated]).all()

    def test_determinism(self):
        edges = BinEdges()
        corpus = static_corpus(
            8,
            [gt_object(0.0, 0.05, 40), gt_object(30.0, 12.0, 150)],
        )
        noise = NoiseModel(center_sigma=0.05, detection_curve=StepCurve(
            np.array([0.0, 30.0]), np.array([0.4, 1.0])
        ))
        a = run_sweep(
            corpus,
            make_aggregation_detector(corpus, noise, edges, 10.0, seed=9),
            edges,
            (3, 6),
        )
        b = run_sweep(
            corpus,
            make_aggregation_detector(corpus, noise, edges, 10.0, seed=9),
            edges,
            (3, 6),
        )
        np.testing.assert_array_equal(a.ap, b.ap)
        np.testing.assert_array_equal(a.sample_counts, b.sample_counts)

    def test_planted_optimum_emerges(self):
        edges = BinEdges()
        objects = [gt_object(0.0, 0.05, 40)]
        corpus = static_corpus(20, objects)
        bin_ij = bin_object(0.05, objects[0].density, edges)
        noise = NoiseModel(planted_optima={bin_ij: 7})
        detector = make_aggregation_detector(corpus, noise, edges, 10.0, seed=0)
        sweep = run_sweep(corpus, detector, edges, (3, 16))
        table = build_eta_table(sweep, VadetConfig())
        assert table.frames[bin_ij] == 7

    def test_rejects_bad_range(self):
        with pytest.raises(ValueError):
            run_sweep([], lambda s, n: [], BinEdges(), (5, 3))
