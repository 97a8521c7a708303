import json
import math

import numpy as np
import pytest

from vadet import (
    BackgroundSpec,
    EgoMotion,
    NoiseModel,
    ObjectSpec,
    OrientedBox,
    PointBudget,
    ScenarioSpec,
    StepCurve,
)
from vadet import io as vio
from vadet.cli import main


def make_scenario(tmp_path, duration=12, with_motion=True):
    objects = [
        ObjectSpec(
            OrientedBox(np.array([12.0, 4.0, 0.75]), 4.0, 2.0, 1.5, 0.0),
            np.zeros(2),
            PointBudget(60),
        ),
    ]
    if with_motion:
        objects.append(
            ObjectSpec(
                OrientedBox(np.array([-10.0, -6.0, 0.9]), 4.5, 2.1, 1.8, 0.0),
                np.array([8.0, 0.0]),
                PointBudget(90),
            )
        )
    spec = ScenarioSpec(
        duration, 10.0, EgoMotion("straight", speed=2.0), tuple(objects),
        0.01, seed=5, background=BackgroundSpec(200, radius=40.0),
    )
    path = tmp_path / "scenario.json"
    vio.write_scenario(spec, path)
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestSimulateAndAggregate:
    def test_aggregate_frames_one_is_identity(self, tmp_path):
        spec = make_scenario(tmp_path)
        seq_dir = tmp_path / "seq"
        assert run("simulate", "--spec", spec, "--out", seq_dir, "--quiet") == 0
        out_dir = tmp_path / "agg1"
        assert run("aggregate", "--seq", seq_dir, "--frames", 1,
                   "--out", out_dir, "--quiet") == 0
        _, original = vio.read_sequence(seq_dir)
        _, aggregated = vio.read_sequence(out_dir)
        for a, b in zip(original, aggregated):
            np.testing.assert_array_equal(a.cloud.positions, b.cloud.positions)
            np.testing.assert_array_equal(a.cloud.features, b.cloud.features)
            assert (b.cloud.features[:, 2] == 0).all()

    def test_aggregate_counts_grow_until_window_full(self, tmp_path):
        spec = make_scenario(tmp_path, duration=6)
        seq_dir = tmp_path / "seq"
        run("simulate", "--spec", spec, "--out", seq_dir, "--quiet")
        out_dir = tmp_path / "agg3"
        assert run("aggregate", "--seq", seq_dir, "--frames", 3,
                   "--out", out_dir, "--quiet") == 0
        _, original = vio.read_sequence(seq_dir)
        _, aggregated = vio.read_sequence(out_dir)
        per_frame = [len(f.cloud) for f in original]
        for t, frame in enumerate(aggregated):
            expected = sum(per_frame[max(0, t - 2): t + 1])
            assert len(frame.cloud) == expected

    def test_aggregate_depth_beyond_sequence_is_exit_3(self, tmp_path):
        spec = make_scenario(tmp_path, duration=4)
        seq_dir = tmp_path / "seq"
        run("simulate", "--spec", spec, "--out", seq_dir, "--quiet")
        assert run("aggregate", "--seq", seq_dir, "--frames", 10,
                   "--out", tmp_path / "agg", "--quiet") == 3

    def test_schema_error_is_exit_2(self, tmp_path):
        bad = tmp_path / "scenario.json"
        bad.write_text(json.dumps({"duration": 3}))
        assert run("simulate", "--spec", bad, "--out", tmp_path / "seq") == 2

    def test_missing_file_is_exit_2(self, tmp_path):
        assert run("simulate", "--spec", tmp_path / "nope.json",
                   "--out", tmp_path / "seq") == 2


class TestVadetCommand:
    def test_empty_detections_equals_three_frame_aggregate(self, tmp_path):
        spec = make_scenario(tmp_path)
        seq_dir = tmp_path / "seq"
        run("simulate", "--spec", spec, "--out", seq_dir, "--quiet")

        dets_path = tmp_path / "empty.json"
        dets_path.write_text("[]")
        eta_path = tmp_path / "eta.json"
        eta_path.write_text(json.dumps({
            "speed_edges": [0.0], "density_edges": [0.0],
            "frames": [[16]], "n_min": 3, "n_max": 16,
        }))
        vadet_dir = tmp_path / "vadet_out"
        agg_dir = tmp_path / "agg3"
        assert run("vadet", "--seq", seq_dir, "--detections", dets_path,
                   "--eta", eta_path, "--out", vadet_dir, "--quiet") == 0
        assert run("aggregate", "--seq", seq_dir, "--frames", 3,
                   "--out", agg_dir, "--quiet") == 0
        va_manifest, _ = vio.read_sequence(vadet_dir)
        ag_manifest, _ = vio.read_sequence(agg_dir)
        for va, ag in zip(va_manifest.frame_files, ag_manifest.frame_files):
            assert (vadet_dir / va).read_bytes() == (agg_dir / ag).read_bytes()

    def test_detection_frame_count_mismatch_is_exit_2(self, tmp_path):
        spec = make_scenario(tmp_path, duration=5)
        seq_dir = tmp_path / "seq"
        run("simulate", "--spec", spec, "--out", seq_dir, "--quiet")
        dets_path = tmp_path / "dets.json"
        dets_path.write_text("[[], []]")
        eta_path = tmp_path / "eta.json"
        eta_path.write_text(json.dumps({
            "speed_edges": [0.0], "density_edges": [0.0],
            "frames": [[3]], "n_min": 3, "n_max": 16,
        }))
        assert run("vadet", "--seq", seq_dir, "--detections", dets_path,
                   "--eta", eta_path, "--out", tmp_path / "out") == 2


class TestPipelineCommands:
    def test_mock_detect_sweep_build_eta_eval(self, tmp_path):
        spec = make_scenario(tmp_path, duration=16)
        seq_dir = tmp_path / "seq"
        run("simulate", "--spec", spec, "--out", seq_dir, "--quiet")
        gt_path = seq_dir / "ground_truth.json"

        noise_path = tmp_path / "noise.json"
        vio.write_noise_model(
            NoiseModel(center_sigma=0.05, vel_sigma=0.1,
                       score_curve=StepCurve(np.array([0.0, 2.0]),
                                             np.array([0.5, 0.9]))),
            noise_path,
        )
        dets_path = tmp_path / "detections.json"
        assert run("mock-detect", "--seq", seq_dir, "--gt", gt_path,
                   "--noise", noise_path, "--out", dets_path,
                   "--seed", 4, "--quiet") == 0
        detections = vio.read_detections(dets_path)
        assert len(detections) == 16

        sweep_path = tmp_path / "sweep.json"
        csv_path = tmp_path / "sweep.csv"
        assert run("sweep", "--seq", seq_dir, "--gt", gt_path,
                   "--noise", noise_path, "--frames", "3..6",
                   "--out", sweep_path, "--csv", csv_path, "--quiet") == 0
        sweep = vio.read_sweep_result(sweep_path)
        assert list(sweep.frame_counts) == [3, 4, 5, 6]
        assert csv_path.read_text().count("\n") > 4

        eta_path = tmp_path / "eta.json"
        assert run("build-eta", "--sweep", sweep_path, "--out", eta_path,
                   "--quiet") == 0
        table = vio.read_eta_table(eta_path)
        assert table.frames.min() >= 3

        vadet_dir = tmp_path / "vadet_out"
        assert run("vadet", "--seq", seq_dir, "--detections", dets_path,
                   "--eta", eta_path, "--out", vadet_dir, "--quiet") == 0

        report = tmp_path / "report.csv"
        assert run("eval", "--detections", dets_path, "--gt", gt_path,
                   "--breakdown", "speed,density,cross",
                   "--out", report, "--quiet") == 0
        text = report.read_text()
        assert "weighted_average" in text
        assert text.startswith("kind,category,n_gt")

    def test_sweep_range_beyond_sequence_is_exit_3(self, tmp_path):
        spec = make_scenario(tmp_path, duration=5)
        seq_dir = tmp_path / "seq"
        run("simulate", "--spec", spec, "--out", seq_dir, "--quiet")
        noise_path = tmp_path / "noise.json"
        vio.write_noise_model(NoiseModel(), noise_path)
        assert run("sweep", "--seq", seq_dir, "--gt", seq_dir / "ground_truth.json",
                   "--noise", noise_path, "--frames", "3..16",
                   "--out", tmp_path / "s.json", "--quiet") == 3
