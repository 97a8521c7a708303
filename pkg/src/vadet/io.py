"""On-disk formats: binary frames, JSON documents, CSV reports.

Point data is bulky and fixed-schema, so frames are binary; everything
else is JSON for human inspection. All integers and floats are
little-endian; JSON documents are validated strictly (missing *and*
unexpected keys are schema errors naming the offending path) and round
trip losslessly at 64-bit float precision.

Frame files (magic ``VAGF``, version 1) persist the sensor channels
x, y, z, intensity, elongation as 32-bit floats. The relative-timestamp
feature is not stored: it is defined by a point's frame age at
aggregation time and is always zero for a raw sweep.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .aggregation import EtaTable
from .errors import FrameFormatError, SchemaError
from .eta import DEFAULT_SPEED_EDGES, BinEdges, SweepResult
from .evaluation import BreakdownRow
from .frames import LidarFrame
from .geometry import DetectedBox, NUM_FEATURES, OrientedBox, PointCloud, Pose
from .simulator import (
    BackgroundSpec,
    EgoMotion,
    NoiseModel,
    ObjectSpec,
    PointBudget,
    ScenarioSpec,
    StepCurve,
)

__all__ = [
    "FRAME_MAGIC",
    "FRAME_VERSION",
    "SequenceManifest",
    "read_frame",
    "write_frame",
    "read_sequence",
    "write_sequence",
    "read_detections",
    "write_detections",
    "read_eta_table",
    "write_eta_table",
    "read_bin_edges",
    "write_bin_edges",
    "read_noise_model",
    "write_noise_model",
    "read_scenario",
    "write_scenario",
    "read_sweep_result",
    "write_sweep_result",
    "write_breakdown_csv",
    "write_sweep_csv",
]

FRAME_MAGIC = b"VAGF"
FRAME_VERSION = 1

_HEADER = struct.Struct("<4sIQQ16dI")
_POINT_RECORD_BYTES = 20  # five little-endian f32 per point
_POSE_OFFSET = 24
_COUNT_OFFSET = 152
_HEADER_BYTES = _HEADER.size


# ---------------------------------------------------------------------------
# Binary frames


def write_frame(frame: LidarFrame, path) -> None:
    """Serialize one frame; positions and features are stored as f32."""
    path = Path(path)
    pose44 = frame.pose.matrix
    header = _HEADER.pack(
        FRAME_MAGIC,
        FRAME_VERSION,
        frame.frame_index,
        frame.timestamp_us,
        *pose44.reshape(16),
        len(frame.cloud),
    )
    records = np.empty((len(frame.cloud), 5), dtype="<f4")
    records[:, :3] = frame.cloud.positions
    records[:, 3] = frame.cloud.features[:, 0]
    records[:, 4] = frame.cloud.features[:, 1]
    path.write_bytes(header + records.tobytes())


def _rotation_from_header(m: np.ndarray) -> np.ndarray:
    rot = m[:3, :3]
    if np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
        return rot
    # Valid per the 1e-6 header tolerance but too loose for Pose: project
    # onto the nearest rotation.
    u, _, vt = np.linalg.svd(rot)
    if np.linalg.det(u @ vt) < 0:
        u[:, -1] = -u[:, -1]
    return u @ vt


def read_frame(path) -> LidarFrame:
    """Parse one frame file, naming the byte offset of any defect."""
    path = Path(path)
    data = path.read_bytes()
    name = str(path)
    if len(data) < _HEADER_BYTES:
        raise FrameFormatError(
            name, len(data),
            f"truncated header: need {_HEADER_BYTES} bytes, file ends here",
        )
    magic, version, frame_index, timestamp_us, *rest = _HEADER.unpack_from(data, 0)
    if magic != FRAME_MAGIC:
        raise FrameFormatError(name, 0, f"bad magic {magic!r}, expected {FRAME_MAGIC!r}")
    if version != FRAME_VERSION:
        raise FrameFormatError(
            name, 4, f"unsupported version {version}, expected {FRAME_VERSION}"
        )
    pose44 = np.array(rest[:16]).reshape(4, 4)
    count = rest[16]
    rot = pose44[:3, :3]
    if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
        raise FrameFormatError(name, _POSE_OFFSET, "pose rotation is not orthonormal")
    if not np.allclose(pose44[3], (0.0, 0.0, 0.0, 1.0), atol=1e-9):
        raise FrameFormatError(name, _POSE_OFFSET, "pose bottom row must be 0 0 0 1")
    expected = _HEADER_BYTES + count * _POINT_RECORD_BYTES
    if len(data) < expected:
        raise FrameFormatError(
            name, len(data),
            f"truncated point data: need {expected} bytes "
            f"for {count} points, file ends here",
        )
    if len(data) > expected:
        raise FrameFormatError(name, expected, f"{len(data) - expected} trailing bytes")
    records = (
        np.frombuffer(data, dtype="<f4", count=count * 5, offset=_HEADER_BYTES)
        .reshape(count, 5)
        .astype(np.float64)
    )
    features = np.zeros((count, NUM_FEATURES))
    features[:, 0] = records[:, 3]
    features[:, 1] = records[:, 4]
    pose = Pose(_rotation_from_header(pose44), pose44[:3, 3])
    return LidarFrame(PointCloud(records[:, :3], features), pose, timestamp_us, frame_index)


# ---------------------------------------------------------------------------
# JSON plumbing


def _dump_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON: {exc}") from exc


def _check_keys(obj, required: set, optional: set, path: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(path, f"expected an object, got {type(obj).__name__}")
    missing = required - obj.keys()
    if missing:
        raise SchemaError(path, f"missing key {sorted(missing)[0]!r}")
    extra = obj.keys() - required - optional
    if extra:
        raise SchemaError(path, f"unexpected key {sorted(extra)[0]!r}")


def _number(obj, key: str, path: str) -> float:
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{path}.{key}", "expected a number")
    return float(value)


def _integer(obj, key: str, path: str) -> int:
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{path}.{key}", "expected an integer")
    return value


def _number_list(value, path: str) -> list[float]:
    if not isinstance(value, list):
        raise SchemaError(path, "expected an array of numbers")
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{path}[{i}]", "expected a number")
        out.append(float(v))
    return out


# ---------------------------------------------------------------------------
# Detections / ground truth

_DET_KEYS = {"cx", "cy", "cz", "l", "w", "h", "yaw", "score", "vx", "vy", "n_points", "class"}


def _detection_to_dict(det: DetectedBox) -> dict:
    return {
        "cx": float(det.box.center[0]),
        "cy": float(det.box.center[1]),
        "cz": float(det.box.center[2]),
        "l": det.box.length,
        "w": det.box.width,
        "h": det.box.height,
        "yaw": det.box.yaw,
        "score": det.score,
        "vx": float(det.velocity[0]),
        "vy": float(det.velocity[1]),
        "n_points": det.point_count,
        "class": int(det.class_id),
    }


def _detection_from_dict(obj, path: str) -> DetectedBox:
    _check_keys(obj, _DET_KEYS, set(), path)
    for key in ("l", "w", "h"):
        if _number(obj, key, path) <= 0.0:
            raise SchemaError(f"{path}.{key}", f"must be > 0, got {obj[key]}")
    score = _number(obj, "score", path)
    if not 0.0 <= score <= 1.0:
        raise SchemaError(f"{path}.score", f"must be in [0, 1], got {score}")
    n_points = _integer(obj, "n_points", path)
    if n_points < 0:
        raise SchemaError(f"{path}.n_points", f"must be >= 0, got {n_points}")
    box = OrientedBox(
        np.array([obj["cx"], obj["cy"], obj["cz"]], dtype=np.float64),
        obj["l"], obj["w"], obj["h"], _number(obj, "yaw", path),
    )
    velocity = np.array([_number(obj, "vx", path), _number(obj, "vy", path)])
    return DetectedBox(box, score, velocity, n_points, _integer(obj, "class", path))


def write_detections(frames: list[list[DetectedBox]], path) -> None:
    """Write per-frame detection (or ground-truth) arrays."""
    _dump_json([[_detection_to_dict(d) for d in frame] for frame in frames], path)


def read_detections(path) -> list[list[DetectedBox]]:
    doc = _load_json(path)
    name = Path(path).stem
    if not isinstance(doc, list):
        raise SchemaError(name, "expected an array of per-frame arrays")
    frames = []
    for t, frame in enumerate(doc):
        if not isinstance(frame, list):
            raise SchemaError(f"{name}[{t}]", "expected an array of detections")
        frames.append(
            [_detection_from_dict(d, f"{name}[{t}][{i}]") for i, d in enumerate(frame)]
        )
    return frames


# ---------------------------------------------------------------------------
# Lookup table and bin edges


def write_eta_table(table: EtaTable, path) -> None:
    _dump_json(
        {
            "speed_edges": table.speed_edges.tolist(),
            "density_edges": table.density_edges.tolist(),
            "frames": table.frames.tolist(),
            "n_min": table.n_min,
            "n_max": table.n_max,
        },
        path,
    )


def read_eta_table(path) -> EtaTable:
    doc = _load_json(path)
    name = Path(path).stem
    _check_keys(doc, {"speed_edges", "density_edges", "frames", "n_min", "n_max"}, set(), name)
    frames = doc["frames"]
    if not isinstance(frames, list) or not all(isinstance(row, list) for row in frames):
        raise SchemaError(f"{name}.frames", "expected a 2-D integer array")
    try:
        return EtaTable(
            np.array(_number_list(doc["speed_edges"], f"{name}.speed_edges")),
            np.array(_number_list(doc["density_edges"], f"{name}.density_edges")),
            np.array(frames, dtype=np.int64),
            _integer(doc, "n_min", name),
            _integer(doc, "n_max", name),
        )
    except ValueError as exc:
        raise SchemaError(name, str(exc)) from exc


_TYPO_NOTE = (
    "speed edge index 5 is 8.16; the published threshold list has 81.6 there, "
    "which would break ascending order"
)


def write_bin_edges(edges: BinEdges, path) -> None:
    doc = {
        "speed_edges": edges.speed_edges.tolist(),
        "density_edges": edges.density_edges.tolist(),
    }
    if tuple(edges.speed_edges) == DEFAULT_SPEED_EDGES:
        doc["paper_typo_override"] = _TYPO_NOTE
    _dump_json(doc, path)


def read_bin_edges(path) -> BinEdges:
    doc = _load_json(path)
    name = Path(path).stem
    _check_keys(doc, {"speed_edges", "density_edges"}, {"paper_typo_override"}, name)
    try:
        return BinEdges(
            np.array(_number_list(doc["speed_edges"], f"{name}.speed_edges")),
            np.array(_number_list(doc["density_edges"], f"{name}.density_edges")),
        )
    except ValueError as exc:
        raise SchemaError(name, str(exc)) from exc


# ---------------------------------------------------------------------------
# Noise model


def _curve_to_dict(curve: StepCurve) -> dict:
    return {"edges": curve.edges.tolist(), "values": curve.values.tolist()}


def _curve_from_dict(obj, path: str) -> StepCurve:
    _check_keys(obj, {"edges", "values"}, set(), path)
    try:
        return StepCurve(
            np.array(_number_list(obj["edges"], f"{path}.edges")),
            np.array(_number_list(obj["values"], f"{path}.values")),
        )
    except ValueError as exc:
        raise SchemaError(path, str(exc)) from exc


def write_noise_model(noise: NoiseModel, path) -> None:
    doc = {
        "center_sigma": noise.center_sigma,
        "dim_sigma": noise.dim_sigma,
        "yaw_sigma": noise.yaw_sigma,
        "vel_sigma": noise.vel_sigma,
        "detection_curve": _curve_to_dict(noise.detection_curve),
        "score_curve": _curve_to_dict(noise.score_curve),
        "smudge": noise.smudge,
    }
    if noise.planted_optima is not None:
        doc["planted_optima"] = [
            [i, j, n] for (i, j), n in sorted(noise.planted_optima.items())
        ]
        doc["planted_penalty"] = noise.planted_penalty
    _dump_json(doc, path)


def read_noise_model(path) -> NoiseModel:
    doc = _load_json(path)
    name = Path(path).stem
    required = {"center_sigma", "dim_sigma", "yaw_sigma", "vel_sigma",
                "detection_curve", "score_curve"}
    optional = {"smudge", "planted_optima", "planted_penalty"}
    _check_keys(doc, required, optional, name)
    planted = None
    if "planted_optima" in doc:
        entries = doc["planted_optima"]
        if not isinstance(entries, list):
            raise SchemaError(f"{name}.planted_optima", "expected an array of [i, j, n]")
        planted = {}
        for k, entry in enumerate(entries):
            if (
                not isinstance(entry, list)
                or len(entry) != 3
                or any(isinstance(v, bool) or not isinstance(v, int) for v in entry)
            ):
                raise SchemaError(
                    f"{name}.planted_optima[{k}]", "expected three integers [i, j, n]"
                )
            planted[(entry[0], entry[1])] = entry[2]
    try:
        return NoiseModel(
            _number(doc, "center_sigma", name),
            _number(doc, "dim_sigma", name),
            _number(doc, "yaw_sigma", name),
            _number(doc, "vel_sigma", name),
            _curve_from_dict(doc["detection_curve"], f"{name}.detection_curve"),
            _curve_from_dict(doc["score_curve"], f"{name}.score_curve"),
            planted,
            doc.get("planted_penalty", 0.25),
            bool(doc.get("smudge", True)),
        )
    except ValueError as exc:
        raise SchemaError(name, str(exc)) from exc


# ---------------------------------------------------------------------------
# Scenario


def write_scenario(spec: ScenarioSpec, path) -> None:
    doc = {
        "duration": spec.duration,
        "frame_rate": spec.frame_rate,
        "ego": {
            "kind": spec.ego.kind,
            "speed": spec.ego.speed,
            "heading": spec.ego.heading,
            "yaw_rate": spec.ego.yaw_rate,
            "start": list(spec.ego.start),
        },
        "objects": [
            {
                "box": {
                    "cx": float(obj.box.center[0]), "cy": float(obj.box.center[1]),
                    "cz": float(obj.box.center[2]), "l": obj.box.length,
                    "w": obj.box.width, "h": obj.box.height, "yaw": obj.box.yaw,
                },
                "velocity": obj.velocity.tolist(),
                "budget": {
                    "count": obj.budget.count,
                    "kind": obj.budget.kind,
                    "reference_range": obj.budget.reference_range,
                },
                "class": int(obj.class_id),
            }
            for obj in spec.objects
        ],
        "noise_sigma": spec.noise_sigma,
        "seed": spec.seed,
        "background": None
        if spec.background is None
        else {
            "points_per_frame": spec.background.points_per_frame,
            "radius": spec.background.radius,
            "z_range": list(spec.background.z_range),
        },
    }
    _dump_json(doc, path)


def read_scenario(path) -> ScenarioSpec:
    doc = _load_json(path)
    name = Path(path).stem
    _check_keys(
        doc,
        {"duration", "frame_rate", "ego", "objects", "noise_sigma", "seed"},
        {"background"},
        name,
    )
    ego_doc = doc["ego"]
    _check_keys(ego_doc, {"kind"}, {"speed", "heading", "yaw_rate", "start"}, f"{name}.ego")
    start = ego_doc.get("start", [0.0, 0.0, 0.0])
    start_list = _number_list(start, f"{name}.ego.start")
    if len(start_list) != 3:
        raise SchemaError(f"{name}.ego.start", "expected three numbers")
    try:
        ego = EgoMotion(
            ego_doc["kind"],
            float(ego_doc.get("speed", 0.0)),
            float(ego_doc.get("heading", 0.0)),
            float(ego_doc.get("yaw_rate", 0.0)),
            tuple(start_list),
        )
    except ValueError as exc:
        raise SchemaError(f"{name}.ego", str(exc)) from exc
    if not isinstance(doc["objects"], list):
        raise SchemaError(f"{name}.objects", "expected an array")
    objects = []
    for i, obj_doc in enumerate(doc["objects"]):
        opath = f"{name}.objects[{i}]"
        _check_keys(obj_doc, {"box", "velocity", "budget"}, {"class"}, opath)
        box_doc = obj_doc["box"]
        _check_keys(box_doc, {"cx", "cy", "cz", "l", "w", "h", "yaw"}, set(), f"{opath}.box")
        budget_doc = obj_doc["budget"]
        _check_keys(budget_doc, {"count"}, {"kind", "reference_range"}, f"{opath}.budget")
        velocity = _number_list(obj_doc["velocity"], f"{opath}.velocity")
        if len(velocity) != 2:
            raise SchemaError(f"{opath}.velocity", "expected two numbers [vx, vy]")
        try:
            objects.append(
                ObjectSpec(
                    OrientedBox(
                        np.array([box_doc["cx"], box_doc["cy"], box_doc["cz"]],
                                 dtype=np.float64),
                        box_doc["l"], box_doc["w"], box_doc["h"], box_doc["yaw"],
                    ),
                    np.array(velocity),
                    PointBudget(
                        _integer(budget_doc, "count", f"{opath}.budget"),
                        budget_doc.get("kind", "constant"),
                        float(budget_doc.get("reference_range", 10.0)),
                    ),
                    int(obj_doc.get("class", 1)),
                )
            )
        except ValueError as exc:
            raise SchemaError(opath, str(exc)) from exc
    background = None
    if doc.get("background") is not None:
        bg_doc = doc["background"]
        _check_keys(bg_doc, {"points_per_frame"}, {"radius", "z_range"}, f"{name}.background")
        z_range = _number_list(bg_doc.get("z_range", [-0.5, 3.0]), f"{name}.background.z_range")
        if len(z_range) != 2:
            raise SchemaError(f"{name}.background.z_range", "expected two numbers")
        try:
            background = BackgroundSpec(
                _integer(bg_doc, "points_per_frame", f"{name}.background"),
                float(bg_doc.get("radius", 75.0)),
                (z_range[0], z_range[1]),
            )
        except ValueError as exc:
            raise SchemaError(f"{name}.background", str(exc)) from exc
    try:
        return ScenarioSpec(
            _integer(doc, "duration", name),
            _number(doc, "frame_rate", name),
            ego,
            tuple(objects),
            _number(doc, "noise_sigma", name),
            _integer(doc, "seed", name),
            background,
        )
    except ValueError as exc:
        raise SchemaError(name, str(exc)) from exc


# ---------------------------------------------------------------------------
# Sweep results


def write_sweep_result(sweep: SweepResult, path) -> None:
    ap = [
        [
            [None if math.isnan(v) else v for v in cell]
            for cell in plane
        ]
        for plane in sweep.ap.tolist()
    ]
    _dump_json(
        {
            "speed_edges": sweep.edges.speed_edges.tolist(),
            "density_edges": sweep.edges.density_edges.tolist(),
            "frame_counts": sweep.frame_counts.tolist(),
            "ap": ap,
            "sample_counts": sweep.sample_counts.tolist(),
        },
        path,
    )


def read_sweep_result(path) -> SweepResult:
    doc = _load_json(path)
    name = Path(path).stem
    _check_keys(
        doc,
        {"speed_edges", "density_edges", "frame_counts", "ap", "sample_counts"},
        set(),
        name,
    )
    try:
        edges = BinEdges(
            np.array(_number_list(doc["speed_edges"], f"{name}.speed_edges")),
            np.array(_number_list(doc["density_edges"], f"{name}.density_edges")),
        )
        ap = np.array(
            [[[np.nan if v is None else v for v in cell] for cell in plane]
             for plane in doc["ap"]],
            dtype=np.float64,
        )
        return SweepResult(
            edges,
            np.array(doc["frame_counts"], dtype=np.int64),
            ap,
            np.array(doc["sample_counts"], dtype=np.int64),
        )
    except (ValueError, TypeError) as exc:
        raise SchemaError(name, str(exc)) from exc


# ---------------------------------------------------------------------------
# Sequences on disk


class SequenceManifest:
    """Index of one sequence directory: frame files in order, plus metadata."""

    def __init__(self, sequence_id: str, frame_rate_hz: float, frame_files: list[str]):
        if not frame_files:
            raise ValueError("a sequence needs at least one frame file")
        if not frame_rate_hz > 0.0:
            raise ValueError("frame_rate_hz must be positive")
        self.sequence_id = sequence_id
        self.frame_rate_hz = float(frame_rate_hz)
        self.frame_files = list(frame_files)


def write_sequence(
    frames: list[LidarFrame], out_dir, sequence_id: str, frame_rate_hz: float
) -> SequenceManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for frame in frames:
        fname = f"frame_{frame.frame_index:06d}.vagf"
        write_frame(frame, out_dir / fname)
        names.append(fname)
    manifest = SequenceManifest(sequence_id, frame_rate_hz, names)
    _dump_json(
        {
            "sequence_id": manifest.sequence_id,
            "frame_rate_hz": manifest.frame_rate_hz,
            "frame_files": manifest.frame_files,
        },
        out_dir / "manifest.json",
    )
    return manifest


def read_sequence(seq_dir) -> tuple[SequenceManifest, list[LidarFrame]]:
    seq_dir = Path(seq_dir)
    doc = _load_json(seq_dir / "manifest.json")
    name = "manifest"
    _check_keys(doc, {"sequence_id", "frame_rate_hz", "frame_files"}, set(), name)
    files = doc["frame_files"]
    if not isinstance(files, list) or not all(isinstance(f, str) for f in files):
        raise SchemaError(f"{name}.frame_files", "expected an array of file names")
    if not files:
        raise SchemaError(f"{name}.frame_files", "must not be empty")
    rate = _number(doc, "frame_rate_hz", name)
    if rate <= 0.0:
        raise SchemaError(f"{name}.frame_rate_hz", f"must be > 0, got {rate}")
    manifest = SequenceManifest(str(doc["sequence_id"]), rate, files)
    frames = [read_frame(seq_dir / f) for f in files]
    return manifest, frames


# ---------------------------------------------------------------------------
# CSV reports


def _fmt(value) -> str:
    return "" if value is None else repr(value)


def write_breakdown_csv(rows: list[BreakdownRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["kind", "category", "n_gt", "ap_corrected", "ap_waymo",
             "precision_corrected", "precision_waymo", "recall"]
        )
        for r in rows:
            writer.writerow(
                [r.kind, r.category, r.n_gt, _fmt(r.ap_corrected), _fmt(r.ap_waymo),
                 _fmt(r.precision_corrected), _fmt(r.precision_waymo), _fmt(r.recall)]
            )


def write_sweep_csv(sweep: SweepResult, path) -> None:
    """One row per (speed bin, density bin, frame count): AP-vs-frames data."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["speed_bin", "density_bin", "speed_edge", "density_edge",
             "frame_count", "ap", "n_objects"]
        )
        n_speed, n_density = sweep.edges.shape
        for i in range(n_speed):
            for j in range(n_density):
                for k, n in enumerate(sweep.frame_counts):
                    ap = sweep.ap[i, j, k]
                    writer.writerow(
                        [i, j, sweep.edges.speed_edges[i], sweep.edges.density_edges[j],
                         int(n), "" if math.isnan(ap) else repr(float(ap)),
                         int(sweep.sample_counts[i, j])]
                    )
