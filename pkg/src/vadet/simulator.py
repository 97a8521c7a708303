"""Synthetic LiDAR sequences and a controllable mock detector.

The simulator is deliberately simple: boxes translating at constant
velocity, surface-sampled points with optional Gaussian sensor noise, no
occlusion or ray casting. That keeps every quantity exactly accountable
(point budgets, in-box counts, kinematic extents), which is what the
aggregation and sweep machinery needs from a verification substrate.

The mock detector perturbs ground truth instead of running a model, so
its error statistics are fully controlled and seedable. For frame-count
sweeps it can either respond mechanistically to aggregation (detection
probability driven by the aggregated point count, localization degraded
by the motion trail) or carry planted per-bin optima for calibration
tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .binning import bin_index, validate_edges
from .errors import VadetError
from .eta import BinEdges, bin_object
from .geometry import (
    NUM_FEATURES,
    DetectedBox,
    ObjectClass,
    OrientedBox,
    PointCloud,
    Pose,
    normalize_yaw,
    points_in_box,
)
from .frames import LidarFrame

__all__ = [
    "StepCurve",
    "PointBudget",
    "EgoMotion",
    "ObjectSpec",
    "BackgroundSpec",
    "ScenarioSpec",
    "NoiseModel",
    "SimulatedSequence",
    "sample_object_surface",
    "simulate_sequence",
    "mock_detect",
    "make_aggregation_detector",
]


@dataclass(frozen=True, eq=False)
class StepCurve:
    """Piecewise-constant map from a non-negative input to [0, 1]."""

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        edges = validate_edges(self.edges, "curve edges")
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != edges.shape:
            raise ValueError(
                f"curve needs one value per edge, got {values.size} for {edges.size}"
            )
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("curve values must lie in [0, 1]")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "values", values)

    @staticmethod
    def constant(value: float) -> "StepCurve":
        return StepCurve(np.zeros(1), np.array([value]))

    def value(self, x: float) -> float:
        return float(self.values[bin_index(self.edges, x)])


@dataclass(frozen=True)
class PointBudget:
    """Per-frame point count for one object.

    ``constant`` always yields ``count``; ``inverse_square`` yields
    ``count`` at ``reference_range`` meters and falls off with the squared
    range, rounded to the nearest integer.
    """

    count: int
    kind: str = "constant"
    reference_range: float = 10.0

    def __post_init__(self):
        if self.kind not in ("constant", "inverse_square"):
            raise ValueError(f"unknown budget kind {self.kind!r}")
        if self.count < 0:
            raise ValueError(f"budget count must be >= 0, got {self.count}")
        if not self.reference_range > 0.0:
            raise ValueError("reference_range must be positive")

    def count_at(self, range_to_sensor: float) -> int:
        if self.kind == "constant":
            return self.count
        r = max(range_to_sensor, 0.1)
        return int(round(self.count * (self.reference_range / r) ** 2))


@dataclass(frozen=True)
class EgoMotion:
    """Parametric ego trajectory: hold still, drive straight, or arc."""

    kind: str = "static"
    speed: float = 0.0
    heading: float = 0.0
    yaw_rate: float = 0.0
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("static", "straight", "arc"):
            raise ValueError(f"unknown ego motion kind {self.kind!r}")
        if self.kind == "arc" and self.yaw_rate == 0.0:
            raise ValueError("arc motion requires a non-zero yaw_rate")

    def pose_at(self, frame_index: int, frame_rate: float) -> Pose:
        t = frame_index / frame_rate
        x0, y0, z0 = self.start
        if self.kind == "static":
            return Pose.from_yaw(self.heading, (x0, y0, z0))
        if self.kind == "straight":
            x = x0 + self.speed * t * math.cos(self.heading)
            y = y0 + self.speed * t * math.sin(self.heading)
            return Pose.from_yaw(self.heading, (x, y, z0))
        h = self.heading + self.yaw_rate * t
        radius = self.speed / self.yaw_rate
        x = x0 + radius * (math.sin(h) - math.sin(self.heading))
        y = y0 - radius * (math.cos(h) - math.cos(self.heading))
        return Pose.from_yaw(h, (x, y, z0))


@dataclass(frozen=True, eq=False)
class ObjectSpec:
    """One simulated object: its box at frame 0 (world frame) and velocity."""

    box: OrientedBox
    velocity: np.ndarray
    budget: PointBudget
    class_id: int = ObjectClass.VEHICLE

    def __post_init__(self):
        vel = np.array(self.velocity, dtype=np.float64).reshape(2)
        vel.flags.writeable = False
        object.__setattr__(self, "velocity", vel)


@dataclass(frozen=True)
class BackgroundSpec:
    """Static world clutter scattered uniformly in a disc around the origin."""

    points_per_frame: int
    radius: float = 75.0
    z_range: tuple[float, float] = (-0.5, 3.0)

    def __post_init__(self):
        if self.points_per_frame < 0:
            raise ValueError("points_per_frame must be >= 0")
        if not self.radius > 0.0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    duration: int
    frame_rate: float = 10.0
    ego: EgoMotion = field(default_factory=EgoMotion)
    objects: tuple[ObjectSpec, ...] = ()
    noise_sigma: float = 0.0
    seed: int = 0
    background: BackgroundSpec | None = None

    def __post_init__(self):
        if self.duration < 1:
            raise ValueError(f"duration must be >= 1, got {self.duration}")
        if self.noise_sigma < 0.0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if not self.frame_rate > 0.0:
            raise ValueError("frame_rate must be positive")
        object.__setattr__(self, "objects", tuple(self.objects))


@dataclass(frozen=True, eq=False)
class SimulatedSequence:
    """Frames, per-frame ground truth, and each point's source object.

    ``point_object_ids[t][k]`` is the index of the object that emitted
    point k of frame t, or -1 for background clutter.
    """

    frames: list[LidarFrame]
    ground_truth: list[list[DetectedBox]]
    point_object_ids: list[np.ndarray]

    @property
    def frame_rate(self) -> float:
        if len(self.frames) >= 2:
            dt_us = self.frames[1].timestamp_us - self.frames[0].timestamp_us
            return 1e6 / dt_us
        return 10.0


# Face order: top, +x, -x, +y, -y (bottom face never sampled; a roughly
# top-mounted sensor rarely sees it, and skipping it is cosmetic anyway).
def _face_areas(box: OrientedBox) -> np.ndarray:
    lw = box.length * box.width
    wh = box.width * box.height
    lh = box.length * box.height
    return np.array([lw, wh, wh, lh, lh])


def sample_object_surface(
    box: OrientedBox,
    range_to_sensor: float,
    budget: PointBudget,
    rng: np.random.Generator,
    *,
    noise_sigma: float = 0.0,
) -> PointCloud:
    """Sample points uniformly over the box's five upward/side faces.

    The count comes from the budget model evaluated at the sensor range;
    with zero noise every point lies exactly on the surface.
    """
    if not range_to_sensor > 0.0:
        raise ValueError("range_to_sensor must be positive")
    n = budget.count_at(range_to_sensor)
    hl, hw, hh = 0.5 * box.length, 0.5 * box.width, 0.5 * box.height
    areas = _face_areas(box)
    face_counts = rng.multinomial(n, areas / areas.sum())
    local = np.empty((n, 3))
    row = 0
    for face, count in enumerate(face_counts):
        if count == 0:
            continue
        u = rng.uniform(-1.0, 1.0, size=(count, 2))
        block = local[row : row + count]
        if face == 0:  # top
            block[:, 0] = u[:, 0] * hl
            block[:, 1] = u[:, 1] * hw
            block[:, 2] = hh
        elif face in (1, 2):  # +x / -x ends
            block[:, 0] = hl if face == 1 else -hl
            block[:, 1] = u[:, 0] * hw
            block[:, 2] = u[:, 1] * hh
        else:  # +y / -y sides
            block[:, 0] = u[:, 0] * hl
            block[:, 1] = hw if face == 3 else -hw
            block[:, 2] = u[:, 1] * hh
        row += count
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world = np.empty_like(local)
    world[:, 0] = c * local[:, 0] - s * local[:, 1] + box.center[0]
    world[:, 1] = s * local[:, 0] + c * local[:, 1] + box.center[1]
    world[:, 2] = local[:, 2] + box.center[2]
    if noise_sigma > 0.0:
        world = world + rng.normal(0.0, noise_sigma, size=world.shape)
    features = np.zeros((n, NUM_FEATURES))
    features[:, 0] = rng.uniform(0.0, 1.0, size=n)   # intensity
    features[:, 1] = rng.uniform(0.0, 0.3, size=n)   # elongation
    return PointCloud(world, features)


def _object_box_at(spec: ObjectSpec, t: float) -> OrientedBox:
    center = spec.box.center + np.array(
        [spec.velocity[0] * t, spec.velocity[1] * t, 0.0]
    )
    return OrientedBox(center, spec.box.length, spec.box.width, spec.box.height, spec.box.yaw)


def simulate_sequence(spec: ScenarioSpec) -> SimulatedSequence:
    """Generate frames and exact ground truth for a scenario.

    Objects advance one velocity step per frame; ego poses follow the
    trajectory exactly; ground truth carries true (ego-frame) velocity and
    the actual in-box point count of each frame. Identical spec and seed
    give bit-identical output, and each frame draws from its own seed
    substream.
    """
    root = np.random.SeedSequence(spec.seed)
    substreams = root.spawn(spec.duration + 1)
    world_rng = np.random.default_rng(substreams[0])

    if spec.background is not None and spec.background.points_per_frame > 0:
        bg = spec.background
        angle = world_rng.uniform(0.0, 2.0 * math.pi, bg.points_per_frame)
        radius = bg.radius * np.sqrt(world_rng.uniform(0.0, 1.0, bg.points_per_frame))
        bg_world = np.column_stack(
            [
                radius * np.cos(angle),
                radius * np.sin(angle),
                world_rng.uniform(bg.z_range[0], bg.z_range[1], bg.points_per_frame),
            ]
        )
        bg_features = np.zeros((bg.points_per_frame, NUM_FEATURES))
        bg_features[:, 0] = world_rng.uniform(0.0, 1.0, bg.points_per_frame)
        bg_features[:, 1] = world_rng.uniform(0.0, 0.3, bg.points_per_frame)
    else:
        bg_world = np.empty((0, 3))
        bg_features = np.empty((0, NUM_FEATURES))

    frames: list[LidarFrame] = []
    ground_truth: list[list[DetectedBox]] = []
    point_ids: list[np.ndarray] = []
    for tau in range(spec.duration):
        rng = np.random.default_rng(substreams[tau + 1])
        t = tau / spec.frame_rate
        pose = spec.ego.pose_at(tau, spec.frame_rate)
        inverse = pose.invert()
        ego_yaw = pose.yaw

        clouds = []
        ids = []
        world_boxes = []
        for k, obj in enumerate(spec.objects):
            box = _object_box_at(obj, t)
            world_boxes.append(box)
            rng_range = float(np.linalg.norm(box.center - pose.translation))
            cloud = sample_object_surface(
                box, max(rng_range, 0.1), obj.budget, rng, noise_sigma=spec.noise_sigma
            )
            clouds.append(cloud)
            ids.append(np.full(len(cloud), k, dtype=np.int64))
        if bg_world.shape[0]:
            measured = bg_world
            if spec.noise_sigma > 0.0:
                measured = bg_world + rng.normal(0.0, spec.noise_sigma, bg_world.shape)
            clouds.append(PointCloud(measured, bg_features))
            ids.append(np.full(bg_world.shape[0], -1, dtype=np.int64))

        world_cloud = PointCloud.concatenate(clouds)
        ego_cloud = PointCloud(inverse.apply(world_cloud.positions), world_cloud.features)
        frames.append(
            LidarFrame(ego_cloud, pose, int(round(t * 1e6)), tau)
        )
        point_ids.append(np.concatenate(ids) if ids else np.empty(0, dtype=np.int64))

        gts = []
        cos_e, sin_e = math.cos(-ego_yaw), math.sin(-ego_yaw)
        for k, obj in enumerate(spec.objects):
            box = world_boxes[k]
            ego_center = inverse.apply(box.center)
            ego_box = OrientedBox(
                ego_center, box.length, box.width, box.height,
                normalize_yaw(box.yaw - ego_yaw),
            )
            ego_vel = np.array(
                [
                    cos_e * obj.velocity[0] - sin_e * obj.velocity[1],
                    sin_e * obj.velocity[0] + cos_e * obj.velocity[1],
                ]
            )
            count = points_in_box(world_cloud.positions, box).size
            gts.append(DetectedBox(ego_box, 1.0, ego_vel, count, obj.class_id))
        ground_truth.append(gts)
    return SimulatedSequence(frames, ground_truth, point_ids)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Error statistics of the mock detector.

    ``detection_curve`` maps an in-box point count to the probability of
    producing a detection at all; ``score_curve`` maps single-frame point
    density to the confidence score. ``planted_optima`` switches the
    aggregation-aware detector into a calibration mode where localization
    error grows deterministically with the distance from each bin's
    planted frame count; otherwise ``smudge`` makes it fit the apparent
    (motion-stretched) box of the aggregated cloud.
    """

    center_sigma: float = 0.0
    dim_sigma: float = 0.0
    yaw_sigma: float = 0.0
    vel_sigma: float = 0.0
    detection_curve: StepCurve = field(default_factory=lambda: StepCurve.constant(1.0))
    score_curve: StepCurve = field(default_factory=lambda: StepCurve.constant(0.5))
    planted_optima: dict[tuple[int, int], int] | None = None
    planted_penalty: float = 0.25
    smudge: bool = True

    def __post_init__(self):
        for name in ("center_sigma", "dim_sigma", "yaw_sigma", "vel_sigma"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.planted_penalty:
            raise ValueError("planted_penalty must be positive")


_MIN_DIM = 0.05


def _perturb_detection(
    base_box: OrientedBox,
    keep_prob: float,
    score: float,
    velocity: np.ndarray,
    point_count: int,
    class_id: int,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> DetectedBox | None:
    if rng.uniform() >= keep_prob:
        return None
    # Localization error is planar, like everything else in the pipeline
    # (2-D velocity, yaw-only boxes); z comes through exact.
    center = base_box.center + np.concatenate(
        [rng.normal(0.0, noise.center_sigma, 2), [0.0]]
    )
    dims = np.maximum(
        np.array([base_box.length, base_box.width, base_box.height])
        + rng.normal(0.0, noise.dim_sigma, 3),
        _MIN_DIM,
    )
    yaw = base_box.yaw + rng.normal(0.0, noise.yaw_sigma)
    vel = velocity + rng.normal(0.0, noise.vel_sigma, 2)
    box = OrientedBox(center, dims[0], dims[1], dims[2], yaw)
    return DetectedBox(box, score, vel, point_count, class_id)


def mock_detect(
    gts: list[DetectedBox], noise: NoiseModel, rng: np.random.Generator
) -> list[DetectedBox]:
    """Perturbed copies of ground truth, independently kept or dropped.

    Keep probability follows the detection curve at the object's in-box
    point count; kept boxes get Gaussian-perturbed geometry and velocity
    and a density-derived score.
    """
    detections = []
    for gt in gts:
        det = _perturb_detection(
            gt.box,
            noise.detection_curve.value(gt.point_count),
            noise.score_curve.value(gt.density),
            gt.velocity,
            gt.point_count,
            gt.class_id,
            noise,
            rng,
        )
        if det is not None:
            detections.append(det)
    return detections


def _planted_box(
    gt: DetectedBox, n: int, n_opt: int, penalty: float
) -> OrientedBox:
    # Displace along the heading, far enough that only the planted count
    # survives the matching threshold, but never so far that the detection
    # stops overlapping its own object (it must stay attributable).
    shift = min(penalty * abs(n - n_opt), 0.8) * gt.box.length
    direction = np.array([math.cos(gt.box.yaw), math.sin(gt.box.yaw), 0.0])
    return OrientedBox(
        gt.box.center + shift * direction,
        gt.box.length, gt.box.width, gt.box.height, gt.box.yaw,
    )


def _smudge_box(gt: DetectedBox, n_eff: int, frame_rate: float) -> OrientedBox:
    # The box a naive fit sees after n_eff-frame aggregation: stretched by
    # the trail length and recentered halfway back along the motion.
    trail = gt.speed * (n_eff - 1) / frame_rate
    center = gt.box.center - np.array(
        [
            0.5 * gt.velocity[0] * (n_eff - 1) / frame_rate,
            0.5 * gt.velocity[1] * (n_eff - 1) / frame_rate,
            0.0,
        ]
    )
    return OrientedBox(
        center, gt.box.length + trail, gt.box.width, gt.box.height, gt.box.yaw
    )


def make_aggregation_detector(
    corpus: list[list[list[DetectedBox]]],
    noise: NoiseModel,
    edges: BinEdges,
    frame_rate: float = 10.0,
    seed: int = 0,
):
    """Detection source for frame-count sweeps over simulated ground truth.

    ``corpus[s][t]`` lists sequence s's objects at frame t in a stable
    order (as produced by ``simulate_sequence``). For a requested depth n,
    detection probability responds to the point count summed over the
    n newest available frames, and the detected geometry is either the
    motion-stretched apparent box (default) or the planted-optimum
    displacement when the noise model carries one.
    """
    for s, seq in enumerate(corpus):
        sizes = {len(frame) for frame in seq}
        if len(sizes) > 1:
            raise VadetError(
                f"sequence {s} has a varying object count; the sweep detector "
                "requires a stable object order across frames"
            )

    def detector(s: int, n: int) -> list[list[DetectedBox]]:
        seq = corpus[s]
        result = []
        for tau, gts in enumerate(seq):
            rng = np.random.default_rng(np.random.SeedSequence((seed, s, n, tau)))
            n_eff = min(n, tau + 1)
            detections = []
            for o, gt in enumerate(gts):
                aggregated = sum(seq[tau - i][o].point_count for i in range(n_eff))
                if noise.planted_optima is not None:
                    bin_ij = bin_object(gt.speed, gt.density, edges)
                    n_opt = noise.planted_optima.get(bin_ij)
                    base = (
                        _planted_box(gt, n, n_opt, noise.planted_penalty)
                        if n_opt is not None
                        else gt.box
                    )
                elif noise.smudge:
                    base = _smudge_box(gt, n_eff, frame_rate)
                else:
                    base = gt.box
                det = _perturb_detection(
                    base,
                    noise.detection_curve.value(aggregated),
                    noise.score_curve.value(gt.density),
                    gt.velocity,
                    gt.point_count,
                    gt.class_id,
                    noise,
                    rng,
                )
                if det is not None:
                    detections.append(det)
            result.append(detections)
        return result

    return detector
