"""Variable multi-frame LiDAR aggregation, subset metrics, and a synthetic testbed."""

from .aggregation import (
    AggregationRegion,
    EtaTable,
    VadetConfig,
    aggregate_background,
    aggregate_objects,
    build_vadet_input,
    lookup_eta,
    predict_region,
)
from .errors import (
    FrameFormatError,
    InsufficientHistoryError,
    SchemaError,
    SequenceGapError,
    VadetError,
)
from .eta import (
    DEFAULT_DENSITY_EDGES,
    DEFAULT_SPEED_EDGES,
    BinEdges,
    SweepResult,
    bin_object,
    build_eta_table,
    run_sweep,
)
from .evaluation import (
    DENSITY_CATEGORIES,
    SPEED_CATEGORIES,
    BreakdownRow,
    Matching,
    SubsetCounts,
    average_precision,
    breakdown_report,
    classify_subset_outcomes,
    match_detections,
    subset_average_precision,
    subset_precision_corrected,
    subset_precision_waymo,
    subset_recall,
)
from .frames import FrameBuffer, LidarFrame, fixed_aggregate, sample_rat_count
from .geometry import (
    DetectedBox,
    ObjectClass,
    OrientedBox,
    PointCloud,
    Pose,
    bev_intersection_area,
    half_surface_area,
    iou_3d,
    point_density,
    points_in_box,
    relative_pose,
    transform_detection,
    transform_points,
)
from .simulator import (
    BackgroundSpec,
    EgoMotion,
    NoiseModel,
    ObjectSpec,
    PointBudget,
    ScenarioSpec,
    SimulatedSequence,
    StepCurve,
    make_aggregation_detector,
    mock_detect,
    sample_object_surface,
    simulate_sequence,
)

__version__ = "0.1.0"
