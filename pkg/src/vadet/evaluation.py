"""Detection matching, average precision and subset-aware metrics.

Subset evaluation (say, only the fast vehicles) needs a rule for false
positives that overlap nothing at all: charging every such detection to
every subset biases small subsets, so next to the conventional
formulation this module provides a corrected precision that weights
those detections by the subset's population share. Per-frame results
merge through order-insensitive count reductions and a globally
score-ranked outcome list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import DetectedBox, iou_3d

__all__ = [
    "Matching",
    "SubsetCounts",
    "BreakdownRow",
    "SPEED_CATEGORIES",
    "DENSITY_CATEGORIES",
    "match_detections",
    "average_precision",
    "subset_average_precision",
    "classify_subset_outcomes",
    "subset_precision_waymo",
    "subset_precision_corrected",
    "subset_recall",
    "breakdown_report",
]

SubsetPredicate = Callable[[DetectedBox], bool]

# Speed (m/s) and density (pts/m^2) slices used by breakdown reports.
SPEED_CATEGORIES: dict[str, tuple[float, float]] = {
    "stationary": (0.0, 0.2),
    "slow": (0.2, 10.0),
    "fast": (10.0, math.inf),
}
DENSITY_CATEGORIES: dict[str, tuple[float, float]] = {
    "sparse": (0.0, 2.0),
    "medium": (2.0, 100.0),
    "dense": (100.0, math.inf),
}


@dataclass(frozen=True)
class Matching:
    """Outcome of greedy matching within one frame.

    ``pairs`` holds (detection index, ground-truth index, IoU) for true
    positives. ``unmatched_detections`` holds (detection index, index of
    the maximum-IoU ground truth or -1, that IoU) so false positives can
    later be attributed to a subset. Every detection appears exactly once
    across the two lists; every ground truth is matched at most once.
    """

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_detections: tuple[tuple[int, int, float], ...]
    unmatched_ground_truths: tuple[int, ...]


def match_detections(
    dets: Sequence[DetectedBox],
    gts: Sequence[DetectedBox],
    iou_threshold: float = 0.7,
) -> Matching:
    """Greedily match detections to ground truths in descending score order.

    Each detection takes the still-unmatched ground truth of highest IoU,
    provided that IoU reaches the threshold. Ties (equal scores, equal
    IoUs) break toward the lower index, making the result deterministic.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    iou = np.zeros((len(dets), len(gts)))
    if dets and gts:
        # Boxes whose bounding spheres do not touch cannot overlap; skip
        # the polygon clipping for those pairs.
        det_centers = np.array([d.box.center for d in dets])
        gt_centers = np.array([g.box.center for g in gts])
        det_radii = np.array(
            [0.5 * math.hypot(d.box.length, d.box.width, d.box.height) for d in dets]
        )
        gt_radii = np.array(
            [0.5 * math.hypot(g.box.length, g.box.width, g.box.height) for g in gts]
        )
        gaps = np.linalg.norm(
            det_centers[:, None, :] - gt_centers[None, :, :], axis=2
        )
        near = gaps <= det_radii[:, None] + gt_radii[None, :]
        for i, j in zip(*np.nonzero(near)):
            iou[i, j] = iou_3d(dets[i].box, gts[j].box)
    taken = np.zeros(len(gts), dtype=bool)
    pairs = []
    unmatched = []
    for i in order:
        best_j, best_iou = -1, 0.0
        for j in range(len(gts)):
            if taken[j]:
                continue
            if iou[i, j] > best_iou:
                best_j, best_iou = j, iou[i, j]
        if best_j >= 0 and best_iou >= iou_threshold:
            taken[best_j] = True
            pairs.append((i, best_j, float(best_iou)))
        else:
            overlap_j, overlap = -1, 0.0
            for j in range(len(gts)):
                if iou[i, j] > overlap:
                    overlap_j, overlap = j, iou[i, j]
            unmatched.append((i, overlap_j, float(overlap)))
    leftover = tuple(j for j in range(len(gts)) if not taken[j])
    return Matching(tuple(pairs), tuple(unmatched), leftover)


def average_precision(ranked_tp, n_ground_truths: int) -> float | None:
    """Area under the non-increasing precision envelope over recall.

    ``ranked_tp`` flags each detection, already sorted by descending
    score, as true positive. All-point interpolation: every precision
    value is replaced by the maximum achieved at that recall or beyond.
    With no ground truths the metric is undefined and None is returned.
    """
    if n_ground_truths <= 0:
        return None
    flags = np.asarray(ranked_tp, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(envelope[flags].sum() / n_ground_truths)


# Outcome codes in the merged ranked list.
_TP, _FP_OVERLAP, _FP_UNKNOWN = 0, 1, 2


@dataclass(frozen=True)
class _RankedOutcomes:
    """All detections of a corpus, score-ranked, with their match outcome."""

    kind: np.ndarray     # (D,) outcome code
    gt_ref: np.ndarray   # (D,) global ground-truth index, -1 for unknown FPs
    n_gts: int


def _collect_outcomes(
    dets_frames: Sequence[Sequence[DetectedBox]],
    gts_frames: Sequence[Sequence[DetectedBox]],
    iou_threshold: float,
) -> tuple[_RankedOutcomes, list[DetectedBox]]:
    if len(dets_frames) != len(gts_frames):
        raise ValueError(
            f"got {len(dets_frames)} detection frames but {len(gts_frames)} "
            "ground-truth frames"
        )
    rows = []  # (score, frame, det index, kind, gt_ref)
    all_gts: list[DetectedBox] = []
    for f, (dets, gts) in enumerate(zip(dets_frames, gts_frames)):
        offset = len(all_gts)
        all_gts.extend(gts)
        matching = match_detections(dets, gts, iou_threshold)
        for i, j, _ in matching.pairs:
            rows.append((dets[i].score, f, i, _TP, offset + j))
        for i, j, overlap in matching.unmatched_detections:
            if overlap > 0.0:
                rows.append((dets[i].score, f, i, _FP_OVERLAP, offset + j))
            else:
                rows.append((dets[i].score, f, i, _FP_UNKNOWN, -1))
    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    kind = np.array([r[3] for r in rows], dtype=np.int8)
    gt_ref = np.array([r[4] for r in rows], dtype=np.int64)
    return _RankedOutcomes(kind, gt_ref, len(all_gts)), all_gts


def _ap_for_mask(
    outcomes: _RankedOutcomes, gt_mask: np.ndarray, formulation: str
) -> float | None:
    """Subset AP from a merged outcome list and a ground-truth membership mask."""
    n_subset = int(gt_mask.sum())
    if n_subset == 0:
        return None
    if formulation == "corrected":
        weight = n_subset / outcomes.n_gts
    elif formulation == "waymo":
        weight = 1.0
    else:
        raise ValueError(f"unknown formulation {formulation!r}")
    in_subset = np.zeros(outcomes.kind.size, dtype=bool)
    referenced = outcomes.gt_ref >= 0
    in_subset[referenced] = gt_mask[outcomes.gt_ref[referenced]]
    is_tp = (outcomes.kind == _TP) & in_subset
    is_fp_overlap = (outcomes.kind == _FP_OVERLAP) & in_subset
    is_fp_unknown = outcomes.kind == _FP_UNKNOWN
    relevant = is_tp | is_fp_overlap | is_fp_unknown
    if not relevant.any():
        return 0.0
    tp = np.cumsum(is_tp[relevant])
    fp_overlap = np.cumsum(is_fp_overlap[relevant])
    fp_unknown = np.cumsum(is_fp_unknown[relevant])
    precision = tp / (tp + fp_overlap + weight * fp_unknown)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(envelope[is_tp[relevant]].sum() / n_subset)


def subset_average_precision(
    dets_frames: Sequence[Sequence[DetectedBox]],
    gts_frames: Sequence[Sequence[DetectedBox]],
    subset: SubsetPredicate | None = None,
    *,
    iou_threshold: float = 0.7,
    formulation: str = "corrected",
) -> float | None:
    """AP of a ground-truth subset across a corpus of frames.

    With ``subset=None`` the whole population is evaluated, in which case
    both formulations coincide with plain AP.
    """
    outcomes, all_gts = _collect_outcomes(dets_frames, gts_frames, iou_threshold)
    if subset is None:
        mask = np.ones(len(all_gts), dtype=bool)
    else:
        mask = np.array([bool(subset(g)) for g in all_gts])
    return _ap_for_mask(outcomes, mask, formulation)


@dataclass(frozen=True)
class SubsetCounts:
    """Match-outcome tallies for one ground-truth subset."""

    tp_subset: int
    fp_subset: int
    fn_subset: int
    fp_unknown: int
    n_subset: int
    n_total: int

    def __post_init__(self):
        for name in ("tp_subset", "fp_subset", "fn_subset", "fp_unknown",
                     "n_subset", "n_total"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_subset > self.n_total:
            raise ValueError(
                f"n_subset ({self.n_subset}) exceeds n_total ({self.n_total})"
            )

    def __add__(self, other: "SubsetCounts") -> "SubsetCounts":
        return SubsetCounts(
            self.tp_subset + other.tp_subset,
            self.fp_subset + other.fp_subset,
            self.fn_subset + other.fn_subset,
            self.fp_unknown + other.fp_unknown,
            self.n_subset + other.n_subset,
            self.n_total + other.n_total,
        )


def classify_subset_outcomes(
    matching: Matching,
    subset: SubsetPredicate,
    dets: Sequence[DetectedBox],
    gts: Sequence[DetectedBox],
) -> SubsetCounts:
    """Tally one frame's outcomes against a ground-truth subset.

    An unmatched detection that overlaps any ground truth is charged to
    the subset of its maximum-IoU ground truth; one that overlaps nothing
    is an unknown false positive, counted identically for every subset.
    """
    member = [bool(subset(g)) for g in gts]
    tp = sum(1 for _, j, _ in matching.pairs if member[j])
    fn = sum(1 for j in matching.unmatched_ground_truths if member[j])
    fp_subset = 0
    fp_unknown = 0
    for _, j, overlap in matching.unmatched_detections:
        if overlap > 0.0:
            if member[j]:
                fp_subset += 1
        else:
            fp_unknown += 1
    return SubsetCounts(tp, fp_subset, fn, fp_unknown, sum(member), len(gts))


def subset_precision_waymo(counts: SubsetCounts) -> float | None:
    """tp / (tp + fp_subset + fp_unknown); None when undefined."""
    denom = counts.tp_subset + counts.fp_subset + counts.fp_unknown
    if denom == 0:
        return None
    return counts.tp_subset / denom


def subset_precision_corrected(counts: SubsetCounts) -> float | None:
    """Precision with unknown false positives weighted by the subset share.

    Never smaller than the conventional formulation, and identical to it
    when the subset is the whole population or there are no unknown false
    positives.
    """
    if counts.n_total == 0:
        return None
    share = counts.n_subset / counts.n_total
    denom = counts.tp_subset + counts.fp_subset + share * counts.fp_unknown
    if denom == 0:
        return None
    return counts.tp_subset / denom


def subset_recall(counts: SubsetCounts) -> float | None:
    """tp / (tp + fn); None for an empty subset."""
    denom = counts.tp_subset + counts.fn_subset
    if denom == 0:
        return None
    return counts.tp_subset / denom


@dataclass(frozen=True)
class BreakdownRow:
    kind: str
    category: str
    n_gt: int
    ap_corrected: float | None
    ap_waymo: float | None
    precision_corrected: float | None
    precision_waymo: float | None
    recall: float | None


def _counts_for_mask(outcomes: _RankedOutcomes, gt_mask: np.ndarray) -> SubsetCounts:
    in_subset = np.zeros(outcomes.kind.size, dtype=bool)
    referenced = outcomes.gt_ref >= 0
    in_subset[referenced] = gt_mask[outcomes.gt_ref[referenced]]
    tp = int(((outcomes.kind == _TP) & in_subset).sum())
    fp_subset = int(((outcomes.kind == _FP_OVERLAP) & in_subset).sum())
    fp_unknown = int((outcomes.kind == _FP_UNKNOWN).sum())
    n_subset = int(gt_mask.sum())
    return SubsetCounts(
        tp, fp_subset, n_subset - tp, fp_unknown, n_subset, outcomes.n_gts
    )


def _category_masks(
    gts: list[DetectedBox], categories: dict[str, tuple[float, float]], value
) -> dict[str, np.ndarray]:
    values = np.array([value(g) for g in gts])
    return {
        name: (values >= lo) & (values < hi) for name, (lo, hi) in categories.items()
    }


def breakdown_report(
    dets_frames: Sequence[Sequence[DetectedBox]],
    gts_frames: Sequence[Sequence[DetectedBox]],
    *,
    iou_threshold: float = 0.7,
    kinds: Sequence[str] = ("speed", "density", "cross"),
    speed_categories: dict[str, tuple[float, float]] | None = None,
    density_categories: dict[str, tuple[float, float]] | None = None,
) -> list[BreakdownRow]:
    """Subset AP per speed/density category, with size-weighted averages.

    Ground truths carry their own speed and single-frame density, so each
    category is just a slice of the population; empty categories yield a
    row with absent metrics. Each requested kind closes with a
    ``weighted_average`` row averaging the category APs by subset size.
    """
    speed_categories = speed_categories or SPEED_CATEGORIES
    density_categories = density_categories or DENSITY_CATEGORIES
    outcomes, all_gts = _collect_outcomes(dets_frames, gts_frames, iou_threshold)

    masks: dict[str, dict[str, np.ndarray]] = {}
    speed_masks = _category_masks(all_gts, speed_categories, lambda g: g.speed)
    density_masks = _category_masks(all_gts, density_categories, lambda g: g.density)
    for kind in kinds:
        if kind == "speed":
            masks[kind] = speed_masks
        elif kind == "density":
            masks[kind] = density_masks
        elif kind == "cross":
            masks[kind] = {
                f"{sname}_{dname}": smask & dmask
                for sname, smask in speed_masks.items()
                for dname, dmask in density_masks.items()
            }
        else:
            raise ValueError(f"unknown breakdown kind {kind!r}")

    def build_row(kind: str, category: str, mask: np.ndarray) -> BreakdownRow:
        counts = _counts_for_mask(outcomes, mask)
        return BreakdownRow(
            kind,
            category,
            counts.n_subset,
            _ap_for_mask(outcomes, mask, "corrected"),
            _ap_for_mask(outcomes, mask, "waymo"),
            subset_precision_corrected(counts),
            subset_precision_waymo(counts),
            subset_recall(counts),
        )

    rows = [build_row("overall", "all", np.ones(len(all_gts), dtype=bool))]
    for kind, kind_masks in masks.items():
        kind_rows = [build_row(kind, name, mask) for name, mask in kind_masks.items()]
        rows.extend(kind_rows)
        rows.append(_weighted_average_row(kind, kind_rows))
    return rows


def _weighted_average_row(kind: str, rows: list[BreakdownRow]) -> BreakdownRow:
    populated = [r for r in rows if r.n_gt > 0 and r.ap_corrected is not None]
    total = sum(r.n_gt for r in populated)
    if total == 0:
        return BreakdownRow(kind, "weighted_average", 0, None, None, None, None, None)
    corrected = sum(r.n_gt * r.ap_corrected for r in populated) / total
    waymo = sum(r.n_gt * r.ap_waymo for r in populated) / total
    return BreakdownRow(
        kind, "weighted_average", total, corrected, waymo, None, None, None
    )
