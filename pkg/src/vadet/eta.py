"""Construction of the speed x density frame-count lookup table.

The table is learned by brute force: evaluate a detector over a range of
fixed aggregation depths, slice the results into speed and density bins,
and keep the depth with the best AP per bin. Bins nobody populates fall
back to the background depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aggregation import EtaTable, VadetConfig
from .binning import bin_index, validate_edges
from .evaluation import _ap_for_mask, _collect_outcomes
from .geometry import DetectedBox

__all__ = [
    "DEFAULT_SPEED_EDGES",
    "DEFAULT_DENSITY_EDGES",
    "BinEdges",
    "SweepResult",
    "bin_object",
    "run_sweep",
    "build_eta_table",
]

# Default speed thresholds, m/s. The published threshold list contains
# 81.6 between 5.90 and 11.34, which breaks the ascending order; we ship
# 8.16 in that slot and let callers override the edges entirely.
DEFAULT_SPEED_EDGES = (0.00, 0.20, 1.55, 3.63, 5.90, 8.16, 11.34, 17.53)
# Default density thresholds, pts/m^2.
DEFAULT_DENSITY_EDGES = (0.00, 0.68, 1.86, 3.86, 8.02, 18.81, 71.37)


@dataclass(frozen=True, eq=False)
class BinEdges:
    """Speed and density bin edges for subcategory evaluation."""

    speed_edges: np.ndarray = field(
        default_factory=lambda: np.array(DEFAULT_SPEED_EDGES)
    )
    density_edges: np.ndarray = field(
        default_factory=lambda: np.array(DEFAULT_DENSITY_EDGES)
    )

    def __post_init__(self):
        object.__setattr__(
            self, "speed_edges", validate_edges(self.speed_edges, "speed_edges")
        )
        object.__setattr__(
            self, "density_edges", validate_edges(self.density_edges, "density_edges")
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.speed_edges.size, self.density_edges.size


def bin_object(speed: float, density: float, edges: BinEdges) -> tuple[int, int]:
    """(speed bin, density bin) of an object; lower-inclusive, unbounded top."""
    return bin_index(edges.speed_edges, speed), bin_index(edges.density_edges, density)


@dataclass(frozen=True, eq=False)
class SweepResult:
    """AP per (speed bin, density bin, frame count), plus bin populations.

    ``ap[i, j, k]`` is the subset AP of bin (i, j) under
    ``frame_counts[k]``-frame aggregation, NaN where the bin is empty.
    """

    edges: BinEdges
    frame_counts: np.ndarray
    ap: np.ndarray
    sample_counts: np.ndarray

    def __post_init__(self):
        frame_counts = np.asarray(self.frame_counts, dtype=np.int64)
        if frame_counts.ndim != 1 or not np.all(np.diff(frame_counts) > 0):
            raise ValueError("frame_counts must be strictly ascending")
        ap = np.asarray(self.ap, dtype=np.float64)
        counts = np.asarray(self.sample_counts, dtype=np.int64)
        expected = self.edges.shape + (frame_counts.size,)
        if ap.shape != expected:
            raise ValueError(f"ap grid must have shape {expected}, got {ap.shape}")
        if counts.shape != self.edges.shape:
            raise ValueError(
                f"sample_counts must have shape {self.edges.shape}, got {counts.shape}"
            )
        finite = ap[np.isfinite(ap)]
        if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
            raise ValueError("AP values must lie in [0, 1]")
        object.__setattr__(self, "frame_counts", frame_counts)
        object.__setattr__(self, "ap", ap)
        object.__setattr__(self, "sample_counts", counts)


# A corpus is a list of sequences, each a list of per-frame ground-truth lists.
GroundTruthSequence = Sequence[Sequence[DetectedBox]]
DetectionSource = Callable[[int, int], Sequence[Sequence[DetectedBox]]]


def run_sweep(
    corpus: Sequence[GroundTruthSequence],
    detector: DetectionSource,
    edges: BinEdges,
    frame_range: tuple[int, int],
    *,
    iou_threshold: float = 0.7,
    formulation: str = "corrected",
) -> SweepResult:
    """Evaluate ``detector`` at every aggregation depth, per object bin.

    ``detector(sequence_index, n_frames)`` must return detections aligned
    with the corpus' frames. Objects are binned by their ground-truth
    speed and single-frame density; each bin's AP is computed from the
    merged, score-ranked outcomes of the whole corpus.
    """
    lo, hi = frame_range
    if lo > hi or lo < 1:
        raise ValueError(f"invalid frame range [{lo}, {hi}]")
    frame_counts = np.arange(lo, hi + 1)
    n_speed, n_density = edges.shape

    flat_gts: list[list[DetectedBox]] = []
    for seq in corpus:
        flat_gts.extend(list(frame) for frame in seq)
    labels = np.array(
        [
            np.ravel_multi_index(bin_object(g.speed, g.density, edges), edges.shape)
            for frame in flat_gts
            for g in frame
        ],
        dtype=np.int64,
    )
    sample_counts = np.bincount(labels, minlength=n_speed * n_density).reshape(
        n_speed, n_density
    )

    ap = np.full((n_speed, n_density, frame_counts.size), np.nan)
    for k, n in enumerate(frame_counts):
        flat_dets: list[list[DetectedBox]] = []
        for s in range(len(corpus)):
            flat_dets.extend(list(frame) for frame in detector(s, int(n)))
        outcomes, _ = _collect_outcomes(flat_dets, flat_gts, iou_threshold)
        for i in range(n_speed):
            for j in range(n_density):
                if sample_counts[i, j] == 0:
                    continue
                mask = labels == i * n_density + j
                ap[i, j, k] = _ap_for_mask(outcomes, mask, formulation)
    return SweepResult(edges, frame_counts, ap, sample_counts)


def build_eta_table(sweep: SweepResult, cfg: VadetConfig) -> EtaTable:
    """Pick the best frame count per bin; ties go to the smaller count.

    Bins without samples take the background depth, the most conservative
    configuration everything is trained with anyway.
    """
    n_speed, n_density = sweep.edges.shape
    frames = np.full((n_speed, n_density), cfg.background_frames, dtype=np.int64)
    for i in range(n_speed):
        for j in range(n_density):
            row = sweep.ap[i, j]
            if sweep.sample_counts[i, j] == 0 or not np.isfinite(row).any():
                continue
            best = np.nanargmax(row)  # first maximum: ties -> fewer frames
            frames[i, j] = sweep.frame_counts[best]
    return EtaTable(
        sweep.edges.speed_edges,
        sweep.edges.density_edges,
        frames,
        cfg.n_min,
        cfg.n_max,
    )
