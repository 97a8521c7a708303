"""Hot kernel: assign points to the first oriented box that contains them.

The region table packs, per row:
cx, cy, cz, half_l, half_w, half_h, cos_yaw, sin_yaw, xmin, xmax, ymin, ymax
with the last four being the footprint's axis-aligned bounds. Regions are
bucketed by their x-interval on a uniform grid so a point only tests the
regions whose x-span can contain it; within a bucket, indices stay in
ascending order, so the first hit is the lowest region id and the result
is identical to a full linear scan. Membership is boundary-inclusive,
matching ``geometry.points_in_box``.
"""

from __future__ import annotations

import math
import warnings

import numba
import numpy as np

from .geometry import OrientedBox

# Old TBB builds make numba emit a warning and fall back to OpenMP /
# workqueue, which is fine for this kernel; don't alarm callers.
warnings.filterwarnings(
    "ignore", message="The TBB threading layer requires TBB version"
)

REGION_ROW_WIDTH = 12
_CELLS_PER_REGION = 4


def pack_regions(boxes: list[OrientedBox]) -> np.ndarray:
    """Build the (R, 12) kernel parameter table from boxes, in list order."""
    table = np.empty((len(boxes), REGION_ROW_WIDTH), dtype=np.float64)
    for i, box in enumerate(boxes):
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        hl, hw, hh = 0.5 * box.length, 0.5 * box.width, 0.5 * box.height
        ex = hl * abs(c) + hw * abs(s)
        ey = hl * abs(s) + hw * abs(c)
        table[i] = (
            box.center[0], box.center[1], box.center[2],
            hl, hw, hh, c, s,
            box.center[0] - ex, box.center[0] + ex,
            box.center[1] - ey, box.center[1] + ey,
        )
    return table


def _build_x_buckets(regions: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, float]:
    """CSR buckets of region indices over a uniform x grid.

    Returns (offsets, entries, x0, inv_dx); cell c holds the regions whose
    x-interval intersects [x0 + c/inv_dx, x0 + (c+1)/inv_dx), in ascending
    region order.
    """
    n = regions.shape[0]
    x0 = float(regions[:, 8].min())
    x1 = float(regions[:, 9].max())
    n_cells = max(1, min(512, n * _CELLS_PER_REGION))
    span = max(x1 - x0, 1e-9)
    inv_dx = n_cells / span
    lo = np.clip(((regions[:, 8] - x0) * inv_dx).astype(np.int64), 0, n_cells - 1)
    hi = np.clip(((regions[:, 9] - x0) * inv_dx).astype(np.int64), 0, n_cells - 1)
    counts = np.zeros(n_cells + 1, dtype=np.int64)
    for r in range(n):
        counts[lo[r] : hi[r] + 1] += 1
    offsets = np.zeros(n_cells + 1, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    entries = np.empty(int(offsets[-1]), dtype=np.int64)
    cursor = offsets[:-1].copy()
    for r in range(n):  # ascending r keeps every bucket sorted by region id
        for c in range(lo[r], hi[r] + 1):
            entries[cursor[c]] = r
            cursor[c] += 1
    return offsets, entries, x0, inv_dx


@numba.njit(parallel=True, cache=True)
def _claim_kernel(points, regions, offsets, entries, x0, inv_dx, claimed):
    n = points.shape[0]
    n_cells = offsets.shape[0] - 1
    for k in numba.prange(n):
        x = points[k, 0]
        y = points[k, 1]
        z = points[k, 2]
        claimed[k] = -1
        c = int((x - x0) * inv_dx)
        if c < 0 or c >= n_cells:
            continue
        for e in range(offsets[c], offsets[c + 1]):
            j = entries[e]
            if x < regions[j, 8] or x > regions[j, 9]:
                continue
            dz = z - regions[j, 2]
            if dz < -regions[j, 5] or dz > regions[j, 5]:
                continue
            if y < regions[j, 10] or y > regions[j, 11]:
                continue
            dx = x - regions[j, 0]
            dy = y - regions[j, 1]
            cy = regions[j, 6]
            sy = regions[j, 7]
            bx = cy * dx + sy * dy
            if bx < -regions[j, 3] or bx > regions[j, 3]:
                continue
            by = -sy * dx + cy * dy
            if by < -regions[j, 4] or by > regions[j, 4]:
                continue
            claimed[k] = j
            break


def claim(points: np.ndarray, region_table: np.ndarray) -> np.ndarray:
    """Vector of first-containing-region indices (-1 where uncontained).

    Each point writes only its own slot, so the result is identical for
    any thread count.
    """
    claimed = np.empty(points.shape[0], dtype=np.int64)
    if region_table.shape[0] == 0 or points.shape[0] == 0:
        claimed.fill(-1)
        return claimed
    offsets, entries, x0, inv_dx = _build_x_buckets(region_table)
    _claim_kernel(
        np.ascontiguousarray(points), region_table, offsets, entries, x0, inv_dx, claimed
    )
    return claimed
