"""Half-open, lower-inclusive bin lookup shared by the lookup table and sweeps."""

from __future__ import annotations

import numpy as np

__all__ = ["bin_index", "validate_edges"]


def validate_edges(edges, name: str = "edges") -> np.ndarray:
    """Check a bin-edge list: strictly ascending, starting at 0."""
    arr = np.asarray(edges, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D sequence")
    if arr[0] != 0.0:
        raise ValueError(f"{name} must start at 0, got {arr[0]}")
    if not np.all(np.diff(arr) > 0.0):
        raise ValueError(f"{name} must be strictly ascending: {arr.tolist()}")
    return arr


def bin_index(edges: np.ndarray, value: float) -> int:
    """Index of the bin [edges[i], edges[i+1]) containing ``value``.

    A value equal to an edge falls into the higher bin; the top bin is
    unbounded above. Negative values are a domain error.
    """
    if value < 0.0:
        raise ValueError(f"value must be >= 0, got {value}")
    idx = int(np.searchsorted(edges, value, side="right")) - 1
    return min(idx, len(edges) - 1)
