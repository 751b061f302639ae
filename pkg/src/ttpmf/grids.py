"""Axis-aligned equidistant grids and moment-driven grid design.

A grid is the Cartesian product of per-axis coordinate arrays; only those
arrays are stored, never the full point set, so a grid in d dimensions with
N points per axis costs O(d * N) memory while describing N^d nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
import itertools
import math

import numpy as np

__all__ = [
    "Grid",
    "MomentEstimate",
    "design_grid",
    "box_corners",
]

_EQUIDISTANCE_RTOL = 1e-12


@dataclass(frozen=True)
class MomentEstimate:
    """Mean vector and covariance matrix of a density."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean size {mean.size}")
        if not np.allclose(cov, cov.T, rtol=1e-8, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class Grid:
    """Cartesian product of equidistant, strictly increasing axes."""

    axes: tuple[np.ndarray, ...]

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float).reshape(-1).copy() for a in self.axes)
        if not axes:
            raise ValueError("a grid needs at least one axis")
        for k, a in enumerate(axes):
            if a.size < 2:
                raise ValueError(f"axis {k} needs at least 2 points")
            diffs = np.diff(a)
            if np.any(diffs <= 0):
                raise ValueError(f"axis {k} must be strictly increasing")
            span = a[-1] - a[0]
            scale = max(span, float(np.max(np.abs(a))))
            step = span / (a.size - 1)
            if np.max(np.abs(diffs - step)) > _EQUIDISTANCE_RTOL * scale:
                raise ValueError(f"axis {k} is not equidistant")
            a.setflags(write=False)
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_bounds(cls, lows, highs, n_per_axis) -> "Grid":
        lows = np.atleast_1d(np.asarray(lows, dtype=float))
        highs = np.atleast_1d(np.asarray(highs, dtype=float))
        counts = _resolve_counts(n_per_axis, lows.size)
        if np.any(highs <= lows):
            raise ValueError("each upper bound must exceed its lower bound")
        axes = []
        for lo, hi, n in zip(lows, highs, counts):
            step = (hi - lo) / (n - 1)
            axes.append(lo + step * np.arange(n))
        return cls(tuple(axes))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def steps(self) -> np.ndarray:
        return np.array([(a[-1] - a[0]) / (a.size - 1) for a in self.axes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.steps))

    @property
    def lows(self) -> np.ndarray:
        return np.array([a[0] for a in self.axes])

    @property
    def highs(self) -> np.ndarray:
        return np.array([a[-1] for a in self.axes])

    @property
    def total_points(self) -> int:
        return math.prod(self.shape)

    def point(self, idx) -> np.ndarray:
        """Coordinates of one node."""
        idx = tuple(int(i) for i in idx)
        if len(idx) != self.dim:
            raise IndexError(f"index of length {len(idx)} for a {self.dim}-d grid")
        return np.array([a[i] for a, i in zip(self.axes, idx)])

    def points_for(self, idx: np.ndarray) -> np.ndarray:
        """Coordinates for an ``(K, d)`` integer index array, vectorised."""
        idx = np.asarray(idx, dtype=np.intp)
        return np.column_stack([a[idx[:, k]] for k, a in enumerate(self.axes)])

    def all_points(self) -> np.ndarray:
        """All nodes as ``(total, d)``, enumerated to match a C-order reshape
        of dense weight arrays of this grid's shape."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def corners(self) -> np.ndarray:
        """The 2^d hull corners."""
        return box_corners(self.lows, self.highs)


def _resolve_counts(n_per_axis, dim: int) -> tuple[int, ...]:
    if np.isscalar(n_per_axis):
        counts = (int(n_per_axis),) * dim
    else:
        counts = tuple(int(n) for n in n_per_axis)
        if len(counts) != dim:
            raise ValueError(f"need {dim} axis counts, got {len(counts)}")
    if any(n < 2 for n in counts):
        raise ValueError("each axis needs at least 2 points")
    return counts


def design_grid(m: MomentEstimate, n_per_axis, sigma_mult: float = 4.0) -> Grid:
    """Axis-aligned grid centered on the mean, spanning +- sigma_mult stddevs.

    Axis l runs over ``mean_l +- sigma_mult * sqrt(cov_ll)`` with ``n`` odd
    points, so the center point sits exactly on the mean.
    """
    counts = _resolve_counts(n_per_axis, m.dim)
    if any(n % 2 == 0 for n in counts):
        raise ValueError(f"point counts must be odd, got {counts}")
    if sigma_mult <= 0:
        raise ValueError("sigma_mult must be positive")
    var = np.diag(m.cov)
    if np.any(var <= 0):
        raise ValueError("covariance diagonal must be positive to span a grid")
    axes = []
    for mu, v, n in zip(m.mean, var, counts):
        half = sigma_mult * math.sqrt(v)
        step = 2.0 * half / (n - 1)
        axes.append(mu + step * (np.arange(n) - (n - 1) // 2))
    return Grid(tuple(axes))


def box_corners(lows, highs) -> np.ndarray:
    """All 2^d corners of the axis-aligned box [lows, highs], as (2^d, d)."""
    lows = np.atleast_1d(np.asarray(lows, dtype=float))
    highs = np.atleast_1d(np.asarray(highs, dtype=float))
    pairs = [(lo, hi) for lo, hi in zip(lows, highs)]
    return np.array(list(itertools.product(*pairs)))
