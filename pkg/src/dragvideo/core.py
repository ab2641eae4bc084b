"""Shared grid/point types, bilinear sampling, patches and the seeded field.

Grids are plain ``float64`` numpy arrays of shape ``(H, W, C)``. Points use
``(x, y)`` order: ``x`` is the column axis, ``y`` the row axis, and the origin
sits at the center of the top-left cell.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

Grid2D = np.ndarray


class Point(NamedTuple):
    x: float
    y: float


class Label(str, enum.Enum):
    FOREGROUND = "foreground"
    BACKGROUND = "background"


@dataclass(frozen=True)
class PointSet:
    """Ordered points with optional per-point foreground/background tags.

    ``points`` is an ``(n, 2)`` array of ``(x, y)`` coordinates. ``labels`` is
    either empty (unlabeled) or has one entry per point.
    """

    points: np.ndarray
    labels: tuple[Label, ...] = field(default=())

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        labels = tuple(Label(lab) for lab in self.labels)
        if labels and len(labels) != len(pts):
            raise ValueError("labels length must match points length")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return (Point(float(x), float(y)) for x, y in self.points)

    @property
    def center(self) -> Point:
        """The middle point; for an expanded square set this is the user click."""
        x, y = self.points[len(self.points) // 2]
        return Point(float(x), float(y))

    def foreground_mask(self) -> np.ndarray:
        return np.array([lab is Label.FOREGROUND for lab in self.labels], dtype=bool)

    def with_labels(self, labels: Sequence[Label]) -> "PointSet":
        return PointSet(self.points, tuple(labels))


def as_grid(data) -> Grid2D:
    """Coerce to a finite float64 ``(H, W, C)`` array; 2-D input gets one channel."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.size == 0:
        raise ValueError(f"expected a non-empty (H, W, C) grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("grid contains non-finite values")
    return arr


def clamp_points(points, height: int, width: int) -> np.ndarray:
    pts = np.array(points, dtype=np.float64).reshape(-1, 2)
    pts[:, 0] = np.clip(pts[:, 0], 0.0, width - 1)
    pts[:, 1] = np.clip(pts[:, 1], 0.0, height - 1)
    return pts


def clamp_point(p, height: int, width: int) -> Point:
    x, y = clamp_points([p], height, width)[0]
    return Point(float(x), float(y))


def _bilinear_corners(h: int, w: int, pts: np.ndarray):
    x = np.clip(pts[:, 0], 0.0, w - 1)
    y = np.clip(pts[:, 1], 0.0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    # (row, col, weight) for the four neighbors
    return (
        (y0, x0, (1 - fx) * (1 - fy)),
        (y0, x1, fx * (1 - fy)),
        (y1, x0, (1 - fx) * fy),
        (y1, x1, fx * fy),
    )


def bilinear_sample_many(grid: Grid2D, points) -> np.ndarray:
    """Sample ``grid`` at many sub-pixel points; returns ``(n, C)``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("invalid coordinate")
    h, w = grid.shape[:2]
    out = np.zeros((len(pts), grid.shape[2]))
    for rows, cols, wt in _bilinear_corners(h, w, pts):
        out += wt[:, None] * grid[rows, cols]
    return out


def bilinear_sample(grid: Grid2D, p) -> np.ndarray:
    """Channel vector of ``grid`` at sub-pixel point ``p`` (border-clamped)."""
    return bilinear_sample_many(grid, [tuple(p)])[0]


def bilinear_scatter(shape, points, values) -> np.ndarray:
    """Adjoint of :func:`bilinear_sample_many`.

    Distributes per-point channel vectors ``values`` ``(n, C)`` back onto a grid
    of ``shape`` with the same weights sampling would use.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    vals = np.asarray(values, dtype=np.float64).reshape(len(pts), -1)
    h, w = shape[:2]
    out = np.zeros(shape)
    for rows, cols, wt in _bilinear_corners(h, w, pts):
        np.add.at(out, (rows, cols), wt[:, None] * vals)
    return out


def patch_offsets(radius: int) -> list[tuple[int, int]]:
    """All ``(dx, dy)`` in the ``(2r+1)`` square, row-major (dy outer)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    span = range(-radius, radius + 1)
    return [(dx, dy) for dy in span for dx in span]


def patch_offset_array(radius: int) -> np.ndarray:
    return np.array(patch_offsets(radius), dtype=np.float64).reshape(-1, 2)


# SplitMix64 constants
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, counters: np.ndarray) -> np.ndarray:
    """Counter-based SplitMix64: the output for counter ``n`` is the finalizer
    applied to ``seed + (n + 1) * golden`` (all arithmetic mod 2**64)."""
    ctr = np.asarray(counters, dtype=np.uint64)
    base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        z = base + (ctr + np.uint64(1)) * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
    return z


def uniform_from_bits(bits: np.ndarray) -> np.ndarray:
    """Top 53 bits mapped to [0, 1)."""
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def seeded_uniform(seed: int, n: int, stream: int = 0) -> np.ndarray:
    counters = np.arange(n, dtype=np.uint64) + np.uint64(stream) * np.uint64(1 << 40)
    return uniform_from_bits(splitmix64(seed, counters))


def seeded_normal(seed: int, n: int) -> np.ndarray:
    """``n`` standard normals; value ``k`` uses counters ``2k`` and ``2k+1``
    through Box-Muller (cosine branch only)."""
    counters = np.arange(2 * n, dtype=np.uint64)
    u = uniform_from_bits(splitmix64(seed, counters))
    u1 = 1.0 - u[0::2]  # (0, 1]
    u2 = u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def seeded_field(seed: int, h: int, w: int, c: int) -> Grid2D:
    """Deterministic standard-normal grid of shape ``(h, w, c)``."""
    if h <= 0 or w <= 0 or c <= 0:
        raise ValueError("h, w, c must be positive")
    return seeded_normal(seed, h * w * c).reshape(h, w, c)


def derive_seed(seed: int, *keys: int) -> int:
    """Mix integer keys into a child seed (stable across runs)."""
    s = seed & 0xFFFFFFFFFFFFFFFF
    for key in keys:
        s = int(splitmix64(s, np.array([key & 0xFFFFFFFF], dtype=np.uint64))[0])
    return s
