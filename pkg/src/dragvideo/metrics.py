"""Temporal smoothness of a video relative to its input, plus block-matching flow.

For every pixel of an interior frame the metric measures how far the pixel is
from the segment joining its correspondences in the previous and next frames.
Linear motion scores 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .core import Grid2D


@dataclass(frozen=True)
class FlowField:
    flow: np.ndarray                 # (H, W, 2): (dx, dy)
    valid: np.ndarray                # (H, W) bool


class FlowProvider(Protocol):
    def __call__(self, video: Sequence[Grid2D]) -> list[FlowField]: ...


def point_segment_distance(p, a, b) -> float:
    """Euclidean distance from ``p`` to the closed segment ``[a, b]``."""
    px, py = p
    ax, ay = a
    bx, by = b
    abx, aby = bx - ax, by - ay
    denom = abx * abx + aby * aby
    if denom == 0.0:
        return math.hypot(px - ax, py - ay)
    s = ((px - ax) * abx + (py - ay) * aby) / denom
    s = min(1.0, max(0.0, s))
    return math.hypot(px - (ax + s * abx), py - (ay + s * aby))


def segment_distances(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorized :func:`point_segment_distance` over ``(..., 2)`` arrays."""
    ab = b - a
    ap = p - a
    denom = np.sum(ab * ab, axis=-1)
    safe = np.where(denom > 0, denom, 1.0)
    s = np.clip(np.sum(ap * ab, axis=-1) / safe, 0.0, 1.0)
    s = np.where(denom > 0, s, 0.0)
    closest = a + s[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def _candidate_order(search: int) -> list[tuple[int, int]]:
    span = range(-search, search + 1)
    return sorted(((dx, dy) for dy in span for dx in span),
                  key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]))


def block_match_flow(a: Grid2D, b: Grid2D, window: int = 8, search: int = 4) -> FlowField:
    """Integer flow ``a -> b`` minimizing the windowed sum of absolute differences.

    Window pixels outside the frame are clamped to the border; displacements
    that leave the frame are not considered. Ties go to the smallest
    displacement, then to the lexicographically smallest ``(dx, dy)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if window <= 0 or search <= 0:
        raise ValueError("window and search must be positive")
    h, w = a.shape[:2]
    if h < window or w < window:
        raise ValueError(f"frames ({h}x{w}) are smaller than the window ({window})")
    ys, xs = np.mgrid[0:h, 0:w]
    best = np.full((h, w), np.inf)
    flow = np.zeros((h, w, 2))
    for dx, dy in _candidate_order(search):
        shifted = b[np.clip(ys + dy, 0, h - 1), np.clip(xs + dx, 0, w - 1)]
        diff = np.abs(a - shifted).sum(axis=2)
        cost = ndimage.uniform_filter(diff, size=window, mode="nearest") * (window * window)
        inside = (ys + dy >= 0) & (ys + dy < h) & (xs + dx >= 0) & (xs + dx < w)
        better = inside & (cost < best)
        best[better] = cost[better]
        flow[better] = (dx, dy)
    return FlowField(flow, np.isfinite(best))


@dataclass(frozen=True)
class BlockMatchFlow:
    window: int = 8
    search: int = 4

    def __call__(self, video: Sequence[Grid2D]) -> list[FlowField]:
        return [block_match_flow(video[i], video[i + 1], self.window, self.search)
                for i in range(len(video) - 1)]


@dataclass(frozen=True)
class GroundTruthFlow:
    """Returns fixed (usually analytic) flows whatever video it is given."""

    flows: Sequence[np.ndarray]

    def __call__(self, video: Sequence[Grid2D]) -> list[FlowField]:
        if len(video) - 1 != len(self.flows):
            raise ValueError("ground-truth flow count does not match the video")
        return [FlowField(np.asarray(f, dtype=np.float64),
                          np.ones(f.shape[:2], dtype=bool)) for f in self.flows]


def invert_flow(field_: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Source of each target pixel under a forward flow.

    For every pixel ``p`` of the later frame returns the earlier-frame pixel
    ``s`` whose landing ``s + flow(s)`` is nearest to ``p``. Exact ties prefer
    the larger displacement (a moving surface hides what it covers), then the
    lowest row-major index. Returns ``(sources (H, W, 2), source_valid (H, W))``.
    """
    h, w = field_.flow.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src = np.stack([xs.ravel(), ys.ravel()], axis=1)
    fl = field_.flow.reshape(-1, 2)
    ok = field_.valid.ravel()
    src_idx = np.flatnonzero(ok)
    landing = src[src_idx] + fl[src_idx]
    tree = cKDTree(landing)
    k = min(16, len(src_idx))
    dist, nn = tree.query(src, k=k)
    dist = dist.reshape(len(src), k)
    nn = nn.reshape(len(src), k)
    cand = src_idx[nn]
    mag = np.linalg.norm(fl[cand], axis=-1)
    rows = np.repeat(np.arange(len(src)), k)
    order = np.lexsort((cand.ravel(), -mag.ravel(), np.round(dist, 9).ravel(), rows))
    first = order[::k]
    chosen = cand.ravel()[first]
    return src[chosen].reshape(h, w, 2), np.ones((h, w), dtype=bool)


@dataclass
class SmoothnessResult:
    mean: float
    per_frame: list[float]
    kept_fraction: float
    raw_input_mean: float
    raw_edited_mean: float
    input_distances: list[np.ndarray] = field(default_factory=list, repr=False)
    edited_distances: list[np.ndarray] = field(default_factory=list, repr=False)
    kept: list[np.ndarray] = field(default_factory=list, repr=False)
    valid: list[np.ndarray] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "per_frame": list(self.per_frame),
            "kept_fraction": self.kept_fraction,
            "raw_input_mean": self.raw_input_mean,
            "raw_edited_mean": self.raw_edited_mean,
        }


def pixel_distances(flows: Sequence[FlowField], frame: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel segment distance for interior ``frame`` and its validity."""
    fwd = flows[frame]
    h, w = fwd.flow.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    p = np.stack([xs, ys], axis=2)
    nxt = p + fwd.flow
    prev, prev_ok = invert_flow(flows[frame - 1])
    inside = ((nxt[..., 0] >= 0) & (nxt[..., 0] <= w - 1)
              & (nxt[..., 1] >= 0) & (nxt[..., 1] <= h - 1))
    valid = inside & fwd.valid & prev_ok
    return segment_distances(p, prev, nxt), valid


def smoothness(input_video: Sequence[Grid2D], edited_video: Sequence[Grid2D],
               flow: FlowProvider | Callable, edited_flow: FlowProvider | Callable | None = None,
               apply_filter: bool = True) -> SmoothnessResult:
    """Filtered mean distance of the edited video.

    Pixels whose edited distance is below their input distance are dropped;
    equal distances are kept. ``edited_flow`` defaults to ``flow``.
    """
    n = len(input_video)
    if n < 3 or len(edited_video) < 3:
        raise ValueError("need three frames")
    if n != len(edited_video):
        raise ValueError("videos have different frame counts")
    if np.shape(input_video[0]) != np.shape(edited_video[0]):
        raise ValueError("videos have different frame sizes")
    in_flows = flow(input_video)
    ed_flows = (edited_flow or flow)(edited_video)

    d_in_all, d_ed_all, kept_all, valid_all, per_frame = [], [], [], [], []
    for i in range(1, n - 1):
        d_in, ok_in = pixel_distances(in_flows, i)
        d_ed, ok_ed = pixel_distances(ed_flows, i)
        valid = ok_in & ok_ed
        kept = valid & (d_ed >= d_in) if apply_filter else valid
        d_in_all.append(d_in)
        d_ed_all.append(d_ed)
        kept_all.append(kept)
        valid_all.append(valid)
        per_frame.append(float(d_ed[kept].mean()) if kept.any() else 0.0)

    kept_stack = np.stack(kept_all)
    valid_stack = np.stack(valid_all)
    ed = np.stack(d_ed_all)
    inp = np.stack(d_in_all)
    n_valid = int(valid_stack.sum())
    return SmoothnessResult(
        mean=float(ed[kept_stack].mean()) if kept_stack.any() else 0.0,
        per_frame=per_frame,
        kept_fraction=float(kept_stack.sum() / n_valid) if n_valid else 0.0,
        raw_input_mean=float(inp[valid_stack].mean()) if n_valid else 0.0,
        raw_edited_mean=float(ed[valid_stack].mean()) if n_valid else 0.0,
        input_distances=d_in_all,
        edited_distances=d_ed_all,
        kept=kept_all,
        valid=valid_all,
    )
