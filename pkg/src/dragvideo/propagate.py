"""Propagate frame-0 handle sets, targets and mask points to every frame.

Propagation is chained ``0 -> 1 -> ... -> N-1``. Foreground points follow the
correspondence oracle; each background point copies the motion of its nearest
foreground point in the same set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Grid2D, Label, Point, PointSet, clamp_point, clamp_points, patch_offset_array
from .synth import Correspondence, Segmenter


class PropagationError(RuntimeError):
    def __init__(self, frame: int, message: str):
        super().__init__(f"propagation failed at frame {frame}: {message}")
        self.frame = frame


@dataclass(frozen=True)
class PropagatedInputs:
    handles: list[list[PointSet]]   # [frame][click]
    targets: list[list[Point]]      # [frame][click]
    mask_points: list[PointSet]     # [frame]
    masks: list[Grid2D]             # [frame], (H, W, 1)

    @property
    def num_frames(self) -> int:
        return len(self.handles)


def expand_to_set(p, radius: int, height: int | None = None, width: int | None = None) -> PointSet:
    """Square ``(2r+1)^2`` set around ``p``; clamped when a frame size is given."""
    pts = np.asarray(tuple(p), dtype=np.float64) + patch_offset_array(radius)
    if height is not None and width is not None:
        pts = clamp_points(pts, height, width)
    return PointSet(pts)


def propagate_handles(point_set: PointSet, frame: int, seg: Segmenter, corr: Correspondence,
                      shape: tuple[int, int] | None = None) -> PointSet:
    """Map a set from ``frame`` to ``frame + 1``.

    The returned set carries the labels assigned in ``frame``. Ties for the
    nearest foreground point go to the lowest index.
    """
    if len(point_set) == 0:
        raise ValueError("cannot propagate an empty point set")
    pts = point_set.points
    labels = seg.labels(frame, pts)
    fg = np.array([lab is Label.FOREGROUND for lab in labels])
    if not fg.any():
        moved = np.asarray(corr.correspond(frame, pts), dtype=np.float64)
    else:
        fg_idx = np.flatnonzero(fg)
        fg_next = np.asarray(corr.correspond(frame, pts[fg_idx]), dtype=np.float64)
        motion = fg_next - pts[fg_idx]
        moved = np.empty_like(pts)
        moved[fg_idx] = fg_next
        for k in np.flatnonzero(~fg):
            d2 = np.sum((pts[fg_idx] - pts[k]) ** 2, axis=1)
            moved[k] = pts[k] + motion[int(np.argmin(d2))]
    if shape is not None:
        moved = clamp_points(moved, *shape)
    if not np.all(np.isfinite(moved)):
        raise PropagationError(frame, "non-finite coordinates")
    return PointSet(moved, tuple(labels))


def propagate_targets(q_i, p_i, p_next, shape: tuple[int, int] | None = None) -> Point:
    """``q' = q + p' - p``, clamped to the frame when ``shape`` is given."""
    q = np.asarray(tuple(q_i), dtype=np.float64)
    moved = q + np.asarray(tuple(p_next), dtype=np.float64) - np.asarray(tuple(p_i), dtype=np.float64)
    if shape is not None:
        return clamp_point(moved, *shape)
    return Point(float(moved[0]), float(moved[1]))


def rasterize_mask(points, patch_radius: int, height: int, width: int) -> Grid2D:
    """1 inside any square of half-width ``patch_radius`` around a point.

    A cell is covered when its center lies within the square, so a point on
    the cell grid covers exactly ``(2r+1)^2`` cells.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return np.ones((height, width, 1))
    mask = np.zeros((height, width), dtype=bool)
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    for x, y in pts:
        mask |= (np.abs(xs - x) <= patch_radius) & (np.abs(ys - y) <= patch_radius)
    return mask[:, :, None].astype(np.float64)


def _chain(first: PointSet, frames: int, seg, corr, shape) -> list[PointSet]:
    sets = [first]
    for i in range(frames - 1):
        try:
            nxt = propagate_handles(sets[-1], i, seg, corr, shape)
        except PropagationError:
            raise
        except Exception as exc:  # oracle failure
            raise PropagationError(i, str(exc)) from exc
        sets[-1] = sets[-1].with_labels(nxt.labels)
        sets.append(PointSet(nxt.points))
    last = frames - 1
    sets[-1] = sets[-1].with_labels(seg.labels(last, sets[-1].points))
    return sets


def propagate_masks(mask_points_0: PointSet | Sequence, patch_radius: int, seg: Segmenter,
                    corr: Correspondence, frames: int, shape: tuple[int, int]):
    """Per-frame mask points and rasterized masks.

    With no mask points every frame's mask is all ones.
    """
    h, w = shape
    pts0 = mask_points_0.points if isinstance(mask_points_0, PointSet) else \
        np.asarray(mask_points_0, dtype=np.float64).reshape(-1, 2)
    if len(pts0) == 0:
        empty = PointSet(np.zeros((0, 2)))
        return [empty] * frames, [np.ones((h, w, 1)) for _ in range(frames)]
    sets = _chain(PointSet(clamp_points(pts0, h, w)), frames, seg, corr, shape)
    return sets, [rasterize_mask(s.points, patch_radius, h, w) for s in sets]


def propagate_all(handles0, targets0, mask_points0, frames: int, shape: tuple[int, int],
                  seg: Segmenter, corr: Correspondence, handle_radius: int = 1,
                  mask_radius: int = 4) -> PropagatedInputs:
    """Propagate every click's handle set, its target and the mask points."""
    h, w = shape
    per_click = []
    for p in handles0:
        per_click.append(_chain(expand_to_set(p, handle_radius, h, w), frames, seg, corr, shape))
    targets_per_click = []
    for c, q in enumerate(targets0):
        qs = [clamp_point(q, h, w)]
        for i in range(frames - 1):
            qs.append(propagate_targets(qs[-1], per_click[c][i].center,
                                        per_click[c][i + 1].center, shape))
        targets_per_click.append(qs)
    mask_sets, masks = propagate_masks(mask_points0, mask_radius, seg, corr, frames, shape)
    handles = [[per_click[c][i] for c in range(len(per_click))] for i in range(frames)]
    targets = [[targets_per_click[c][i] for c in range(len(per_click))] for i in range(frames)]
    return PropagatedInputs(handles, targets, mask_sets, masks)
