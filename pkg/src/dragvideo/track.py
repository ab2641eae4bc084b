"""Temporally shared point tracking.

One scalar step ``dp`` is chosen per click from a discrete grid over
``[-l, l]`` by minimizing the L1 patch distance to the reference summed over
frames, set points and timesteps; every frame then moves by ``dp * d^i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import bilinear_sample_many, patch_offset_array


@dataclass(frozen=True)
class TrackConfig:
    max_range: float = 3.0
    step: float = 0.5
    patch_radius: int = 2

    def __post_init__(self):
        if self.max_range <= 0:
            raise ValueError("max_range must be > 0")
        if not 0 < self.step <= self.max_range:
            raise ValueError("step must lie in (0, max_range]")
        ratio = self.max_range / self.step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("max_range must be a multiple of step so 0 is a candidate")
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be >= 0")

    def candidates(self) -> np.ndarray:
        n = int(round(self.max_range / self.step))
        return np.arange(-n, n + 1, dtype=np.float64) * self.step


@dataclass
class TrackResult:
    delta: float
    handles: list[np.ndarray]            # per frame, (n, 2)
    objective: float
    steps: list[np.ndarray] = field(default_factory=list)   # per frame applied displacement
    capped: list[bool] = field(default_factory=list)
    done: bool = False


def _reference_for(reference, i: int) -> np.ndarray:
    if isinstance(reference, (list, tuple)):
        return reference[i]
    return reference


def track_objective(delta: float, handles: Sequence[np.ndarray], directions: Sequence,
                    references: Mapping, features: Mapping, radius: int) -> float:
    """Summed L1 patch distance for one candidate ``delta``.

    ``features[t]`` lists per-frame feature grids, ``references[t]`` is either
    one ``(n, P, C)`` array shared by all frames or a per-frame list.
    """
    offs = patch_offset_array(radius)
    total = 0.0
    for t, per_frame in features.items():
        for i, (pts, d) in enumerate(zip(handles, directions)):
            if d is None:
                continue
            moved = np.asarray(pts, dtype=np.float64) + delta * np.asarray(d)
            locs = (moved[:, None, :] + offs[None, :, :]).reshape(-1, 2)
            sampled = bilinear_sample_many(per_frame[i], locs)
            ref = _reference_for(references[t], i).reshape(sampled.shape)
            total += float(np.abs(sampled - ref).sum())
    return total


def track_step(handles: Sequence[np.ndarray], directions: Sequence, references: Mapping,
               features: Mapping, targets: Sequence, cfg: TrackConfig) -> TrackResult:
    """Pick the shared step and advance every frame's handle set.

    ``targets[i]`` is frame ``i``'s target and ``handles[i]`` the click's set,
    whose center point is the one measured against the target. A frame's move
    never passes its target. Exact ties go to the larger step.
    """
    handles = [np.asarray(h, dtype=np.float64).reshape(-1, 2) for h in handles]
    if all(d is None for d in directions):
        return TrackResult(0.0, [h.copy() for h in handles], 0.0,
                           [np.zeros(2) for _ in handles], [False] * len(handles), done=True)
    best_delta, best_obj = None, math.inf
    for delta in cfg.candidates():
        obj = track_objective(delta, handles, directions, references, features, cfg.patch_radius)
        if not math.isfinite(obj):
            raise FloatingPointError(f"non-finite tracking objective at step {delta}")
        if obj <= best_obj:
            best_delta, best_obj = float(delta), obj
    new_handles, steps, capped = [], [], []
    for pts, d, q in zip(handles, directions, targets):
        if d is None:
            new_handles.append(pts.copy())
            steps.append(np.zeros(2))
            capped.append(False)
            continue
        center = pts[len(pts) // 2]
        remaining = math.hypot(q[0] - center[0], q[1] - center[1])
        if best_delta >= remaining:
            step = np.asarray(q, dtype=np.float64) - center
            capped.append(best_delta > remaining)
        else:
            step = best_delta * np.asarray(d)
            capped.append(False)
        new_handles.append(pts + step)
        steps.append(step)
    return TrackResult(best_delta, new_handles, best_obj, steps, capped)
