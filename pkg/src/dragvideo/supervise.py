"""Video-level motion supervision and the adaptive-moment offset update."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .backbone import FeatureExtractor, LatentStack, T_MAX
from .core import Grid2D, bilinear_sample_many, bilinear_scatter, patch_offset_array, patch_offsets

DEFAULT_TIMESTEPS = (42, 41, 35, 30)


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class SupervisionConfig:
    patch_radius: int = 1
    mask_weight: float = 0.1
    ema: float = 0.8
    learning_rate: float = 0.01
    timesteps: tuple[int, ...] = DEFAULT_TIMESTEPS
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be >= 0")
        if self.mask_weight < 0:
            raise ValueError("mask_weight must be >= 0")
        if not 0.0 <= self.ema < 1.0:
            raise ValueError("ema must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not self.timesteps or any(not 0 <= t < T_MAX for t in self.timesteps):
            raise ValueError(f"timesteps must be non-empty and within [0, {T_MAX})")
        if self.weight_decay != 0.0:
            raise ValueError("weight decay is not supported")


def inner_patch_index(outer: int, inner: int) -> np.ndarray:
    """Positions of the radius-``inner`` offsets inside the radius-``outer`` list."""
    pos = {off: k for k, off in enumerate(patch_offsets(outer))}
    return np.array([pos[off] for off in patch_offsets(inner)], dtype=np.intp)


def sample_patches(features: Grid2D, points, radius: int) -> np.ndarray:
    """``(n, P, C)`` bilinear samples at ``points[j] + delta`` for every patch offset."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    offs = patch_offset_array(radius)
    locs = (pts[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    return bilinear_sample_many(features, locs).reshape(len(pts), len(offs), -1)


def averaged_handle_feature(handles: Sequence, features: Sequence[Grid2D], radius: int) -> np.ndarray:
    """Frame-averaged handle patches ``(1/N) sum_i F_i(p^i + delta)``.

    ``handles[i]`` holds the ``(n, 2)`` handle points of frame ``i``.
    """
    if len(handles) == 0:
        raise ValueError("need at least one frame to average")
    if len(handles) != len(features):
        raise ValueError("one feature grid per frame is required")
    acc = None
    for pts, feat in zip(handles, features):
        patch = sample_patches(feat, pts, radius)
        acc = patch if acc is None else acc + patch
    return acc / len(handles)


@dataclass
class EmaFeatureBank:
    """Running reference patches keyed by ``(click, timestep)``.

    Reset semantics: the first update stores the frame average as-is.
    """

    ema: float
    reference: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    latest_average: dict = field(default_factory=dict)

    def update(self, key, averaged: np.ndarray) -> np.ndarray:
        self.latest_average[key] = averaged
        if key not in self.reference:
            self.reference[key] = averaged.copy()
            self.initial[key] = averaged.copy()
        else:
            self.reference[key] = self.ema * self.reference[key] + (1.0 - self.ema) * averaged
        return self.reference[key]


def drag_direction(p, q) -> np.ndarray | None:
    """Unit vector from ``p`` to ``q``; ``None`` when they coincide (converged)."""
    d = np.asarray(tuple(q), dtype=np.float64) - np.asarray(tuple(p), dtype=np.float64)
    norm = math.hypot(d[0], d[1])
    if norm == 0.0:
        return None
    return d / norm


def drag_loss(features: Grid2D, points, direction, reference: np.ndarray, radius: int):
    """L1 distance between patches at ``points + direction`` and a fixed reference.

    Returns ``(loss, cotangent)``; the cotangent is ``dL/dF`` on the feature
    grid. ``reference`` is treated as a constant. A ``None`` direction marks
    a converged point: loss 0 and zero cotangent.
    """
    if direction is None:
        return 0.0, np.zeros_like(features)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2) + np.asarray(direction)
    offs = patch_offset_array(radius)
    locs = (pts[:, None, :] + offs[None, :, :]).reshape(-1, 2)
    sampled = bilinear_sample_many(features, locs)
    diff = sampled - np.asarray(reference).reshape(sampled.shape)
    loss = float(np.abs(diff).sum())
    cot = bilinear_scatter(features.shape, locs, np.sign(diff))
    return loss, cot


def mask_loss(offsets: Mapping[int, Grid2D], mask: Grid2D):
    """``sum_t |o_t * (1 - M)|_1`` and its (sub)gradient per timestep."""
    outside = 1.0 - np.asarray(mask, dtype=np.float64)
    total = 0.0
    grads = {}
    for t, o in offsets.items():
        if o.shape[:2] != outside.shape[:2]:
            raise ValueError(f"offset shape {o.shape} does not match mask {outside.shape}")
        total += float(np.abs(o * outside).sum())
        grads[t] = np.sign(o) * outside
    return total, grads


@dataclass
class LossBreakdown:
    total: float
    drag: float
    mask: float
    grads: dict


def supervision_loss(stack: LatentStack, extractor: FeatureExtractor, handles, directions,
                     references: Mapping, masks: Sequence[Grid2D], cfg: SupervisionConfig,
                     features: Mapping | None = None, need_grads: bool = True) -> LossBreakdown:
    """Total ``sum_i sum_t [drag + beta * mask]`` and its gradient per offset.

    ``handles[i][c]`` are the ``(n, 2)`` points of click ``c`` in frame ``i``;
    ``directions[i][c]`` its unit direction or ``None``; ``references[c, t]``
    the ``(n, P, C)`` patch (radius ``cfg.patch_radius``) for click ``c``.
    With ``need_grads=False`` only the loss values are computed.
    """
    drag_total = 0.0
    mask_total = 0.0
    grads = {}
    for i in range(stack.num_frames):
        cot_by_t = {}
        for t in stack.timesteps:
            feat = features[i, t] if features is not None else extractor(stack.x(i, t), t)
            cot = np.zeros_like(feat)
            for c, pts in enumerate(handles[i]):
                loss, g = drag_loss(feat, pts, directions[i][c], references[c, t], cfg.patch_radius)
                drag_total += loss
                cot += g
            cot_by_t[t] = (feat, cot)
        m_loss, m_grads = mask_loss({t: stack.offsets[i, t] for t in stack.timesteps}, masks[i])
        mask_total += m_loss
        if not need_grads:
            continue
        for t, (feat, cot) in cot_by_t.items():
            g = extractor.adjoint_from_features(feat, t, cot) if cot.any() else np.zeros_like(stack.offsets[i, t])
            grads[i, t] = g + cfg.mask_weight * m_grads[t]
    total = drag_total + cfg.mask_weight * mask_total
    return LossBreakdown(total, drag_total, mask_total, grads)


def adam_step(stack: LatentStack, grads: Mapping, cfg: SupervisionConfig) -> LatentStack:
    """One bias-corrected adaptive-moment update of every offset, in place."""
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for frame {key[0]}, timestep {key[1]}")
    stack.steps += 1
    k = stack.steps
    bc1 = 1.0 - cfg.beta1 ** k
    bc2 = 1.0 - cfg.beta2 ** k
    for key in stack.keys():
        g = grads[key]
        m = stack.first_moment[key]
        v = stack.second_moment[key]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        stack.offsets[key] -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
    return stack
