"""Deterministic synthetic videos with exact motion, masks and point oracles.

Every scene is one textured object moving rigidly over a static textured
background. The object's pose in frame ``i`` is a center ``c_i`` and an angle
``theta_i``; pixels are rendered by mapping their centers into object-local
coordinates ``R(-theta_i) (x - c_i)``.

Forward flow from frame ``i`` to ``i+1`` is the object's exact motion on an
object support (the foreground mask dilated by two cells) and zero elsewhere.
The margin guarantees that bilinear sampling of the flow at any point that is
geometrically inside the object only touches cells carrying the object's
motion, so :class:`GroundTruthCorrespondence` is exact for affine motions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from .core import (
    Grid2D,
    Label,
    Point,
    bilinear_sample_many,
    clamp_points,
    derive_seed,
    seeded_field,
    seeded_uniform,
)

KINDS = ("translating_blob", "rotating_sprite", "thin_spire", "jittered_linear")
FLOW_SUPPORT_MARGIN = 2


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic scene.

    ``jitter`` is an amplitude in pixels applied perpendicular to ``velocity``
    on even frames (``jittered_linear`` only). ``object_size`` is the blob
    radius, the sprite's semi-major axis, or the spire's height.
    """

    kind: str = "translating_blob"
    frames: int = 4
    size: tuple[int, int] = (64, 64)
    velocity: tuple[float, float] = (2.0, 0.0)
    angular_rate: float = 0.0
    jitter: float = 0.0
    texture_seed: int = 0
    center: tuple[float, float] | None = None
    object_size: float | None = None
    spire_width: float = 1.5
    channels: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unsupported scene kind {self.kind!r}")
        if self.frames < 2:
            raise ValueError("a scene needs at least 2 frames")
        h, w = self.size
        if h < 16 or w < 16:
            raise ValueError("scene size must be at least 16x16")
        vals = (*self.velocity, self.angular_rate, self.jitter)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("motion parameters must be finite")

    @property
    def height(self) -> int:
        return self.size[0]

    @property
    def width(self) -> int:
        return self.size[1]

    def default_center(self) -> tuple[float, float]:
        if self.center is not None:
            return tuple(self.center)
        h, w = self.size
        if self.kind == "thin_spire":
            # band [c - w/2, c + w/2) starts on an integer column
            return (math.floor(w / 2) + self.spire_width / 2, h / 2)
        return ((w - 1) / 2, (h - 1) / 2)

    def default_size(self) -> float:
        if self.object_size is not None:
            return float(self.object_size)
        m = min(self.size)
        return {"translating_blob": m / 6.4, "jittered_linear": m / 6.4,
                "rotating_sprite": m / 3.2, "thin_spire": m / 2.5}[self.kind]

    def jitter_vector(self) -> np.ndarray:
        vx, vy = self.velocity
        norm = math.hypot(vx, vy)
        if norm == 0:
            return np.array([0.0, self.jitter])
        return self.jitter * np.array([-vy, vx]) / norm

    def pose(self, i: int) -> tuple[np.ndarray, float]:
        """Object center and rotation angle in frame ``i``."""
        c = np.array(self.default_center()) + i * np.array(self.velocity, dtype=np.float64)
        if self.kind == "jittered_linear" and i % 2 == 0:
            c = c + self.jitter_vector()
        return c, i * self.angular_rate


@dataclass(frozen=True)
class SceneTruth:
    spec: SceneSpec
    video: list[Grid2D]
    flow: list[Grid2D]          # flow[i]: frame i -> i+1, channels (dx, dy)
    fgmask: list[Grid2D]        # (H, W, 1) in {0, 1}
    support: list[np.ndarray] = field(repr=False)

    @property
    def num_frames(self) -> int:
        return len(self.video)


def _texture(seed: int, h: int, w: int, c: int, sigma: float, lo: float, hi: float) -> Grid2D:
    noise = seeded_field(seed, h, w, c)
    smooth = ndimage.gaussian_filter(noise, sigma=(sigma, sigma, 0), mode="nearest")
    smooth /= smooth.std() + 1e-12
    return lo + (hi - lo) * 0.5 * (1.0 + np.tanh(0.8 * smooth))


def _local_coords(spec: SceneSpec, i: int, xs: np.ndarray, ys: np.ndarray):
    c, theta = spec.pose(i)
    dx, dy = xs - c[0], ys - c[1]
    cos, sin = math.cos(theta), math.sin(theta)
    return cos * dx + sin * dy, -sin * dx + cos * dy


def _inside(spec: SceneSpec, lx: np.ndarray, ly: np.ndarray) -> np.ndarray:
    size = spec.default_size()
    if spec.kind in ("translating_blob", "jittered_linear"):
        return lx * lx + ly * ly <= size * size
    if spec.kind == "rotating_sprite":
        a, b = size, size / 2
        return (lx / a) ** 2 + (ly / b) ** 2 <= 1.0
    # thin_spire: a vertical band on top of a rectangular base
    half = spec.spire_width / 2
    spire = (lx >= -half) & (lx < half) & (ly >= -size / 2) & (ly < size / 4)
    base = (lx >= -size / 4) & (lx < size / 4) & (ly >= size / 4) & (ly < size / 2)
    return spire | base


def spire_band(spec: SceneSpec, i: int) -> tuple[float, float, float, float]:
    """``(x0, x1, y0, y1)`` extent of the spire (not its base) in frame ``i``."""
    if spec.kind != "thin_spire":
        raise ValueError("spire_band only applies to thin_spire scenes")
    c, _ = spec.pose(i)
    size = spec.default_size()
    half = spec.spire_width / 2
    return (c[0] - half, c[0] + half, c[1] - size / 2, c[1] + size / 4)


def on_spire(spec: SceneSpec, i: int, points) -> np.ndarray:
    """Geometric membership of points in the spire band of frame ``i``."""
    x0, x1, y0, y1 = spire_band(spec, i)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] < y1)


def _motion(spec: SceneSpec, i: int, xs: np.ndarray, ys: np.ndarray):
    """Displacement of object points at (xs, ys) from frame i to i+1."""
    lx, ly = _local_coords(spec, i, xs, ys)
    c1, th1 = spec.pose(i + 1)
    cos, sin = math.cos(th1), math.sin(th1)
    nx = c1[0] + cos * lx - sin * ly
    ny = c1[1] + sin * lx + cos * ly
    return nx - xs, ny - ys


def render_scene(spec: SceneSpec) -> SceneTruth:
    h, w, ch = spec.height, spec.width, spec.channels
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    bg = _texture(derive_seed(spec.texture_seed, 1), h, w, ch, 2.0, 0.05, 0.45)
    span = int(math.ceil(max(h, w) * 1.5))
    tex_side = 2 * span + 1
    fg_tex = _texture(derive_seed(spec.texture_seed, 2), tex_side, tex_side, ch, 1.5, 0.5, 1.0)
    footprint = np.ones((2 * FLOW_SUPPORT_MARGIN + 1,) * 2, dtype=bool)

    video, masks, supports = [], [], []
    for i in range(spec.frames):
        lx, ly = _local_coords(spec, i, xs, ys)
        inside = _inside(spec, lx, ly)
        samples = np.stack([lx.ravel() + span, ly.ravel() + span], axis=1)
        obj = bilinear_sample_many(fg_tex, samples).reshape(h, w, ch)
        frame = np.where(inside[:, :, None], obj, bg)
        video.append(frame)
        masks.append(inside[:, :, None].astype(np.float64))
        supports.append(ndimage.binary_dilation(inside, structure=footprint))

    flows = []
    for i in range(spec.frames - 1):
        fx, fy = _motion(spec, i, xs, ys)
        sup = supports[i]
        flows.append(np.stack([np.where(sup, fx, 0.0), np.where(sup, fy, 0.0)], axis=2))
    return SceneTruth(spec, video, flows, masks, supports)


class Segmenter(Protocol):
    def labels(self, frame: int, points) -> list[Label]: ...


class Correspondence(Protocol):
    def correspond(self, frame: int, points) -> np.ndarray: ...


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5).astype(np.intp)


@dataclass(frozen=True)
class GroundTruthSegmenter:
    truth: SceneTruth

    def labels(self, frame: int, points) -> list[Label]:
        if not 0 <= frame < self.truth.num_frames:
            raise IndexError(f"frame {frame} out of range")
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        mask = self.truth.fgmask[frame]
        h, w = mask.shape[:2]
        cols = np.clip(_round_half_up(pts[:, 0]), 0, w - 1)
        rows = np.clip(_round_half_up(pts[:, 1]), 0, h - 1)
        return [Label.FOREGROUND if v > 0.5 else Label.BACKGROUND
                for v in mask[rows, cols, 0]]


@dataclass(frozen=True)
class FlowCorrespondence:
    """Maps points by ``p + flow[frame](p)`` with bilinear flow sampling."""

    flow: Sequence[Grid2D]

    def correspond(self, frame: int, points) -> np.ndarray:
        if not 0 <= frame < len(self.flow):
            raise IndexError(f"frame {frame} out of range for correspondence")
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        f = self.flow[frame]
        moved = pts + bilinear_sample_many(f, pts)
        return clamp_points(moved, f.shape[0], f.shape[1])


def GroundTruthCorrespondence(truth: SceneTruth) -> FlowCorrespondence:
    return FlowCorrespondence(truth.flow)


@dataclass(frozen=True)
class AllForeground:
    """Segmenter for inputs without a segmentation oracle."""

    def labels(self, frame: int, points) -> list[Label]:
        return [Label.FOREGROUND] * len(np.asarray(points).reshape(-1, 2))


@dataclass(frozen=True)
class NoisyCorrespondence:
    """Adds a seeded displacement of fixed length to background-labeled queries.

    The direction is drawn from a counter keyed by frame and the query's
    coordinates, so the same query always receives the same error.
    """

    base: Correspondence
    segmenter: Segmenter
    amplitude: float = 1.5
    seed: int = 0

    def correspond(self, frame: int, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        out = np.array(self.base.correspond(frame, pts), dtype=np.float64)
        labels = self.segmenter.labels(frame, pts)
        for k, (p, lab) in enumerate(zip(pts, labels)):
            if lab is Label.BACKGROUND:
                key = derive_seed(self.seed, frame, int(round(p[0] * 1024)),
                                  int(round(p[1] * 1024)))
                angle = 2 * math.pi * seeded_uniform(key, 1)[0]
                out[k] += self.amplitude * np.array([math.cos(angle), math.sin(angle)])
        first = getattr(self.base, "flow", None)
        if first is not None:
            h, w = first[0].shape[:2]
            out = clamp_points(out, h, w)
        return out


def segment(truth: SceneTruth, frame: int, p) -> Label:
    return GroundTruthSegmenter(truth).labels(frame, [tuple(p)])[0]


def correspond(truth: SceneTruth, frame: int, p) -> Point:
    x, y = GroundTruthCorrespondence(truth).correspond(frame, [tuple(p)])[0]
    return Point(float(x), float(y))
