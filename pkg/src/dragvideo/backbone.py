"""Closed-form noising stand-in for DDIM inversion and a frozen feature extractor.

The extractor is ``tanh(gain * blur^r_t(x @ mix))`` where ``blur`` is a
separable 1-2-1 binomial filter with clamped borders and ``r_t = 1 + t // 10``.
Its reverse-mode derivative is written out by hand in :meth:`FeatureExtractor.adjoint`.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Grid2D, derive_seed, seeded_field

T_MAX = 50
FEATURE_CHANNELS = 8


@dataclass(frozen=True)
class NoiseSchedule:
    t_max: int = T_MAX

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t < self.t_max:
            raise ValueError(f"timestep {t} outside [0, {self.t_max})")
        return math.cos(t / self.t_max * math.pi / 2) ** 2


def invert(z0: Grid2D, t: int, eps: Grid2D, sched: NoiseSchedule) -> Grid2D:
    """Noised latent ``sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps``."""
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {z0.shape} vs {eps.shape}")
    ab = sched.alpha_bar(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def uninvert(zt: Grid2D, t: int, eps: Grid2D, sched: NoiseSchedule) -> Grid2D:
    ab = sched.alpha_bar(t)
    return (zt - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)


def decode(z0: Grid2D, offsets: Mapping[int, Grid2D], sched: NoiseSchedule) -> Grid2D:
    """Clean image after applying every timestep offset.

    Re-noising to ``t``, adding ``o_t`` and de-noising with the same noise field
    shifts the clean image by ``o_t / sqrt(ab_t)``, so the offsets compose by
    summation in any order.
    """
    out = np.array(z0, dtype=np.float64, copy=True)
    for t in sorted(offsets, reverse=True):
        out += offsets[t] / math.sqrt(sched.alpha_bar(t))
    return out


def decode_sequential(z0: Grid2D, offsets: Mapping[int, Grid2D], eps: Grid2D,
                      sched: NoiseSchedule) -> Grid2D:
    """Step-by-step re-noise / offset / de-noise, descending in ``t``."""
    z = np.array(z0, dtype=np.float64, copy=True)
    for t in sorted(offsets, reverse=True):
        x = invert(z, t, eps, sched) + offsets[t]
        z = uninvert(x, t, eps, sched)
    return z


def blur_steps(t: int) -> int:
    return 1 + t // 10


def _blur_axis(u: np.ndarray, axis: int) -> np.ndarray:
    n = u.shape[axis]
    idx = np.arange(n)
    lo = np.take(u, np.maximum(idx - 1, 0), axis=axis)
    hi = np.take(u, np.minimum(idx + 1, n - 1), axis=axis)
    return 0.25 * lo + 0.5 * u + 0.25 * hi


def _blur_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    # scatter each output's three taps back onto the (clamped) inputs
    n = g.shape[axis]
    g = np.moveaxis(g, axis, 0)
    out = 0.5 * g
    if n == 1:
        out = out + 0.5 * g
        return np.moveaxis(out, 0, axis)
    out = out.copy()
    out[:-1] += 0.25 * g[1:]   # input j is the "lo" tap of output j+1
    out[1:] += 0.25 * g[:-1]   # input j is the "hi" tap of output j-1
    out[0] += 0.25 * g[0]      # clamped lo tap of output 0
    out[-1] += 0.25 * g[-1]    # clamped hi tap of output n-1
    return np.moveaxis(out, 0, axis)


@functools.lru_cache(maxsize=64)
def blur_matrix(n: int, repeats: int) -> np.ndarray:
    """``repeats`` passes of the clamped 1-2-1 filter along one axis of length ``n``.

    The single-pass matrix is symmetric, so the operator is its own adjoint.
    """
    m = np.eye(n)
    for _ in range(repeats):
        m = _blur_axis(m, 0)
    m.setflags(write=False)
    return m


def blur(u: np.ndarray, repeats: int) -> np.ndarray:
    if repeats == 0:
        return u
    rows = blur_matrix(u.shape[0], repeats)
    cols = blur_matrix(u.shape[1], repeats)
    return np.einsum("ij,jkc,lk->ilc", rows, u, cols, optimize=True)


def blur_adjoint(g: np.ndarray, repeats: int) -> np.ndarray:
    if repeats == 0:
        return g
    rows = blur_matrix(g.shape[0], repeats)
    cols = blur_matrix(g.shape[1], repeats)
    return np.einsum("ji,jkc,kl->ilc", rows, g, cols, optimize=True)


def orthonormal_rows(seed: int, rows: int, cols: int) -> np.ndarray:
    """``rows x cols`` matrix with orthonormal rows (requires rows <= cols)."""
    if rows > cols:
        raise ValueError("need rows <= cols for orthonormal rows")
    a = seeded_field(seed, cols, rows, 1)[:, :, 0]
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(q.T)


@dataclass(frozen=True)
class FeatureExtractor:
    latent_channels: int
    feature_channels: int = FEATURE_CHANNELS
    gain: float = 1.0
    seed: int = 0
    mix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mix = orthonormal_rows(derive_seed(self.seed, 0xFEA7), self.latent_channels,
                               self.feature_channels)
        mix.setflags(write=False)
        object.__setattr__(self, "mix", mix)

    def linear(self, x: Grid2D, t: int) -> np.ndarray:
        """Channel mix followed by the timestep-dependent blur (pre-tanh)."""
        if x.shape[2] != self.latent_channels:
            raise ValueError(f"expected {self.latent_channels} latent channels, got {x.shape[2]}")
        return blur(x @ self.mix, blur_steps(t))

    def linear_adjoint(self, g: np.ndarray, t: int) -> np.ndarray:
        return blur_adjoint(g, blur_steps(t)) @ self.mix.T

    def __call__(self, x: Grid2D, t: int) -> Grid2D:
        return np.tanh(self.gain * self.linear(x, t))

    def adjoint(self, x: Grid2D, t: int, cotangent: Grid2D) -> Grid2D:
        """Gradient of ``<cotangent, features(x, t)>`` with respect to ``x``."""
        expected = x.shape[:2] + (self.feature_channels,)
        if cotangent.shape != expected:
            raise ValueError(f"cotangent shape {cotangent.shape} != {expected}")
        f = self(x, t)
        return self.linear_adjoint(cotangent * self.gain * (1.0 - f * f), t)

    def adjoint_from_features(self, f: Grid2D, t: int, cotangent: Grid2D) -> Grid2D:
        """Same as :meth:`adjoint` when the forward features are already known."""
        return self.linear_adjoint(cotangent * self.gain * (1.0 - f * f), t)


def noise_fields(seed: int, frames: int, shape, shared: bool = True) -> list[Grid2D]:
    """Per-frame noise fields.

    Shared by default: inverting near-identical frames gives near-identical
    noise, and independent draws add frame-to-frame flicker to the features.
    """
    h, w, c = shape
    if shared:
        eps = seeded_field(derive_seed(seed, 0xE95), h, w, c)
        return [eps] * frames
    return [seeded_field(derive_seed(seed, 0xE95, i), h, w, c) for i in range(frames)]


@dataclass
class LatentStack:
    """Inverted latents, learnable offsets and adaptive-moment state.

    Indexed by ``(frame, timestep)``. Offsets start at zero.
    """

    clean: list[Grid2D]
    noise: list[Grid2D]
    timesteps: tuple[int, ...]
    schedule: NoiseSchedule
    latents: dict = field(default_factory=dict)
    offsets: dict = field(default_factory=dict)
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)
    steps: int = 0

    @classmethod
    def build(cls, frames, timesteps, schedule: NoiseSchedule, seed: int,
              shared_noise: bool = True) -> "LatentStack":
        clean = [np.asarray(f, dtype=np.float64) for f in frames]
        noise = noise_fields(seed, len(clean), clean[0].shape, shared_noise)
        stack = cls(clean, noise, tuple(timesteps), schedule)
        for i, z0 in enumerate(clean):
            for t in stack.timesteps:
                stack.latents[i, t] = invert(z0, t, noise[i], schedule)
                stack.offsets[i, t] = np.zeros_like(z0)
                stack.first_moment[i, t] = np.zeros_like(z0)
                stack.second_moment[i, t] = np.zeros_like(z0)
        return stack

    @property
    def num_frames(self) -> int:
        return len(self.clean)

    def keys(self):
        return [(i, t) for i in range(self.num_frames) for t in self.timesteps]

    def x(self, i: int, t: int) -> Grid2D:
        """Diffusion input ``z_t + o_t`` for frame ``i``."""
        return self.latents[i, t] + self.offsets[i, t]

    def decode_frame(self, i: int) -> Grid2D:
        return decode(self.clean[i], {t: self.offsets[i, t] for t in self.timesteps},
                      self.schedule)

    def decode_all(self) -> list[Grid2D]:
        return [self.decode_frame(i) for i in range(self.num_frames)]

    def snapshot_offsets(self) -> dict:
        return {k: v.copy() for k, v in self.offsets.items()}
