"""Frame files: binary PPM/PGM and PNG, 8-bit, plus annotated comparison strips."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .core import Grid2D

GREEN = (0, 255, 0)
BLUE = (0, 0, 255)


def quantize(grid: Grid2D) -> np.ndarray:
    """[0, 1] floats to uint8 (values outside are clipped)."""
    return np.round(np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def dequantize(pixels: np.ndarray) -> Grid2D:
    arr = np.asarray(pixels, dtype=np.float64) / 255.0
    return arr[:, :, None] if arr.ndim == 2 else arr


def write_pnm(path, grid: Grid2D) -> None:
    px = quantize(grid)
    h, w, c = px.shape
    if c not in (1, 3):
        raise ValueError(f"PNM export supports 1 or 3 channels, got {c}")
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(px.tobytes())


def _read_token(data: bytes, pos: int):
    while True:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        break
    start = pos
    while not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pnm(path) -> Grid2D:
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM type {magic!r}")
    w, pos = _read_token(data, pos)
    h, pos = _read_token(data, pos)
    maxval, pos = _read_token(data, pos)
    if int(maxval) != 255:
        raise ValueError(f"{path}: only 8-bit PNM is supported")
    c = 1 if magic == b"P5" else 3
    w, h = int(w), int(h)
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * c, offset=pos + 1)
    return dequantize(raw.reshape(h, w, c))


def write_png(path, grid: Grid2D) -> None:
    px = quantize(grid)
    img = Image.fromarray(px[:, :, 0] if px.shape[2] == 1 else px)
    img.save(path, format="PNG")


def read_png(path) -> Grid2D:
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return dequantize(np.array(img))


def read_frame(path) -> Grid2D:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pgm", ".pnm"):
        return read_pnm(path)
    return read_png(path)


def load_frames(directory) -> list[Grid2D]:
    """Frames of a directory in name order; PNG preferred over PNM duplicates."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not files:
        files = sorted(p for p in directory.iterdir()
                       if p.suffix.lower() in (".ppm", ".pgm", ".pnm"))
    if not files:
        raise FileNotFoundError(f"no frames found in {directory}")
    frames = [read_frame(p) for p in files]
    if any(f.shape != frames[0].shape for f in frames):
        raise ValueError(f"frames in {directory} have different sizes")
    return frames


def save_frames(directory, frames: Sequence[Grid2D], prefix: str = "frame") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, frame in enumerate(frames):
        stem = directory / f"{prefix}_{i:03d}"
        write_pnm(stem.with_suffix(".ppm" if frame.shape[2] == 3 else ".pgm"), frame)
        write_png(stem.with_suffix(".png"), frame)
        written.append(stem.with_suffix(".png"))
    return written


def _to_rgb(px: np.ndarray) -> np.ndarray:
    return np.repeat(px, 3, axis=2) if px.shape[2] == 1 else px[:, :, :3].copy()


def draw_marker(rgb: np.ndarray, point, color, radius: int = 1) -> None:
    h, w = rgb.shape[:2]
    cx, cy = int(np.floor(point[0] + 0.5)), int(np.floor(point[1] + 0.5))
    y0, y1 = max(cy - radius, 0), min(cy + radius, h - 1)
    x0, x1 = max(cx - radius, 0), min(cx + radius, w - 1)
    if y0 <= y1 and x0 <= x1:
        rgb[y0:y1 + 1, x0:x1 + 1] = color


def comparison_strip(before: Grid2D, after: Grid2D, handles_before, handles_after,
                     targets, gap: int = 2) -> np.ndarray:
    """``[input | edited]`` uint8 image with handle (green) and target (blue) markers.

    Markers are drawn on copies; the frames passed in are not modified.
    """
    left = _to_rgb(quantize(before))
    right = _to_rgb(quantize(after))
    for p in handles_before:
        draw_marker(left, p, GREEN)
    for p in handles_after:
        draw_marker(right, p, GREEN)
    for q in targets:
        draw_marker(left, q, BLUE)
        draw_marker(right, q, BLUE)
    h = left.shape[0]
    spacer = np.full((h, gap, 3), 255, dtype=np.uint8)
    return np.concatenate([left, spacer, right], axis=1)
