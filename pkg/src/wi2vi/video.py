"""Video-side preprocessing: grayscale, temporal/spatial downsampling,
background removal and visual sample weighting, plus 8-bit PGM I/O."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError

LUMA = (0.299, 0.587, 0.114)
DEFAULT_THRESHOLD = 0.05
MIN_WEIGHT = 1e-3


@dataclass
class GrayFrame:
    timestamp_us: int
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or 0 in self.pixels.shape:
            raise DataError(f"frame must be a non-empty 2-D array, got shape {self.pixels.shape}")

    @property
    def size(self) -> tuple[int, int]:
        """(height, width)."""
        return self.pixels.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class MaskRect:
    x: int
    y: int
    w: int
    h: int
    weight: float

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h, "weight": self.weight}

    @classmethod
    def from_dict(cls, d: dict) -> "MaskRect":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]), float(d["weight"]))


@dataclass
class WeightedFrame:
    """Training target: frame, scalar loss weight and per-pixel mask."""

    frame: GrayFrame
    weight: float = 1.0
    mask: np.ndarray | None = None
    background_removed: bool = False
    mask_rects: tuple[MaskRect, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 0 < self.weight <= 1:
            raise DataError(f"frame weight must lie in (0, 1], got {self.weight}")
        if self.mask is None:
            self.mask = build_mask(self.mask_rects, self.frame.size)


def to_gray(rgb: np.ndarray, timestamp_us: int = 0) -> GrayFrame:
    """ITU-R 601 luma of an RGB image ``[3][H][W]`` with values in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise DataError(f"expected [3][H][W] RGB input, got shape {rgb.shape}")
    r, g, b = LUMA
    return GrayFrame(timestamp_us, r * rgb[0] + g * rgb[1] + b * rgb[2])


def downsample_time(frames: Sequence[GrayFrame], factor: int) -> list[GrayFrame]:
    """Keep every ``factor``-th frame starting from the first."""
    if factor < 1:
        raise DataError(f"downsample factor must be >= 1, got {factor}")
    return list(frames[::factor])


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    # row o averages input cells overlapping [o*s, (o+1)*s), s = n_in / n_out
    edges = np.arange(n_out + 1, dtype=np.float64) * n_in / n_out
    lo, hi = edges[:-1, None], edges[1:, None]
    cells = np.arange(n_in, dtype=np.float64)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def resize(frame: GrayFrame, out_w: int, out_h: int) -> GrayFrame:
    """Area-average resampling to ``out_h x out_w``."""
    if out_w <= 0 or out_h <= 0:
        raise DataError(f"output size must be positive, got {out_w}x{out_h}")
    h, w = frame.size
    if (h, w) == (out_h, out_w):
        return GrayFrame(frame.timestamp_us, frame.pixels.copy())
    if h % out_h == 0 and w % out_w == 0:
        fy, fx = h // out_h, w // out_w
        px = frame.pixels.reshape(out_h, fy, out_w, fx).mean(axis=(1, 3))
    else:
        px = _area_matrix(h, out_h) @ frame.pixels @ _area_matrix(w, out_w).T
    return GrayFrame(frame.timestamp_us, px)


def background_estimate(empty_scene_frames: Sequence[GrayFrame]) -> GrayFrame:
    """Per-pixel median of frames showing the static scene only."""
    if not empty_scene_frames:
        raise DataError("background estimation needs at least one frame")
    shape = empty_scene_frames[0].size
    if any(f.size != shape for f in empty_scene_frames):
        raise DataError("background frames differ in size")
    stack = np.stack([f.pixels for f in empty_scene_frames])
    return GrayFrame(empty_scene_frames[0].timestamp_us, np.median(stack, axis=0))


def background_subtract(frame: GrayFrame, bg: GrayFrame, threshold: float = DEFAULT_THRESHOLD) -> GrayFrame:
    """Absolute frame difference, zeroed where it does not exceed ``threshold``."""
    if frame.size != bg.size:
        raise DataError(f"frame size {frame.size} != background size {bg.size}")
    if not 0 <= threshold < 1:
        raise DataError(f"threshold must lie in [0, 1), got {threshold}")
    diff = np.abs(frame.pixels - bg.pixels)
    return GrayFrame(frame.timestamp_us, np.where(diff > threshold, diff, 0.0))


def object_spread(bframe: GrayFrame) -> float:
    """Fraction of nonzero pixels in a background-removed frame."""
    return float(np.count_nonzero(bframe.pixels > 0)) / bframe.pixels.size


def frame_weight(bframe: GrayFrame) -> float:
    return 1.0 - object_spread(bframe)


def build_mask(rects: Sequence[MaskRect | dict], resolution: tuple[int, int]) -> np.ndarray:
    """All-ones mask with each rectangle's region lowered to its weight.

    ``resolution`` is ``(height, width)``; overlapping rectangles keep the
    smaller weight.
    """
    h, w = resolution
    mask = np.ones((h, w))
    for r in rects:
        r = r if isinstance(r, MaskRect) else MaskRect.from_dict(r)
        if r.w <= 0 or r.h <= 0 or r.x < 0 or r.y < 0 or r.x + r.w > w or r.y + r.h > h:
            raise DataError(f"mask rectangle {r} out of bounds for {w}x{h} frame")
        if not 0 <= r.weight <= 1:
            raise DataError(f"mask weight must lie in [0, 1], got {r.weight}")
        region = mask[r.y : r.y + r.h, r.x : r.x + r.w]
        np.minimum(region, r.weight, out=region)
    return mask


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Snap values in [0, 1] to the 8-bit grid used on disk."""
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0) / 255.0


# --- PGM (P5, 8-bit) --------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """Write values in [0, 1] as a binary 8-bit PGM (clamped and rounded)."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim != 2:
        raise DataError(f"PGM needs a 2-D array, got shape {px.shape}")
    data = np.round(np.clip(px, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary 8-bit PGM into floats in [0, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    body = raw[pos : pos + w * h]
    if len(body) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0
