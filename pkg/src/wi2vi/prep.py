"""The video preprocessing chain applied to a captured clip, per training mode."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, DataError
from .video import (
    DEFAULT_THRESHOLD,
    MIN_WEIGHT,
    GrayFrame,
    MaskRect,
    WeightedFrame,
    background_estimate,
    background_subtract,
    downsample_time,
    frame_weight,
    quantize,
    read_pgm,
    resize,
    write_pgm,
)


@dataclass
class PrepConfig:
    downsample: int = 5
    out_w: int = 32
    out_h: int = 24
    threshold: float = DEFAULT_THRESHOLD
    mask_rects: list[dict] = field(default_factory=list)
    background_clip: str | None = None

    def __post_init__(self):
        if self.downsample < 1:
            raise ConfigError(f"downsample must be >= 1, got {self.downsample}")
        if self.out_w < 1 or self.out_h < 1:
            raise ConfigError(f"output size must be positive, got {self.out_w}x{self.out_h}")
        if not 0 <= self.threshold < 1:
            raise ConfigError(f"threshold must lie in [0, 1), got {self.threshold}")

    @property
    def rects(self) -> tuple[MaskRect, ...]:
        return tuple(MaskRect.from_dict(r) for r in self.mask_rects)

    def to_dict(self) -> dict:
        return asdict(self)


def prepare_background(frames: Sequence[GrayFrame], cfg: PrepConfig) -> GrayFrame:
    """Median of the empty-scene clip, resized and stored at 8-bit precision."""
    bg = resize(background_estimate(frames), cfg.out_w, cfg.out_h)
    return GrayFrame(0, quantize(bg.pixels))


def prepare_frames(
    frames: Sequence[GrayFrame],
    cfg: PrepConfig,
    mode: str,
    background: GrayFrame | None = None,
) -> list[WeightedFrame]:
    """Downsample in time and space, then (dynamics mode) subtract the background.

    Dynamics-mode frames carry the weight ``1 - object_spread`` (floored at
    ``MIN_WEIGHT``); full-scene frames keep the raw image with weight 1.
    """
    if mode not in ("dynamics", "full_scene"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "dynamics" and background is None:
        raise DataError("dynamics mode needs a background estimate")
    rects = cfg.rects
    out = []
    for f in downsample_time(frames, cfg.downsample):
        small = resize(f, cfg.out_w, cfg.out_h)
        if mode == "dynamics":
            b = background_subtract(GrayFrame(f.timestamp_us, quantize(small.pixels)), background, cfg.threshold)
            b = GrayFrame(b.timestamp_us, quantize(b.pixels))
            w = max(frame_weight(b), MIN_WEIGHT)
            out.append(WeightedFrame(b, w, background_removed=True, mask_rects=rects))
        else:
            g = GrayFrame(f.timestamp_us, quantize(small.pixels))
            out.append(WeightedFrame(g, 1.0, background_removed=False, mask_rects=rects))
    return out


# --- clip directories ------------------------------------------------------------------

def read_clip(index_path: str | Path) -> list[GrayFrame]:
    """Frames listed in a JSONL index of ``{timestamp_us, path}`` records."""
    index_path = Path(index_path)
    if not index_path.exists():
        raise DataError(f"missing frame index {index_path}")
    frames = []
    for line in index_path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        p = index_path.parent / rec["path"]
        if not p.exists():
            raise DataError(f"missing frame file {p}")
        frames.append(GrayFrame(int(rec["timestamp_us"]), read_pgm(p)))
    return frames


def write_prepared(frames: Sequence[WeightedFrame], out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    idx = out_dir / "frames.jsonl"
    with open(idx, "w") as fh:
        for wf in frames:
            rel = f"frames/frame_{wf.frame.timestamp_us}.pgm"
            write_pgm(out_dir / rel, wf.frame.pixels)
            rec = {
                "timestamp_us": wf.frame.timestamp_us,
                "path": rel,
                "weight": wf.weight,
                "background_removed": wf.background_removed,
                "mask_rects": [r.to_dict() for r in wf.mask_rects],
            }
            fh.write(json.dumps(rec) + "\n")
    return idx


def read_prepared(index_path: str | Path) -> list[WeightedFrame]:
    index_path = Path(index_path)
    if not index_path.exists():
        raise DataError(f"missing frame index {index_path}")
    out = []
    for line in index_path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        p = index_path.parent / rec["path"]
        if not p.exists():
            raise DataError(f"missing frame file {p}")
        out.append(
            WeightedFrame(
                GrayFrame(int(rec["timestamp_us"]), read_pgm(p)),
                weight=float(rec["weight"]),
                background_removed=bool(rec["background_removed"]),
                mask_rects=tuple(MaskRect.from_dict(r) for r in rec["mask_rects"]),
            )
        )
    return out
