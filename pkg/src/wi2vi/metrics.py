"""Evaluation metrics: silhouette centroids, centroid hit rate and baselines."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import ndimage

BLOB_LEVEL = 0.5


def blob_centroid(img: np.ndarray, level: float = BLOB_LEVEL) -> tuple[float, float] | None:
    """Intensity-weighted ``(row, col)`` centroid of the brightest connected blob.

    Pixels at or above ``level * max`` form the blobs; the blob with the
    largest summed intensity wins. Returns ``None`` for a non-positive image.
    """
    img = np.asarray(img, dtype=np.float64)
    peak = img.max()
    if not np.isfinite(peak) or peak <= 0:
        return None
    labels, count = ndimage.label(img >= level * peak)
    mass = ndimage.sum(img, labels, index=np.arange(1, count + 1))
    best = int(np.argmax(mass)) + 1
    r, c = ndimage.center_of_mass(img, labels, best)
    return float(r), float(c)


def silhouette(frame: np.ndarray, background: np.ndarray | None) -> np.ndarray:
    """Foreground evidence: the frame itself, or its distance from ``background``."""
    return np.asarray(frame) if background is None else np.abs(np.asarray(frame) - background)


def centroid_hits(
    preds: Sequence[np.ndarray],
    truths: Sequence[np.ndarray],
    radius_frac: float = 0.3,
    background: np.ndarray | None = None,
    min_truth: float = 0.0,
) -> tuple[float, int]:
    """Fraction of frames whose predicted centroid lies within ``radius_frac`` of the diagonal.

    Frames whose ground truth holds no silhouette (peak ``<= min_truth``) are
    skipped. Returns ``(hit_rate, frames_scored)``; the rate is NaN when no
    frame qualifies.
    """
    hits = scored = 0
    for p, t in zip(preds, truths):
        t_sil = silhouette(t, background)
        if t_sil.max() <= min_truth:
            continue
        scored += 1
        ct = blob_centroid(t_sil)
        cp = blob_centroid(silhouette(np.clip(p, 0.0, 1.0), background))
        if ct is None or cp is None:
            continue
        diag = float(np.hypot(*t_sil.shape))
        if np.hypot(ct[0] - cp[0], ct[1] - cp[1]) <= radius_frac * diag:
            hits += 1
    return (hits / scored if scored else float("nan")), scored


def weighted_l1_np(pred: np.ndarray, target: np.ndarray, weight, mask: np.ndarray) -> np.ndarray:
    """Per-frame weighted L1 for stacked frames ``[N][H][W]``."""
    num = (np.abs(pred - target) * mask).sum(axis=(-2, -1))
    return np.asarray(weight) * num / mask.sum(axis=(-2, -1))


def median_frame(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel median, the constant-frame baseline for L1."""
    return np.median(np.stack(frames), axis=0)


def percentiles(values: np.ndarray, qs=(50, 90, 99)) -> dict[str, float]:
    return {f"p{q}": float(np.percentile(values, q)) for q in qs}
