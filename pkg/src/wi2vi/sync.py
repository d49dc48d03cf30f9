"""Frame/CSI synchronization, dataset assembly, temporal split and dropin.

Each frame is paired with its FTN (frame temporal neighbourhood): the ``n``
CSI samples closest in time to the frame's capture instant. Dropin picks
``k`` of those ``n`` at random on every fetch, which is how the model is
trained to tolerate irregular CSI timing.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .csi import CsiSample, CsiTrace, amplitude_stats, read_trace, write_trace
from .errors import ConfigError, DataError, FormatError
from .video import GrayFrame, MaskRect, WeightedFrame, read_pgm, write_pgm

log = logging.getLogger(__name__)

DATASET_FORMAT = "W2VDS"
DATASET_VERSION = 1
MODES = ("dynamics", "full_scene")
DEFAULT_N = 29
DEFAULT_K = 8


@dataclass(frozen=True)
class FTN:
    csi_indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.csi_indices)


@dataclass
class DatasetSample:
    frame: WeightedFrame
    ftn: FTN
    frame_timestamp_us: int


@dataclass
class Dataset:
    samples: list[DatasetSample]
    trace: CsiTrace
    normalization_stats: tuple[float, float]
    n: int
    mode: str = "dynamics"
    k_default: int = DEFAULT_K
    background: GrayFrame | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> DatasetSample:
        return self.samples[i]

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.samples[0].frame.frame.size

    def csi_indices(self) -> np.ndarray:
        """FTN index matrix ``[len, n]``."""
        return np.array([s.ftn.csi_indices for s in self.samples], dtype=np.int64).reshape(len(self), self.n)


# --- FTN -------------------------------------------------------------------------------

def _nearest_n(ts: np.ndarray, frame_ts: int, n: int) -> np.ndarray:
    # the n nearest lie inside the 2n-wide window around the insertion point
    pos = int(np.searchsorted(ts, frame_ts))
    lo, hi = max(0, pos - n), min(len(ts), pos + n)
    cand = np.arange(lo, hi)
    dist = np.abs(ts[cand] - frame_ts)
    order = np.lexsort((cand, dist))  # distance first, earlier index breaks ties
    return np.sort(cand[order[:n]])


def build_ftn(frame_ts: int, trace: CsiTrace | np.ndarray, n: int) -> FTN:
    """Indices of the ``n`` samples nearest to ``frame_ts`` (ties go earlier), sorted."""
    ts = trace.timestamps_us if isinstance(trace, CsiTrace) else np.asarray(trace, dtype=np.int64)
    if n < 1:
        raise ConfigError(f"FTN width n must be >= 1, got {n}")
    if len(ts) < n:
        raise DataError(f"trace has {len(ts)} samples, FTN needs n={n}")
    return FTN(tuple(int(i) for i in _nearest_n(ts, int(frame_ts), n)))


def ftn_is_full(frame_ts: int, ftn: FTN, ts: np.ndarray) -> bool:
    """True when the FTN's symmetric time window lies inside the trace span.

    A neighbourhood reaching the edge of the recording on one side only would
    be lopsided, so such frames are excluded rather than padded.
    """
    sel = ts[list(ftn.csi_indices)]
    radius = int(np.max(np.abs(sel - frame_ts)))
    return ts[0] <= frame_ts - radius and frame_ts + radius <= ts[-1]


def max_lag_us(ds: Dataset) -> int:
    ts = ds.trace.timestamps_us
    idx = ds.csi_indices()
    frame_ts = np.array([s.frame_timestamp_us for s in ds.samples])[:, None]
    return int(np.max(np.abs(ts[idx] - frame_ts)))


def ftn_overlaps(ds: Dataset) -> np.ndarray:
    """Fraction of shared CSI samples between each pair of consecutive FTNs."""
    idx = ds.csi_indices()
    return np.array(
        [len(set(a) & set(b)) / ds.n for a, b in zip(idx[:-1].tolist(), idx[1:].tolist())]
    )


# --- dataset ---------------------------------------------------------------------------

def train_count(total: int, train_fraction: float) -> int:
    if not 0 < train_fraction < 1:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    return int(np.floor(train_fraction * total))


def _stats_for(samples: Sequence[DatasetSample], trace: CsiTrace) -> tuple[float, float]:
    idx = sorted({i for s in samples for i in s.ftn.csi_indices})
    return amplitude_stats(trace, idx)


def build_dataset(
    frames: Sequence[WeightedFrame],
    trace: CsiTrace,
    n: int = DEFAULT_N,
    mode: str = "dynamics",
    train_fraction: float = 0.95,
    k_default: int = DEFAULT_K,
    background: GrayFrame | None = None,
) -> Dataset:
    """Pair every frame with its FTN; frames without a full-width FTN are dropped.

    Amplitude normalization statistics come from the leading
    ``train_fraction`` of the surviving samples only.
    """
    if not frames:
        raise DataError("no frames to synchronize")
    if not 1 <= k_default <= n:
        raise ConfigError(f"dropin width k must satisfy 1 <= k <= n, got k={k_default}, n={n}")
    ts = trace.timestamps_us
    if len(ts) < n:
        raise DataError(f"trace has {len(ts)} samples, FTN needs n={n}")
    kept: list[DatasetSample] = []
    dropped = 0
    for wf in sorted(frames, key=lambda f: f.frame.timestamp_us):
        t = wf.frame.timestamp_us
        ftn = build_ftn(t, ts, n)
        if ftn_is_full(t, ftn, ts):
            kept.append(DatasetSample(wf, ftn, t))
        else:
            dropped += 1
    if dropped:
        log.info("dropped %d boundary frame(s) without a full-width FTN", dropped)
    if not kept:
        raise DataError("every frame was dropped at the trace boundaries")
    n_train = max(1, train_count(len(kept), train_fraction))
    stats = _stats_for(kept[:n_train], trace)
    return Dataset(
        samples=kept,
        trace=trace,
        normalization_stats=stats,
        n=n,
        mode=mode,
        k_default=k_default,
        background=background,
        meta={"train_fraction": train_fraction, "boundary_dropped": dropped},
    )


def split(ds: Dataset, train_fraction: float) -> tuple[Dataset, Dataset]:
    """Temporal split: the first ``floor(fraction * N)`` samples train, the rest test."""
    cut = train_count(len(ds), train_fraction)
    if cut == 0 or cut == len(ds):
        raise DataError(f"split of {len(ds)} samples at {train_fraction} leaves one side empty")
    train_s, test_s = ds.samples[:cut], ds.samples[cut:]
    stats = _stats_for(train_s, ds.trace)
    return replace(ds, samples=list(train_s), normalization_stats=stats), replace(
        ds, samples=list(test_s), normalization_stats=stats
    )


# --- dropin ----------------------------------------------------------------------------

def dropin_indices(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` distinct positions drawn uniformly from ``range(n)``, ascending."""
    if not 1 <= k <= n:
        raise ConfigError(f"dropin needs 1 <= k <= n, got k={k}, n={n}")
    return np.sort(rng.choice(n, size=k, replace=False))


def dropin_matrix(selection: Sequence[int], n: int) -> np.ndarray:
    """The ``n x k`` 0/1 selection matrix whose column ``j`` is one-hot at ``selection[j]``."""
    sel = np.asarray(selection, dtype=np.int64)
    mat = np.zeros((n, len(sel)), dtype=np.int64)
    mat[sel, np.arange(len(sel))] = 1
    return mat


def dropin_select(ftn_samples: Sequence[CsiSample], k: int, rng: np.random.Generator) -> list[CsiSample]:
    """Random ``k`` of the FTN samples, kept in timestamp order."""
    chosen = [ftn_samples[i] for i in dropin_indices(len(ftn_samples), k, rng)]
    return sorted(chosen, key=lambda s: s.timestamp_us)


def fetch_rng(seed: int, epoch: int, sample_index: int) -> np.random.Generator:
    """Independent stream for one data fetch, so loading order does not matter."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, sample_index]))


def nearest_k(n: int, k: int) -> np.ndarray:
    """Deterministic alternative to a random draw: the ``k`` central FTN positions."""
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= n, got k={k}, n={n}")
    start = (n - k) // 2
    return np.arange(start, start + k)


# --- persistence ---------------------------------------------------------------------

def save_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    """Write ``manifest.json``, ``trace.csit`` and one PGM per frame; returns the manifest path.

    Frames are stored at 8-bit precision.
    """
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    write_trace(out_dir / "trace.csit", ds.trace)
    records = []
    for s in ds.samples:
        rel = f"frames/frame_{s.frame_timestamp_us}.pgm"
        write_pgm(out_dir / rel, s.frame.frame.pixels)
        records.append(
            {
                "frame_file": rel,
                "weight": s.frame.weight,
                "mask_rects": [r.to_dict() for r in s.frame.mask_rects],
                "background_removed": s.frame.background_removed,
                "frame_timestamp_us": s.frame_timestamp_us,
                "csi_indices": list(s.ftn.csi_indices),
            }
        )
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "n": ds.n,
        "k_default": ds.k_default,
        "mode": ds.mode,
        "normalization_stats": list(ds.normalization_stats),
        "meta": ds.meta,
        "samples": records,
    }
    if ds.background is not None:
        write_pgm(out_dir / "background.pgm", ds.background.pixels)
        manifest["background_file"] = "background.pgm"
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset directory (or its ``manifest.json``) written by :func:`save_dataset`."""
    path = Path(path)
    root = path.parent if path.name == "manifest.json" else path
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DataError(f"{root}: no manifest.json")
    try:
        m = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: invalid JSON ({exc})") from exc
    if m.get("format") != DATASET_FORMAT:
        raise FormatError(f"{mpath}: unknown dataset format {m.get('format')!r}")
    if m.get("version") != DATASET_VERSION:
        raise FormatError(f"{mpath}: unsupported dataset version {m.get('version')!r}")
    trace = read_trace(root / "trace.csit")
    samples = []
    for rec in m["samples"]:
        fpath = root / rec["frame_file"]
        if not fpath.exists():
            raise DataError(f"missing frame file {fpath}")
        idx = tuple(int(i) for i in rec["csi_indices"])
        if len(idx) != m["n"] or max(idx) >= len(trace):
            raise FormatError(f"{mpath}: bad csi_indices for {rec['frame_file']}")
        ts = int(rec["frame_timestamp_us"])
        wf = WeightedFrame(
            GrayFrame(ts, read_pgm(fpath)),
            weight=float(rec["weight"]),
            background_removed=bool(rec["background_removed"]),
            mask_rects=tuple(MaskRect.from_dict(r) for r in rec["mask_rects"]),
        )
        samples.append(DatasetSample(wf, FTN(idx), ts))
    bg = None
    if "background_file" in m:
        bg = GrayFrame(0, read_pgm(root / m["background_file"]))
    return Dataset(
        samples=samples,
        trace=trace,
        normalization_stats=(float(m["normalization_stats"][0]), float(m["normalization_stats"][1])),
        n=int(m["n"]),
        mode=m["mode"],
        k_default=int(m["k_default"]),
        background=bg,
        meta=dict(m.get("meta", {})),
    )
