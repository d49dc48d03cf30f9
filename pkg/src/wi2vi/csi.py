"""CSI data model, per-sample transforms and the CSIT1 trace format.

Subcarrier indices run ``1..F`` inside the sanitization formula and
``0..F-1`` in array storage.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, FormatError

TRACE_MAGIC = b"CSITRC01"
_HEADER = struct.Struct("<IIIQ")


@dataclass(frozen=True)
class CsiSample:
    """One channel snapshot: complex ``h[f, t, r]`` plus capture time."""

    timestamp_us: int
    h: np.ndarray
    rssi_norm: float | None = None

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.h.shape  # type: ignore[return-value]


@dataclass
class CsiTrace:
    """Time-ordered CSI stream stored column-wise.

    ``h`` has shape ``[N, F, T, R]``; ``rssi_norm`` holds NaN where a sample
    carries no normalization factor.
    """

    timestamps_us: np.ndarray
    h: np.ndarray
    rssi_norm: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps_us = np.asarray(self.timestamps_us, dtype=np.int64)
        self.h = np.asarray(self.h, dtype=np.complex128)
        if self.h.ndim != 4 or self.h.shape[0] != self.timestamps_us.shape[0]:
            raise DataError(f"trace shape mismatch: h {self.h.shape}, timestamps {self.timestamps_us.shape}")
        if self.h.shape[1] < 2:
            raise DataError("a CSI sample needs at least 2 subcarriers")
        if np.any(np.diff(self.timestamps_us) <= 0):
            raise DataError("trace timestamps must strictly increase")
        if self.rssi_norm is None:
            self.rssi_norm = np.full(len(self.timestamps_us), np.nan)
        else:
            self.rssi_norm = np.asarray(self.rssi_norm, dtype=np.float64)

    @classmethod
    def from_samples(cls, samples: Sequence[CsiSample], meta: dict | None = None) -> "CsiTrace":
        if not samples:
            raise DataError("cannot build a trace from zero samples")
        dims = samples[0].h.shape
        for s in samples:
            if s.h.shape != dims:
                raise DataError(f"sample dims {s.h.shape} differ from {dims}")
        return cls(
            timestamps_us=np.array([s.timestamp_us for s in samples], dtype=np.int64),
            h=np.stack([s.h for s in samples]),
            rssi_norm=np.array([np.nan if s.rssi_norm is None else s.rssi_norm for s in samples]),
            meta=dict(meta or {}),
        )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.h.shape[1:]  # type: ignore[return-value]

    def __len__(self) -> int:
        return self.timestamps_us.shape[0]

    def __getitem__(self, i: int) -> CsiSample:
        r = float(self.rssi_norm[i])
        return CsiSample(int(self.timestamps_us[i]), self.h[i], None if np.isnan(r) else r)

    def __iter__(self) -> Iterator[CsiSample]:
        for i in range(len(self)):
            yield self[i]

    def samples(self, indices: Sequence[int]) -> list[CsiSample]:
        return [self[int(i)] for i in indices]


def amplitude_phase(sample: CsiSample | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split complex CSI into amplitude and phase in ``(-pi, pi]``.

    The phase of an exact zero is defined as 0.
    """
    h = sample.h if isinstance(sample, CsiSample) else np.asarray(sample)
    amp = np.abs(h)
    phase = np.angle(h)
    # angle() returns -pi for (-x, -0.0); fold onto the half-open interval
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return amp, phase


def linear_sanitize(phi: np.ndarray, axis: int = -1) -> np.ndarray:
    """Remove the linear phase term fitted from the band edges and the mean.

    With ``f = 1..F`` along ``axis``::

        a1 = (phi_F - phi_1) / (2 * pi * F)
        a0 = mean(phi)
        out_f = phi_f - (a1 * f + a0)

    ``phi`` is used as given (no unwrapping).
    """
    phi = np.moveaxis(np.asarray(phi, dtype=np.float64), axis, -1)
    n = phi.shape[-1]
    if n < 2:
        raise DataError(f"phase sanitization needs F >= 2, got F={n}")
    f = np.arange(1, n + 1, dtype=np.float64)
    a1 = (phi[..., -1] - phi[..., 0]) / (2 * np.pi * n)
    a0 = phi.mean(axis=-1)
    out = phi - (a1[..., None] * f + a0[..., None])
    return np.moveaxis(out, -1, axis)


def sanitize_phase(phase: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unwrap ``phase`` along the subcarrier axis, then apply :func:`linear_sanitize`."""
    phase = np.asarray(phase, dtype=np.float64)
    if phase.shape[axis] < 2:
        raise DataError(f"phase sanitization needs F >= 2, got F={phase.shape[axis]}")
    return linear_sanitize(np.unwrap(phase, axis=axis), axis=axis)


def sanitize_sample(sample: CsiSample) -> CsiSample:
    """Sanitize the phase of each antenna pair independently; keep amplitudes."""
    amp, phase = amplitude_phase(sample)
    clean = sanitize_phase(phase, axis=0)
    return CsiSample(sample.timestamp_us, amp * np.exp(1j * clean), sample.rssi_norm)


def sample_planes(h: np.ndarray) -> np.ndarray:
    """Map CSI ``[..., F, T, R]`` to real planes ``[..., 2*T*R, F]``.

    Plane ``2*(t*R + r)`` is the amplitude and ``2*(t*R + r) + 1`` the
    sanitized phase of antenna pair ``(t, r)``.
    """
    h = np.asarray(h)
    *lead, nf, nt, nr = h.shape
    amp, phase = amplitude_phase(h)
    clean = sanitize_phase(phase, axis=-3)
    planes = np.empty((*lead, nt * nr, 2, nf), dtype=np.float64)
    planes[..., 0, :] = np.moveaxis(amp.reshape(*lead, nf, nt * nr), -2, -1)
    planes[..., 1, :] = np.moveaxis(clean.reshape(*lead, nf, nt * nr), -2, -1)
    return planes.reshape(*lead, 2 * nt * nr, nf)


def standardize_planes(planes: np.ndarray, stats: tuple[float, float] | None) -> np.ndarray:
    """Standardize the amplitude planes (even channels) with ``(mean, std)``."""
    if stats is None:
        return planes
    mean, std = stats
    out = np.array(planes, dtype=np.float64, copy=True)
    out[..., 0::2, :] = (out[..., 0::2, :] - mean) / std
    return out


def feature_stack(
    samples: Sequence[CsiSample], stats: tuple[float, float] | None = None
) -> np.ndarray:
    """Stack selected samples into the network input ``[2*T*R, k, F]``."""
    if not samples:
        raise DataError("feature_stack needs at least one sample")
    dims = samples[0].h.shape
    for s in samples:
        if s.h.shape != dims:
            raise DataError(f"sample dims {s.h.shape} differ from {dims}")
    planes = sample_planes(np.stack([s.h for s in samples]))  # [k, C, F]
    return standardize_planes(planes, stats).transpose(1, 0, 2)


def amplitude_stats(trace: CsiTrace, indices: Sequence[int] | None = None) -> tuple[float, float]:
    """Mean and standard deviation of |h| over the given samples."""
    h = trace.h if indices is None else trace.h[np.asarray(sorted(set(indices)), dtype=np.int64)]
    amp = np.abs(h)
    std = float(amp.std())
    return float(amp.mean()), std if std > 0 else 1.0


# --- CSIT1 binary format -------------------------------------------------------

def _record_dtype(dims: tuple[int, int, int]) -> np.dtype:
    return np.dtype([("ts", "<u8"), ("rssi", "<f8"), ("h", "<c16", dims)])


def write_trace(path: str | Path, trace: CsiTrace) -> None:
    """Write ``trace`` in CSIT1 format (little-endian, (f, t, r) row-major)."""
    if np.any(trace.timestamps_us < 0):
        raise DataError("CSIT1 stores unsigned timestamps; negative timestamp found")
    dims = trace.dims
    rec = np.empty(len(trace), dtype=_record_dtype(dims))
    rec["ts"] = trace.timestamps_us
    rec["rssi"] = trace.rssi_norm
    rec["h"] = trace.h
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(_HEADER.pack(*dims, len(trace)))
        fh.write(rec.tobytes())


def read_trace(path: str | Path) -> CsiTrace:
    """Read a CSIT1 file written by :func:`write_trace`."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(TRACE_MAGIC))
        if magic != TRACE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {TRACE_MAGIC!r}")
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        nf, nt, nr, count = _HEADER.unpack(head)
        dt = _record_dtype((nf, nt, nr))
        body = fh.read()
    if len(body) != count * dt.itemsize:
        raise FormatError(
            f"{path}: expected {count} samples ({count * dt.itemsize} bytes), found {len(body)} bytes"
        )
    rec = np.frombuffer(body, dtype=dt)
    return CsiTrace(
        timestamps_us=rec["ts"].astype(np.int64),
        h=rec["h"].copy(),
        rssi_norm=rec["rssi"].copy(),
    )
