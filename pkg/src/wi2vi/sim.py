"""Synthetic CSI and silhouette video for a 2-D floor plan.

The channel is a sum of discrete paths ``alpha * exp(-j 2 pi f tau)``: a
direct tx->rx path, fixed static reflectors and a single-bounce reflection
off a moving target whose attenuation falls with the squared bounce length.
The camera is orthographic across its axis with sizes scaled by inverse
depth, so nearer targets cover more pixels.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .csi import CsiTrace
from .errors import ConfigError
from .video import write_pgm

SPEED_OF_LIGHT = 299_792_458.0
INJECT_SLOPE_MAX = 0.05  # rad per subcarrier


@dataclass(frozen=True)
class StaticPath:
    alpha: float
    tau_ns: float
    aod_deg: float = 0.0
    aoa_deg: float = 0.0


@dataclass(frozen=True)
class Waypoint:
    time_us: int
    position: tuple[float, float]
    present: bool = True


@dataclass(frozen=True)
class Furniture:
    """Static rectangle in fractional image coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float
    value: float


DEFAULT_FURNITURE = (
    Furniture(0.05, 0.10, 0.30, 0.35, 0.60),
    Furniture(0.40, 0.60, 0.75, 0.85, 0.40),
    Furniture(0.82, 0.05, 0.95, 0.70, 0.50),
)


@dataclass
class Scene:
    room: tuple[float, float] = (8.0, 6.0)
    tx_pos: tuple[float, float] = (0.5, 3.0)
    rx_pos: tuple[float, float] = (7.5, 3.2)
    cam_pos: tuple[float, float] = (7.8, 3.0)
    static_paths: list[StaticPath] = field(default_factory=list)
    trajectory: list[Waypoint] = field(default_factory=list)
    loop: bool = False
    mover_extent_m: float = 1.7
    direct_alpha: float = 1.0
    reflect_gain: float = 20.0
    look_at: tuple[float, float] | None = None
    view_width_m: float | None = None
    focal_rel: float = 1.0
    cam_height_m: float = 1.0
    background_level: float = 0.2
    mover_value: float = 0.95
    furniture: list[Furniture] = field(default_factory=lambda: list(DEFAULT_FURNITURE))

    def __post_init__(self):
        w, d = self.room
        if w <= 0 or d <= 0:
            raise ConfigError(f"room dimensions must be positive, got {self.room}")
        for p in self.static_paths:
            if not 0 < p.alpha <= 1:
                raise ConfigError(f"static path alpha must lie in (0, 1], got {p.alpha}")
        times = [wp.time_us for wp in self.trajectory]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("trajectory waypoint times must strictly increase")
        for wp in self.trajectory:
            x, y = wp.position
            if not (0 <= x <= w and 0 <= y <= d):
                raise ConfigError(f"waypoint {wp.position} lies outside the {w}x{d} m room")
        if self.loop and len(self.trajectory) < 2:
            raise ConfigError("a looping trajectory needs at least two waypoints")

    @property
    def has_mover(self) -> bool:
        return bool(self.trajectory)

    def without_mover(self) -> "Scene":
        d = {**self.__dict__, "trajectory": [], "loop": False}
        return Scene(**d)

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        d = dict(d)
        kw: dict = {}
        for key in ("room", "tx_pos", "rx_pos", "cam_pos", "look_at"):
            if d.get(key) is not None:
                kw[key] = tuple(float(v) for v in d.pop(key))
            else:
                d.pop(key, None)
        kw["static_paths"] = [StaticPath(**p) for p in d.pop("static_paths", [])]
        mover = d.pop("mover", None)
        if mover:
            mover = dict(mover)
            kw["trajectory"] = [
                Waypoint(int(w["time_us"]), (float(w["position"][0]), float(w["position"][1])), bool(w.get("present", True)))
                for w in mover.pop("trajectory")
            ]
            kw["loop"] = bool(mover.pop("loop", False))
            if "extent_m" in mover:
                kw["mover_extent_m"] = float(mover.pop("extent_m"))
            if "reflect_gain" in mover:
                kw["reflect_gain"] = float(mover.pop("reflect_gain"))
            if "value" in mover:
                kw["mover_value"] = float(mover.pop("value"))
            if mover:
                raise ConfigError(f"unknown mover keys: {sorted(mover)}")
        if "furniture" in d:
            kw["furniture"] = [Furniture(**f) for f in d.pop("furniture")]
        kw.update(d)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"bad scene description: {exc}") from exc


@dataclass
class SimConfig:
    F: int = 56
    subcarrier_spacing_hz: float = 312_500.0
    carrier_hz: float = 2.437e9
    T: int = 3
    R: int = 3
    antenna_spacing_m: float = 0.0615
    packet_interval_us: int = 10_000
    jitter_us: int = 1_000
    drop_prob: float = 0.0
    noise_sigma: float = 0.0
    inject_linear_phase: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.F < 2:
            raise ConfigError(f"F must be >= 2, got {self.F}")
        if self.T < 1 or self.R < 1:
            raise ConfigError("antenna counts must be positive")
        if self.packet_interval_us <= 2 * self.jitter_us:
            raise ConfigError("packet_interval_us must exceed twice jitter_us")
        if not 0 <= self.drop_prob < 1:
            raise ConfigError(f"drop_prob must lie in [0, 1), got {self.drop_prob}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad sim config: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def subcarrier_freqs(cfg: SimConfig) -> np.ndarray:
    """Absolute frequency of each subcarrier, centred on the carrier."""
    idx = np.arange(cfg.F, dtype=np.float64) - (cfg.F - 1) / 2
    return cfg.carrier_hz + idx * cfg.subcarrier_spacing_hz


def mover_state(scene: Scene, times_us) -> tuple[np.ndarray, np.ndarray]:
    """Interpolated mover position ``[N, 2]`` and presence ``[N]`` at the given times.

    Presence is a step function taken from the most recent waypoint.
    """
    t = np.asarray(times_us, dtype=np.float64).reshape(-1)
    if not scene.has_mover:
        return np.zeros((t.size, 2)), np.zeros(t.size, dtype=bool)
    wt = np.array([w.time_us for w in scene.trajectory], dtype=np.float64)
    wp = np.array([w.position for w in scene.trajectory], dtype=np.float64)
    pres = np.array([w.present for w in scene.trajectory], dtype=bool)
    if scene.loop:
        period = wt[-1]
        t = np.mod(t - wt[0], period - wt[0]) + wt[0]
    pos = np.stack([np.interp(t, wt, wp[:, 0]), np.interp(t, wt, wp[:, 1])], axis=1)
    k = np.clip(np.searchsorted(wt, t, side="right") - 1, 0, len(wt) - 1)
    return pos, pres[k]


def _array_positions(center, toward, count: int, spacing: float) -> np.ndarray:
    # uniform linear array perpendicular to the tx-rx line
    center = np.asarray(center, dtype=np.float64)
    d = np.asarray(toward, dtype=np.float64) - center
    norm = np.hypot(*d)
    axis = np.array([-d[1], d[0]]) / norm if norm > 0 else np.array([1.0, 0.0])
    offs = (np.arange(count) - (count - 1) / 2) * spacing
    return center[None, :] + offs[:, None] * axis[None, :]


def channel_response(scene: Scene, cfg: SimConfig, times_us) -> np.ndarray:
    """Noise-free channel ``[N, F, T, R]`` at the given instants."""
    times = np.asarray(times_us, dtype=np.float64).reshape(-1)
    freqs = subcarrier_freqs(cfg)
    tx = _array_positions(scene.tx_pos, scene.rx_pos, cfg.T, cfg.antenna_spacing_m)
    rx = _array_positions(scene.rx_pos, scene.tx_pos, cfg.R, cfg.antenna_spacing_m)
    ti = np.arange(cfg.T, dtype=np.float64)[:, None]
    ri = np.arange(cfg.R, dtype=np.float64)[None, :]

    static = np.zeros((cfg.F, cfg.T, cfg.R), dtype=np.complex128)
    if scene.direct_alpha > 0:
        d = np.linalg.norm(tx[:, None, :] - rx[None, :, :], axis=-1)
        static += scene.direct_alpha * np.exp(-2j * np.pi * freqs[:, None, None] * (d / SPEED_OF_LIGHT))
    for p in scene.static_paths:
        extra = (ti * np.sin(np.radians(p.aod_deg)) + ri * np.sin(np.radians(p.aoa_deg))) * cfg.antenna_spacing_m
        tau = p.tau_ns * 1e-9 + extra / SPEED_OF_LIGHT
        static += p.alpha * np.exp(-2j * np.pi * freqs[:, None, None] * tau)

    out = np.broadcast_to(static, (times.size,) + static.shape).copy()
    if scene.has_mover and times.size:
        pos, present = mover_state(scene, times)
        for lo in range(0, times.size, 2048):
            sl = slice(lo, lo + 2048)
            m = pos[sl][present[sl]]
            if m.size == 0:
                continue
            d1 = np.linalg.norm(tx[None, :, None, :] - m[:, None, None, :], axis=-1)  # [n, T, 1]
            d2 = np.linalg.norm(m[:, None, None, :] - rx[None, None, :, :], axis=-1)  # [n, 1, R]
            length = d1 + d2
            alpha = scene.reflect_gain / length**2
            refl = alpha[:, None] * np.exp(-2j * np.pi * freqs[None, :, None, None] * (length[:, None] / SPEED_OF_LIGHT))
            block = out[sl]
            block[present[sl]] += refl
            out[sl] = block
    return out


def simulate_csi(scene: Scene, cfg: SimConfig, duration_us: int) -> CsiTrace:
    """Packet-level CSI trace with jitter, drops, noise and optional STO/CFO-like phase."""
    if duration_us < cfg.packet_interval_us:
        raise ConfigError(
            f"duration {duration_us} us is shorter than one packet interval ({cfg.packet_interval_us} us)"
        )
    n_slots = -(-duration_us // cfg.packet_interval_us)
    keep, stamps, slopes, offsets, noise = [], [], [], [], []
    shape = (cfg.F, cfg.T, cfg.R)
    for k in range(n_slots):
        # fixed draw order per packet, independent of which effects are enabled
        rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, k]))
        jit = int(rng.integers(-cfg.jitter_us, cfg.jitter_us + 1)) if cfg.jitter_us else 0
        u_drop = rng.random()
        a = rng.uniform(-INJECT_SLOPE_MAX, INJECT_SLOPE_MAX)
        b = rng.uniform(-np.pi, np.pi)
        z = rng.standard_normal(shape + (2,))
        if u_drop < cfg.drop_prob:
            continue
        keep.append(k)
        stamps.append(max(0, k * cfg.packet_interval_us + jit))
        slopes.append(a)
        offsets.append(b)
        noise.append(z)
    stamps_arr = np.asarray(stamps, dtype=np.int64)
    h = channel_response(scene, cfg, stamps_arr)
    if cfg.noise_sigma > 0:
        z = np.asarray(noise)
        h += (cfg.noise_sigma / np.sqrt(2.0)) * (z[..., 0] + 1j * z[..., 1])
    if cfg.inject_linear_phase:
        f = np.arange(1, cfg.F + 1, dtype=np.float64)
        rot = np.exp(1j * (np.asarray(slopes)[:, None] * f[None, :] + np.asarray(offsets)[:, None]))
        h *= rot[:, :, None, None]
    rssi = np.sqrt(np.mean(np.abs(h) ** 2, axis=(1, 2, 3)))
    return CsiTrace(
        timestamps_us=stamps_arr,
        h=h,
        rssi_norm=rssi,
        meta={"sim_config": cfg.to_dict(), "duration_us": int(duration_us), "packet_slots": keep[-1] + 1 if keep else 0},
    )


# --- camera / frames -----------------------------------------------------------------

@dataclass
class SilhouetteFrame:
    timestamp_us: int
    pixels: np.ndarray


def _camera_axes(scene: Scene) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cam = np.asarray(scene.cam_pos, dtype=np.float64)
    target = np.asarray(scene.look_at if scene.look_at is not None else (scene.room[0] / 2, scene.room[1] / 2))
    axis = target - cam
    axis = axis / np.hypot(*axis)
    right = np.array([axis[1], -axis[0]])
    return cam, axis, right


def project(scene: Scene, position, resolution: tuple[int, int]) -> tuple[float, float, float, float]:
    """Ellipse ``(cx, cy, semi_x, semi_y)`` in pixels for a target at ``position``.

    ``resolution`` is ``(W, H)``. Columns come from the lateral offset
    (orthographic); sizes and the vertical offset scale with inverse depth.
    """
    w, h = resolution
    cam, axis, right = _camera_axes(scene)
    rel = np.asarray(position, dtype=np.float64) - cam
    depth = max(float(rel @ axis), 0.05)
    lateral = float(rel @ right)
    view = scene.view_width_m if scene.view_width_m else float(max(scene.room))
    focal = scene.focal_rel * h
    height_px = scene.mover_extent_m * focal / depth
    cx = w / 2 + lateral * w / view
    cy = h / 2 + (scene.cam_height_m - scene.mover_extent_m / 2) * focal / depth
    return cx, cy, height_px / 4, height_px / 2


def render_background(scene: Scene, resolution: tuple[int, int]) -> np.ndarray:
    w, h = resolution
    px = np.full((h, w), scene.background_level)
    for f in scene.furniture:
        c0, c1 = int(round(f.x0 * w)), int(round(f.x1 * w))
        r0, r1 = int(round(f.y0 * h)), int(round(f.y1 * h))
        px[r0:r1, c0:c1] = f.value
    return px


def ellipse_mask(cx: float, cy: float, ax: float, ay: float, resolution: tuple[int, int]) -> np.ndarray:
    """Pixels whose centres fall inside the axis-aligned ellipse."""
    w, h = resolution
    xs = (np.arange(w) + 0.5 - cx) / ax
    ys = (np.arange(h) + 0.5 - cy) / ay
    return ys[:, None] ** 2 + xs[None, :] ** 2 <= 1.0


def render_frames(
    scene: Scene,
    fps: float,
    resolution: tuple[int, int],
    duration_us: int,
    include_mover: bool = True,
) -> list[SilhouetteFrame]:
    """Frames at ``fps`` over ``[0, duration_us)``; ``resolution`` is ``(W, H)``."""
    if fps <= 0:
        raise ConfigError(f"fps must be positive, got {fps}")
    w, h = resolution
    if w <= 0 or h <= 0:
        raise ConfigError(f"resolution must be positive, got {resolution}")
    bg = render_background(scene, resolution)
    count = int(np.ceil(duration_us * fps / 1e6))
    times = [int(round(i * 1e6 / fps)) for i in range(count)]
    times = [t for t in times if t < duration_us]
    pos, present = mover_state(scene, times) if include_mover else (None, np.zeros(len(times), bool))
    frames = []
    for i, t in enumerate(times):
        px = bg.copy()
        if include_mover and present[i]:
            cx, cy, ax, ay = project(scene, pos[i], resolution)
            px[ellipse_mask(cx, cy, ax, ay, resolution)] = scene.mover_value
        frames.append(SilhouetteFrame(t, px))
    return frames


def write_frames(frames: Sequence[SilhouetteFrame], out_dir: str | Path, subdir: str = "frames", index: str = "frames.jsonl") -> Path:
    """Write frames as ``<subdir>/frame_<ts>.pgm`` plus a JSONL index; returns the index path."""
    out_dir = Path(out_dir)
    (out_dir / subdir).mkdir(parents=True, exist_ok=True)
    idx_path = out_dir / index
    with open(idx_path, "w") as fh:
        for f in frames:
            rel = f"{subdir}/frame_{f.timestamp_us}.pgm"
            write_pgm(out_dir / rel, f.pixels)
            fh.write(json.dumps({"timestamp_us": f.timestamp_us, "path": rel}) + "\n")
    return idx_path
