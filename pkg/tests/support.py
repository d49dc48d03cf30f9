"""Small fixtures shared by several test modules."""

from __future__ import annotations

import numpy as np

from wi2vi.csi import CsiTrace
from wi2vi.sim import Scene, SimConfig, simulate_csi
from wi2vi.sync import build_dataset
from wi2vi.video import GrayFrame, WeightedFrame


def blank_frames(timestamps, size=(2, 3), value=0.0):
    return [WeightedFrame(GrayFrame(int(t), np.full(size, value))) for t in timestamps]


def random_trace(n, rng, dims=(2, 1, 1), spacing=(1, 40)):
    ts = np.cumsum(rng.integers(*spacing, n)) + int(rng.integers(0, 1000))
    h = rng.standard_normal((n, *dims)) + 1j * rng.standard_normal((n, *dims))
    return CsiTrace(ts, h)


def brute_force_ftn(ts, frame_ts, n):
    """Sort every sample by (distance, index) and keep the first n."""
    ranked = sorted(range(len(ts)), key=lambda i: (abs(int(ts[i]) - frame_ts), i))
    return tuple(sorted(ranked[:n]))


def reference_rate_dataset(duration_s=60, fps=6, n=29, seed=3):
    """Simulated 100 packets/s trace (with jitter and drops) paired with frames at ``fps``."""
    cfg = SimConfig(F=8, T=1, R=1, jitter_us=1000, drop_prob=0.01, noise_sigma=0.01, rng_seed=seed)
    trace = simulate_csi(Scene(), cfg, duration_s * 1_000_000)
    frame_ts = np.round(np.arange(0, duration_s, 1 / fps) * 1e6).astype(np.int64)
    return build_dataset(blank_frames(frame_ts), trace, n=n)


def tiny_model_config(**kw):
    """Smallest configuration that keeps every stage non-degenerate (no 1x1 feature maps)."""
    from wi2vi.model import ModelConfig

    base = dict(
        in_channels=2,
        k=2,
        F=8,
        encoder_channels=(3, 4, 4, 5, 6),
        encoder_strides=((1, 1), (1, 2), (1, 1), (1, 2), (1, 1)),
        out=(8, 8),
        decoder_channels=4,
        translator_channels=4,
        upsample_channels=(3, 2),
    )
    base.update(kw)
    return ModelConfig(**base)


def full_graph_grad_error(seed=0, entries=4):
    """Worst finite-difference mismatch over sampled entries of every parameter of a tiny model."""
    from wi2vi import autodiff as ad
    from wi2vi.model import forward, init_model

    from .gradcheck import check_grads

    model = init_model(tiny_model_config(), seed=1)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 2, 8))
    target = rng.random((2, 8, 8))
    weight = np.array([1.0, 0.7])
    loss = lambda: ad.mean(ad.weighted_l1(forward(model, x), target, weight, np.ones((8, 8))))
    return check_grads(loss, model.parameters(), max_entries=entries, seed=seed, h=1e-5, points=5, retry=True)


def tiny_dataset(count=12, seed=0, n=4, k=2, size=(8, 8)):
    """Dataset matching ``tiny_model_config``: F=8, one antenna pair, 8x8 frames.

    Each frame is a bright square whose position follows the CSI amplitude, so
    there is something learnable.
    """
    rng = np.random.default_rng(seed)
    n_csi = count * 3 + 2 * n
    ts = np.arange(n_csi) * 100
    h = (rng.standard_normal((n_csi, 8, 1, 1)) + 1j * rng.standard_normal((n_csi, 8, 1, 1))) * 0.3 + 1
    trace = CsiTrace(ts, h)
    frames = []
    for j in range(count):
        t = int(ts[n + 3 * j])
        px = np.zeros(size)
        r = int(np.clip(np.abs(h[n + 3 * j, 0, 0, 0]) * 3, 0, size[0] - 2))
        px[r : r + 2, 2:5] = 0.9
        frames.append(WeightedFrame(GrayFrame(t, px), weight=0.8))
    return build_dataset(frames, trace, n=n, k_default=k)


def small_run_config(mode="dynamics", seed=5, epochs=2):
    """A run configuration small enough for an end-to-end CLI pass in seconds."""
    return {
        "mode": mode,
        "seed": seed,
        "duration_us": 30_000_000,
        "scene": {
            "room": [6.0, 4.0],
            "tx_pos": [0.5, 2.0],
            "rx_pos": [5.5, 2.1],
            "cam_pos": [5.8, 2.0],
            "static_paths": [{"alpha": 0.4, "tau_ns": 30.0, "aod_deg": 20.0, "aoa_deg": -30.0}],
            "mover": {
                "trajectory": [
                    {"time_us": 0, "position": [1.5, 1.0]},
                    {"time_us": 5_000_000, "position": [1.5, 3.0]},
                    {"time_us": 10_000_000, "position": [3.5, 3.0]},
                    {"time_us": 15_000_000, "position": [1.5, 1.0]},
                ],
                "loop": True,
            },
        },
        "sim": {"F": 8, "T": 1, "R": 2, "drop_prob": 0.01},
        "video": {"fps": 10, "resolution": [32, 24], "background_frames": 3},
        "preprocess": {"downsample": 2, "out_w": 16, "out_h": 12},
        "sync": {"n": 9, "k": 4, "train_fraction": 0.9},
        "model": {
            "encoder_channels": [4, 4, 6, 6, 8],
            "encoder_strides": [[1, 1], [1, 2], [1, 1], [2, 2], [1, 1]],
            "translator_channels": 4,
            "translator_blocks": 1,
            "decoder_channels": 4,
            "resnet_blocks": 1,
            "upsample_channels": [4, 4],
        },
        "train": {"epochs": epochs, "batch_size": 16, "dtype": "float64", "checkpoint_every": 1},
    }
