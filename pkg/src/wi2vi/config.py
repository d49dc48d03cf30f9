"""Single JSON run configuration covering simulation through training.

The document is validated against :data:`SCHEMA` before any work starts;
unknown keys are rejected at every level. One top-level ``seed`` drives the
simulator, model initialization and dropin draws.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .model import ModelConfig
from .prep import PrepConfig
from .sim import Scene, SimConfig
from .train import TrainConfig

_num = {"type": "number"}
_int = {"type": "integer"}
_bool = {"type": "boolean"}
_point = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_pair_int = {"type": "array", "items": _int, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required: tuple[str, ...] = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCENE_SCHEMA = _obj(
    {
        "room": _point,
        "tx_pos": _point,
        "rx_pos": _point,
        "cam_pos": _point,
        "look_at": {"anyOf": [_point, {"type": "null"}]},
        "static_paths": {
            "type": "array",
            "items": _obj({"alpha": _num, "tau_ns": _num, "aod_deg": _num, "aoa_deg": _num}, ("alpha", "tau_ns")),
        },
        "mover": _obj(
            {
                "trajectory": {
                    "type": "array",
                    "minItems": 1,
                    "items": _obj({"time_us": _int, "position": _point, "present": _bool}, ("time_us", "position")),
                },
                "loop": _bool,
                "extent_m": _num,
                "reflect_gain": _num,
                "value": _num,
            },
            ("trajectory",),
        ),
        "mover_extent_m": _num,
        "direct_alpha": _num,
        "reflect_gain": _num,
        "view_width_m": {"anyOf": [_num, {"type": "null"}]},
        "focal_rel": _num,
        "cam_height_m": _num,
        "background_level": _num,
        "mover_value": _num,
        "furniture": {
            "type": "array",
            "items": _obj({"x0": _num, "y0": _num, "x1": _num, "y1": _num, "value": _num}, ("x0", "y0", "x1", "y1", "value")),
        },
    }
)

SIM_SCHEMA = _obj(
    {
        "F": _int,
        "subcarrier_spacing_hz": _num,
        "carrier_hz": _num,
        "T": _int,
        "R": _int,
        "antenna_spacing_m": _num,
        "packet_interval_us": _int,
        "jitter_us": _int,
        "drop_prob": _num,
        "noise_sigma": _num,
        "inject_linear_phase": _bool,
    }
)

VIDEO_SCHEMA = _obj({"fps": _num, "resolution": _pair_int, "background_frames": _int})

PREP_SCHEMA = _obj(
    {
        "downsample": _int,
        "out_w": _int,
        "out_h": _int,
        "threshold": _num,
        "mask_rects": {
            "type": "array",
            "items": _obj({"x": _int, "y": _int, "w": _int, "h": _int, "weight": _num}, ("x", "y", "w", "h", "weight")),
        },
        "background_clip": {"type": ["string", "null"]},
    }
)

SYNC_SCHEMA = _obj({"n": _int, "k": _int, "train_fraction": _num})

MODEL_SCHEMA = _obj(
    {
        "encoder_channels": {"type": "array", "items": _int},
        "encoder_kernels": {"type": "array", "items": _pair_int},
        "encoder_strides": {"type": "array", "items": _pair_int},
        "bottleneck_dim": {"type": ["integer", "null"]},
        "translator_channels": _int,
        "translator_blocks": _int,
        "decoder_channels": _int,
        "resnet_blocks": _int,
        "upsample_stages": _int,
        "upsample_channels": {"type": "array", "items": _int},
        "leaky_slope": _num,
        "norm_eps": _num,
        "residual": _bool,
    }
)

TRAIN_SCHEMA = _obj(
    {
        "lr0": _num,
        "lr_decay": _num,
        "decay_every": _int,
        "epochs": _int,
        "batch_size": _int,
        "beta1": _num,
        "beta2": _num,
        "eps": _num,
        "weight_decay": _num,
        "shuffle": _bool,
        "dtype": {"enum": ["float32", "float64"]},
        "checkpoint_every": _int,
        "eval_dropin": {"enum": ["fixed", "central"]},
        "eval_seed": _int,
    }
)

SCHEMA = _obj(
    {
        "mode": {"enum": ["dynamics", "full_scene"]},
        "seed": _int,
        "duration_us": _int,
        "scene": SCENE_SCHEMA,
        "sim": SIM_SCHEMA,
        "video": VIDEO_SCHEMA,
        "preprocess": PREP_SCHEMA,
        "sync": SYNC_SCHEMA,
        "model": MODEL_SCHEMA,
        "train": TRAIN_SCHEMA,
    },
    ("scene",),
)


@dataclass
class RunConfig:
    mode: str
    seed: int
    duration_us: int
    scene: Scene
    sim: SimConfig
    fps: float
    resolution: tuple[int, int]
    background_frames: int
    prep: PrepConfig
    n: int
    k: int
    train_fraction: float
    model: dict
    train: TrainConfig
    raw: dict = field(default_factory=dict)

    def model_config(self, in_channels: int, F: int) -> ModelConfig:
        """Model configuration matched to the dataset's input geometry."""
        return ModelConfig.from_dict(
            {**self.model, "in_channels": in_channels, "k": self.k, "F": F, "out": (self.prep.out_h, self.prep.out_w)}
        )

    def with_seed(self, seed: int) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = seed
        return parse_config(raw)


def parse_config(doc: dict) -> RunConfig:
    """Validate ``doc`` and build the typed configuration; raises :class:`ConfigError`."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc
    seed = int(doc.get("seed", 0))
    video = doc.get("video", {})
    sync = doc.get("sync", {})
    n, k = int(sync.get("n", 29)), int(sync.get("k", 8))
    if not 1 <= k <= n:
        raise ConfigError(f"sync.k must satisfy 1 <= k <= n, got k={k}, n={n}")
    fraction = float(sync.get("train_fraction", 0.95))
    if not 0 < fraction < 1:
        raise ConfigError(f"sync.train_fraction must lie in (0, 1), got {fraction}")
    fps = float(video.get("fps", 30.0))
    if fps <= 0:
        raise ConfigError(f"video.fps must be positive, got {fps}")
    resolution = tuple(video.get("resolution", (64, 48)))
    if min(resolution) < 1:
        raise ConfigError(f"video.resolution must be positive, got {resolution}")
    duration = int(doc.get("duration_us", 300_000_000))
    if duration <= 0:
        raise ConfigError("duration_us must be positive")
    sim = SimConfig.from_dict({**doc.get("sim", {}), "rng_seed": seed})
    prep = PrepConfig(**doc.get("preprocess", {}))
    train = TrainConfig.from_dict({**doc.get("train", {}), "seed": seed, "k": k})
    cfg = RunConfig(
        mode=doc.get("mode", "dynamics"),
        seed=seed,
        duration_us=duration,
        scene=Scene.from_dict(doc["scene"]),
        sim=sim,
        fps=fps,
        resolution=(int(resolution[0]), int(resolution[1])),
        background_frames=int(video.get("background_frames", 10)),
        prep=prep,
        n=n,
        k=k,
        train_fraction=fraction,
        model=dict(doc.get("model", {})),
        train=train,
        raw=copy.deepcopy(doc),
    )
    # the model must build for this input geometry before any work starts
    cfg.model_config(2 * sim.T * sim.R, sim.F)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc)
