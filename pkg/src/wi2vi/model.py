"""Three-stage CSI-to-frame network: encoder, domain translator, frame decoder.

Shapes for the default configuration (input ``[18][8][56]``)::

    encoder     (8,56) -> (8,28) -> (8,14) -> (4,7) -> (2,4)   x128 = 1024
    translator  1024 -> 341 -> 64*6*8, then three 3x3 conv blocks at 6x8
    decoder     three residual blocks at 6x8, two upsample stages to 24x32,
                final 1-channel 3x3 conv with a linear output
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


def _pairs(v) -> tuple[tuple[int, int], ...]:
    return tuple((int(a), int(b)) for a, b in v)


@dataclass
class ModelConfig:
    in_channels: int = 18
    k: int = 8
    F: int = 56
    encoder_channels: tuple[int, ...] = (32, 48, 64, 96, 128)
    encoder_kernels: tuple[tuple[int, int], ...] = ((3, 3),) * 5
    encoder_strides: tuple[tuple[int, int], ...] = ((1, 1), (1, 2), (1, 2), (2, 2), (2, 2))
    bottleneck_dim: int | None = None
    translator_channels: int = 64
    translator_blocks: int = 3
    decoder_channels: int = 64
    resnet_blocks: int = 3
    upsample_stages: int = 2
    upsample_channels: tuple[int, ...] = (16, 8)
    out: tuple[int, int] = (24, 32)
    leaky_slope: float = 0.2
    norm_eps: float = 1e-5
    residual: bool = True

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.encoder_kernels = _pairs(self.encoder_kernels)
        self.encoder_strides = _pairs(self.encoder_strides)
        self.upsample_channels = tuple(int(c) for c in self.upsample_channels)
        self.out = (int(self.out[0]), int(self.out[1]))
        n = len(self.encoder_channels)
        if n == 0 or len(self.encoder_kernels) != n or len(self.encoder_strides) != n:
            raise ConfigError("encoder channels, kernels and strides must have equal, non-zero length")
        if len(self.upsample_channels) != self.upsample_stages:
            raise ConfigError(
                f"upsample_channels has {len(self.upsample_channels)} entries for {self.upsample_stages} stages"
            )
        if self.translator_blocks and self.translator_channels != self.decoder_channels:
            raise ConfigError("translator_channels must equal decoder_channels for the residual stage")
        scale = 2**self.upsample_stages
        if self.out[0] % scale or self.out[1] % scale:
            raise ConfigError(f"output {self.out} is not divisible by 2^{self.upsample_stages}")
        try:
            self.encoder_shapes()
        except ValueError as exc:
            raise ConfigError(f"encoder shape chain breaks: {exc}") from exc
        if self.bottleneck_dim is None:
            self.bottleneck_dim = int(round(self.latent_dim / 3))
        if not self.latent_dim / 4 <= self.bottleneck_dim <= self.latent_dim / 2:
            raise ConfigError(
                f"bottleneck_dim {self.bottleneck_dim} outside [latent/4, latent/2] for latent {self.latent_dim}"
            )

    def encoder_shapes(self) -> list[tuple[int, int, int]]:
        """``(C, H, W)`` after each encoder block, starting with the input."""
        shapes = [(self.in_channels, self.k, self.F)]
        for c, (kh, kw), (sh, sw) in zip(self.encoder_channels, self.encoder_kernels, self.encoder_strides):
            _, h, w = shapes[-1]
            shapes.append((c, ad.conv_output_size(h, kh, sh, kh // 2), ad.conv_output_size(w, kw, sw, kw // 2)))
        return shapes

    @property
    def latent_dim(self) -> int:
        c, h, w = self.encoder_shapes()[-1]
        return c * h * w

    @property
    def base(self) -> tuple[int, int, int]:
        s = 2**self.upsample_stages
        return self.decoder_channels, self.out[0] // s, self.out[1] // s

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from exc


@dataclass
class Wi2ViModel:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def astype(self, dtype) -> "Wi2ViModel":
        for p in self.params.values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if list(state) != list(self.params):
            raise ConfigError("parameter names differ from the model layout")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ConfigError(f"parameter {k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.data.dtype)

    def checksum(self) -> float:
        return float(sum(np.sum(np.abs(p.data), dtype=np.float64) for p in self.params.values()))

    def __call__(self, x, residual: bool | None = None):
        return forward(self, x, residual=residual)


# --- initialization --------------------------------------------------------------------

def _layout(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Ordered ``(name, shape, kind)`` of every parameter."""
    out: list[tuple[str, tuple[int, ...], str]] = []

    def conv_block(prefix, c_in, c_out, kh=3, kw=3, norm=True):
        out.append((f"{prefix}.w", (c_out, c_in, kh, kw), "glorot"))
        out.append((f"{prefix}.b", (c_out,), "zeros"))
        if norm:
            out.append((f"{prefix}.gamma", (c_out,), "ones"))
            out.append((f"{prefix}.beta", (c_out,), "zeros"))

    shapes = cfg.encoder_shapes()
    for i, (kh, kw) in enumerate(cfg.encoder_kernels):
        conv_block(f"enc{i}", shapes[i][0], shapes[i + 1][0], kh, kw)
    c0, h0, w0 = cfg.base
    out.append(("fc1.w", (cfg.bottleneck_dim, cfg.latent_dim), "glorot"))
    out.append(("fc1.b", (cfg.bottleneck_dim,), "zeros"))
    out.append(("fc2.w", (c0 * h0 * w0, cfg.bottleneck_dim), "glorot"))
    out.append(("fc2.b", (c0 * h0 * w0,), "zeros"))
    c = c0
    for i in range(cfg.translator_blocks):
        conv_block(f"tr{i}", c, cfg.translator_channels)
        c = cfg.translator_channels
    if c != c0:
        raise ConfigError("translator_channels must equal decoder_channels for the residual stage")
    for i in range(cfg.resnet_blocks):
        conv_block(f"res{i}.a", c, c)
        conv_block(f"res{i}.b", c, c)
    for i, cu in enumerate(cfg.upsample_channels):
        conv_block(f"up{i}", c, cu)
        c = cu
    conv_block("out", c, 1, norm=False)
    return out


def init_model(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> Wi2ViModel:
    """Glorot-uniform weights, zero biases, unit gamma, zero beta."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, kind in _layout(cfg):
        if kind == "glorot":
            if len(shape) == 4:
                rf = shape[2] * shape[3]
                fan_in, fan_out = shape[1] * rf, shape[0] * rf
            else:
                fan_in, fan_out = shape[1], shape[0]
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-lim, lim, size=shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = ad.parameter(data.astype(dtype), name)
    return Wi2ViModel(cfg, params)


# --- forward stages --------------------------------------------------------------------

def _conv(model, prefix, x, stride=(1, 1)):
    w = model.params[f"{prefix}.w"]
    pad = (w.shape[2] // 2, w.shape[3] // 2)
    return ad.conv2d(x, w, model.params[f"{prefix}.b"], stride=stride, padding=pad)


def _norm(model, prefix, x):
    p = model.params
    return ad.instance_norm(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"], eps=model.config.norm_eps)


def _block(model, prefix, x, stride=(1, 1)):
    return ad.relu(_norm(model, prefix, _conv(model, prefix, x, stride)))


def _check_input(model: Wi2ViModel, x: Tensor) -> None:
    cfg = model.config
    want = (cfg.in_channels, cfg.k, cfg.F)
    if tuple(x.shape[-3:]) != want or x.data.ndim not in (3, 4):
        raise ConfigError(f"model input must be {list(want)} or batched, got {list(x.shape)}")


def encoder_forward(model: Wi2ViModel, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    _check_input(model, x)
    for i, stride in enumerate(model.config.encoder_strides):
        x = _block(model, f"enc{i}", x, stride)
    return x


def translator_forward(model: Wi2ViModel, latent: Tensor) -> Tensor:
    cfg = model.config
    batched = latent.data.ndim == 4
    n = latent.shape[0] if batched else None
    flat = ad.reshape(latent, (n, cfg.latent_dim) if batched else (cfg.latent_dim,))
    p = model.params
    z = ad.leaky_relu(ad.linear(flat, p["fc1.w"], p["fc1.b"]), cfg.leaky_slope)
    z = ad.linear(z, p["fc2.w"], p["fc2.b"])
    z = ad.reshape(z, ((n,) if batched else ()) + cfg.base)
    for i in range(cfg.translator_blocks):
        z = _block(model, f"tr{i}", z)
    return z


def residual_block(model: Wi2ViModel, prefix: str, x: Tensor, residual: bool = True) -> Tensor:
    y = _block(model, f"{prefix}.a", x)
    y = _norm(model, f"{prefix}.b", _conv(model, f"{prefix}.b", y))
    return ad.relu(ad.add(y, x) if residual else y)


def decoder_forward(model: Wi2ViModel, z: Tensor, residual: bool | None = None) -> Tensor:
    cfg = model.config
    residual = cfg.residual if residual is None else residual
    for i in range(cfg.resnet_blocks):
        z = residual_block(model, f"res{i}", z, residual)
    for i in range(cfg.upsample_stages):
        z = _block(model, f"up{i}", ad.upsample2x(z))
    y = _conv(model, "out", z)
    batched = y.data.ndim == 4
    return ad.reshape(y, ((y.shape[0],) if batched else ()) + cfg.out)


def forward(model: Wi2ViModel, x, residual: bool | None = None) -> Tensor:
    """Predicted frame ``[H][W]`` (or ``[N][H][W]`` for a batch) from CSI features."""
    return decoder_forward(model, translator_forward(model, encoder_forward(model, x)), residual)


def render(pred: np.ndarray) -> np.ndarray:
    """Clamp a raw prediction to the displayable [0, 1] range."""
    return np.clip(pred, 0.0, 1.0)


def save_config(path: str | Path, cfg: ModelConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1))


def load_config(path: str | Path) -> ModelConfig:
    return ModelConfig.from_dict(json.loads(Path(path).read_text()))
