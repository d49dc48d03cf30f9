"""Adam training loop with dropin-augmented fetches and a weighted L1 objective."""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .csi import CsiTrace, sample_planes, standardize_planes
from .errors import ConfigError, DataError
from .model import ModelConfig, Wi2ViModel, forward, init_model
from .sync import Dataset, DatasetSample, dropin_indices, fetch_rng, nearest_k
from .video import MIN_WEIGHT

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "lr", "train_l1", "eval_l1")
EVAL_DROPIN = ("fixed", "central")


@dataclass
class TrainConfig:
    lr0: float = 0.002
    lr_decay: float = 0.045
    decay_every: int = 5
    epochs: int = 200
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    k: int = 8
    shuffle: bool = False
    dtype: str = "float32"
    checkpoint_every: int = 10
    eval_dropin: str = "fixed"
    eval_seed: int = 1_000_003

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not 0 <= self.lr_decay < 1:
            raise ConfigError(f"lr_decay must lie in [0, 1), got {self.lr_decay}")
        if self.decay_every < 1 or self.epochs < 1 or self.batch_size < 1 or self.k < 1:
            raise ConfigError("decay_every, epochs, batch_size and k must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.eval_dropin not in EVAL_DROPIN:
            raise ConfigError(f"eval_dropin must be one of {EVAL_DROPIN}, got {self.eval_dropin!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from exc


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Multiplicative step decay: ``lr0 * (1 - lr_decay) ** (epoch // decay_every)``."""
    return cfg.lr0 * (1.0 - cfg.lr_decay) ** (epoch // cfg.decay_every)


# --- Adam ------------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def entries(self) -> dict[str, np.ndarray]:
        out = {f"adam.m/{k}": a for k, a in self.m.items()}
        out.update({f"adam.v/{k}": a for k, a in self.v.items()})
        out["adam.t"] = np.asarray(float(self.t))
        return out

    @classmethod
    def from_entries(cls, entries: dict[str, np.ndarray], dtype) -> "AdamState":
        m = {k[7:]: a.astype(dtype) for k, a in entries.items() if k.startswith("adam.m/")}
        v = {k[7:]: a.astype(dtype) for k, a in entries.items() if k.startswith("adam.v/")}
        return cls(m, v, int(entries["adam.t"]))


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    cfg: TrainConfig,
) -> None:
    """One bias-corrected Adam update applied to ``params`` in place.

    A missing gradient is treated as zero. Weight decay is decoupled.
    """
    state.t += 1
    c1 = 1.0 - cfg.beta1**state.t
    c2 = 1.0 - cfg.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise ConfigError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay:
            step = step + cfg.weight_decay * p
        p -= (lr * step).astype(p.dtype)


# --- data fetch ------------------------------------------------------------------------

class FeatureStore:
    """Per-sample input planes ``[N][C][F]`` computed once for the whole trace.

    A fetch then reduces to gathering ``k`` rows, which keeps per-epoch dropin
    redraws cheap.
    """

    def __init__(self, trace: CsiTrace, stats: tuple[float, float] | None, dtype=np.float64, chunk: int = 4096):
        n = len(trace)
        nf, nt, nr = trace.dims
        self.planes = np.empty((n, 2 * nt * nr, nf), dtype=dtype)
        for lo in range(0, n, chunk):
            sl = slice(lo, lo + chunk)
            self.planes[sl] = standardize_planes(sample_planes(trace.h[sl]), stats)

    def gather(self, indices: Sequence[int]) -> np.ndarray:
        """Input tensor ``[C][k][F]`` for the given trace indices (ascending)."""
        return self.planes[np.asarray(indices, dtype=np.int64)].transpose(1, 0, 2)


@dataclass
class Batch:
    x: np.ndarray  # [B, C, k, F]
    target: np.ndarray  # [B, H, W]
    weight: np.ndarray  # [B]
    mask: np.ndarray  # [B, H, W]

    def __len__(self) -> int:
        return self.x.shape[0]


def make_batch(
    store: FeatureStore,
    samples: Sequence[DatasetSample],
    k: int,
    rngs: Sequence[np.random.Generator] | None,
    dtype=np.float64,
) -> Batch:
    """Dropin plus feature gathering for each sample; ``rngs=None`` takes the central ``k``."""
    xs, ts, ws, ms = [], [], [], []
    for i, s in enumerate(samples):
        idx = np.asarray(s.ftn.csi_indices)
        pos = nearest_k(len(idx), k) if rngs is None else dropin_indices(len(idx), k, rngs[i])
        xs.append(store.gather(idx[pos]))
        ts.append(s.frame.frame.pixels)
        ws.append(max(s.frame.weight, MIN_WEIGHT))
        ms.append(s.frame.mask)
    return Batch(
        np.stack(xs).astype(dtype, copy=False),
        np.stack(ts).astype(dtype),
        np.asarray(ws, dtype=dtype),
        np.stack(ms).astype(dtype),
    )


def batch_loss(model: Wi2ViModel, batch: Batch) -> ad.Tensor:
    pred = forward(model, batch.x)
    return ad.mean(ad.weighted_l1(pred, batch.target, batch.weight, batch.mask))


def train_step(model: Wi2ViModel, batch: Batch, state: AdamState, lr: float, cfg: TrainConfig) -> float:
    """Forward, backward and one Adam update; returns the batch mean loss."""
    model.zero_grad()
    with ad.Tape() as tape:
        loss = batch_loss(model, batch)
    ad.backward(loss, tape)
    adam_step(model.state(), {k: p.grad for k, p in model.params.items()}, state, lr, cfg)
    return float(loss.data)


# --- evaluation ------------------------------------------------------------------------

@dataclass
class EvalResult:
    mean_l1: float
    per_sample: np.ndarray
    predictions: np.ndarray | None = None


Predictor = Callable[[np.ndarray, Sequence[DatasetSample]], np.ndarray]


def eval_rngs(cfg: TrainConfig, start: int, count: int) -> list[np.random.Generator] | None:
    if cfg.eval_dropin == "central":
        return None
    return [fetch_rng(cfg.eval_seed, 0, start + j) for j in range(count)]


def evaluate(
    model: Wi2ViModel | None,
    ds: Dataset,
    cfg: TrainConfig,
    store: FeatureStore | None = None,
    predictor: Predictor | None = None,
    keep_predictions: bool = False,
) -> EvalResult:
    """Weighted L1 over ``ds`` without touching parameters.

    Dropin uses a fixed seed (or the central ``k`` samples), so repeated calls
    agree exactly. ``predictor`` replaces the model, which is handy for
    baselines and test doubles.
    """
    if len(ds) == 0:
        raise DataError("cannot evaluate an empty dataset")
    if model is None and predictor is None:
        raise ConfigError("evaluate needs a model or a predictor")
    dtype = cfg.np_dtype
    store = store or FeatureStore(ds.trace, ds.normalization_stats, dtype)
    losses, preds = [], []
    for lo in range(0, len(ds), cfg.batch_size):
        chunk = ds.samples[lo : lo + cfg.batch_size]
        b = make_batch(store, chunk, cfg.k, eval_rngs(cfg, lo, len(chunk)), dtype)
        if predictor is not None:
            p = np.asarray(predictor(b.x, chunk), dtype=np.float64)
        else:
            p = forward(model, b.x).data.astype(np.float64)
        diff = np.abs(p - b.target) * b.mask
        per = b.weight.astype(np.float64) * diff.sum(axis=(1, 2)) / b.mask.sum(axis=(1, 2))
        losses.append(per)
        if keep_predictions:
            preds.append(p)
    per_sample = np.concatenate(losses)
    return EvalResult(float(per_sample.mean()), per_sample, np.concatenate(preds) if keep_predictions else None)


# --- training loop ---------------------------------------------------------------------

def write_history(path: Path, history: Sequence[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_FIELDS)
    for row in history:
        w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)


def read_history(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"epoch": int(r["epoch"]), **{k: float(r[k]) for k in HISTORY_FIELDS[1:]}}
            for r in csv.DictReader(fh)
        ]


def save_training_state(path: Path, model: Wi2ViModel, state: AdamState, cfg: TrainConfig, epoch: int, history) -> Path:
    entries = {k: p.data for k, p in model.params.items()}
    entries.update(state.entries())
    sidecar = {
        "epoch": epoch,
        "model_config": model.config.to_dict(),
        "train_config": cfg.to_dict(),
        "history": list(history),
    }
    return save_checkpoint(path, entries, sidecar)


def load_model(path: str | Path, dtype=None) -> tuple[Wi2ViModel, dict]:
    """Rebuild a model from a checkpoint and its sidecar."""
    entries, meta = load_checkpoint(path)
    if "model_config" not in meta:
        raise ConfigError(f"{path}: checkpoint sidecar lacks model_config")
    mcfg = ModelConfig.from_dict(meta["model_config"])
    if dtype is None:
        dtype = np.dtype(meta.get("train_config", {}).get("dtype", "float64"))
    model = init_model(mcfg, 0, dtype)
    model.load_state({k: entries[k] for k in model.params})
    return model, meta


def train(
    model: Wi2ViModel,
    train_ds: Dataset,
    cfg: TrainConfig,
    eval_ds: Dataset | None = None,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    max_epochs: int | None = None,
) -> tuple[Wi2ViModel, list[dict]]:
    """Run the epoch loop; returns the model and its per-epoch history.

    ``max_epochs`` stops early after that many epochs of this call (the
    schedule still follows ``cfg.epochs``), which simulates an interruption.
    """
    if len(train_ds) == 0:
        raise DataError("training set is empty")
    if cfg.k > train_ds.n:
        raise ConfigError(f"dropin width k={cfg.k} exceeds FTN width n={train_ds.n}")
    dtype = cfg.np_dtype
    model.astype(dtype)
    state = AdamState()
    history: list[dict] = []
    start = 0
    if resume is not None:
        entries, meta = load_checkpoint(resume)
        model.load_state({k: entries[k] for k in model.params})
        state = AdamState.from_entries(entries, dtype)
        start = int(meta["epoch"])
        history = list(meta.get("history", []))[:start]
        log.info("resuming from %s at epoch %d", resume, start)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    train_store = FeatureStore(train_ds.trace, train_ds.normalization_stats, dtype)
    eval_store = None
    if eval_ds is not None:
        same = eval_ds.trace is train_ds.trace and eval_ds.normalization_stats == train_ds.normalization_stats
        eval_store = train_store if same else FeatureStore(eval_ds.trace, eval_ds.normalization_stats, dtype)
    stop = cfg.epochs if max_epochs is None else min(cfg.epochs, start + max_epochs)
    n = len(train_ds)
    for epoch in range(start, stop):
        lr = lr_at(epoch, cfg)
        order = np.arange(n)
        if cfg.shuffle:
            order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            samples = [train_ds.samples[i] for i in idx]
            rngs = [fetch_rng(cfg.seed, epoch, int(i)) for i in idx]
            batch = make_batch(train_store, samples, cfg.k, rngs, dtype)
            total += train_step(model, batch, state, lr, cfg) * len(idx)
        train_l1 = total / n
        eval_l1 = evaluate(model, eval_ds, cfg, eval_store).mean_l1 if eval_ds is not None else float("nan")
        history.append({"epoch": epoch, "lr": lr, "train_l1": train_l1, "eval_l1": eval_l1})
        log.info("epoch %d lr %.6g train %.5f eval %.5f", epoch, lr, train_l1, eval_l1)
        if not np.isfinite(train_l1):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        if out is not None:
            write_history(out / "history.csv", history)
            done = epoch + 1
            if done == cfg.epochs or (cfg.checkpoint_every and done % cfg.checkpoint_every == 0) or done == stop:
                save_training_state(out / f"ckpt_{done}.w2vp", model, state, cfg, done, history)
    return model, history
