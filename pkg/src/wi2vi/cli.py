"""Command-line pipeline: simulate, preprocess, sync, train, generate, eval.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .csi import read_trace, write_trace
from .errors import ConfigError, DataError
from .metrics import centroid_hits, percentiles
from .model import init_model, render
from .prep import prepare_background, prepare_frames, read_clip, read_prepared, write_prepared
from .sim import render_frames, simulate_csi, write_frames
from .sync import build_dataset, load_dataset, max_lag_us, save_dataset, split
from .train import TrainConfig, evaluate, load_model, train
from .video import GrayFrame, read_pgm, write_pgm

log = logging.getLogger("wi2vi")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def _emit(msg: str) -> None:
    print(msg, flush=True)


def _require_dir(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"{what} directory not found: {p}")
    return p


# --- commands --------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out_dir: str | Path) -> None:
    out = Path(out_dir)
    trace = simulate_csi(cfg.scene, cfg.sim, cfg.duration_us)
    frames = render_frames(cfg.scene, cfg.fps, cfg.resolution, cfg.duration_us)
    bg_dur = int(np.ceil(cfg.background_frames * 1e6 / cfg.fps))
    empty = render_frames(cfg.scene, cfg.fps, cfg.resolution, bg_dur, include_mover=False)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(out / "trace.csit", trace)
    write_frames(frames, out)
    write_frames(empty, out, subdir="background", index="background.jsonl")
    (out / "config.json").write_text(json.dumps(cfg.raw, indent=1))
    _emit(f"simulated {len(trace)} CSI samples and {len(frames)} frames into {out}")


def cmd_preprocess(cfg: RunConfig, in_dir: str | Path, out_dir: str | Path) -> None:
    src = _require_dir(in_dir, "input")
    frames = read_clip(src / "frames.jsonl")
    bg_index = Path(cfg.prep.background_clip) if cfg.prep.background_clip else src / "background.jsonl"
    background = prepare_background(read_clip(bg_index), cfg.prep) if bg_index.exists() else None
    prepared = prepare_frames(frames, cfg.prep, cfg.mode, background)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_prepared(prepared, out)
    if background is not None:
        write_pgm(out / "background.pgm", background.pixels)
    shutil.copyfile(src / "trace.csit", out / "trace.csit")
    _emit(f"preprocessed {len(prepared)} frames ({cfg.mode}) at {cfg.prep.out_w}x{cfg.prep.out_h}")


def cmd_sync(cfg: RunConfig, in_dir: str | Path, out_dir: str | Path) -> None:
    src = _require_dir(in_dir, "input")
    frames = read_prepared(src / "frames.jsonl")
    trace = read_trace(src / "trace.csit")
    bg = GrayFrame(0, read_pgm(src / "background.pgm")) if (src / "background.pgm").exists() else None
    ds = build_dataset(frames, trace, cfg.n, cfg.mode, cfg.train_fraction, cfg.k, bg)
    tr, te = split(ds, cfg.train_fraction)
    save_dataset(ds, out_dir)
    _emit(f"FTN width n={ds.n}, dropin k={ds.k_default}")
    _emit(f"boundary frames dropped: {ds.meta['boundary_dropped']}")
    _emit(f"samples: {len(ds)} (train {len(tr)} / test {len(te)})")
    _emit(f"max CSI lag: {max_lag_us(ds) / 1000:.1f} ms")


def _split_dataset(dataset_dir):
    ds = load_dataset(_require_dir(dataset_dir, "dataset"))
    fraction = float(ds.meta.get("train_fraction", 0.95))
    return ds, split(ds, fraction)


def cmd_train(cfg: RunConfig, dataset_dir, out_dir, resume=None) -> dict:
    ds, (tr, te) = _split_dataset(dataset_dir)
    nf, nt, nr = ds.trace.dims
    mcfg = cfg.model_config(2 * nt * nr, nf)
    model = init_model(mcfg, cfg.seed, cfg.train.np_dtype)
    _, history = train(model, tr, cfg.train, te, out_dir, resume)
    summary = {
        "epochs": len(history),
        "final_train_l1": history[-1]["train_l1"],
        "final_eval_l1": history[-1]["eval_l1"],
        "checkpoint": f"ckpt_{history[-1]['epoch'] + 1}.w2vp",
    }
    Path(out_dir, "summary.json").write_text(json.dumps(summary, indent=1))
    _emit(f"trained {len(history)} epochs; final eval weighted L1 {summary['final_eval_l1']:.5f}")
    return summary


def _load_for_inference(checkpoint, cfg: RunConfig | None):
    model, meta = load_model(checkpoint)
    tcfg = cfg.train if cfg is not None else TrainConfig.from_dict(meta.get("train_config", {}))
    return model, tcfg


def evaluate_checkpoint(checkpoint, dataset_dir, cfg: RunConfig | None = None) -> dict:
    """Weighted L1 statistics and centroid hit rate on the test split."""
    model, tcfg = _load_for_inference(checkpoint, cfg)
    ds, (_, te) = _split_dataset(dataset_dir)
    res = evaluate(model, te, tcfg, keep_predictions=True)
    truths = [s.frame.frame.pixels for s in te.samples]
    bg = None
    if ds.mode == "full_scene" and ds.background is not None:
        bg = ds.background.pixels
    # a truth frame within quantization of the background holds no silhouette
    rate, scored = centroid_hits(res.predictions, truths, background=bg, min_truth=0.05 if bg is not None else 0.0)
    return {
        "mean_l1": res.mean_l1,
        **percentiles(res.per_sample),
        "centroid_hit_rate": rate,
        "centroid_frames": scored,
        "test_samples": len(te),
    }


def cmd_eval(checkpoint, dataset_dir, cfg: RunConfig | None = None, out_dir=None) -> dict:
    metrics = evaluate_checkpoint(checkpoint, dataset_dir, cfg)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        Path(out_dir, "metrics.json").write_text(json.dumps(metrics, indent=1))
    _emit(json.dumps(metrics, indent=1))
    return metrics


def cmd_generate(checkpoint, dataset_dir, out_dir, cfg: RunConfig | None = None) -> int:
    """Write predicted, ground-truth and difference frames for every test sample."""
    model, tcfg = _load_for_inference(checkpoint, cfg)
    _, (_, te) = _split_dataset(dataset_dir)
    res = evaluate(model, te, tcfg, keep_predictions=True)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "generated.jsonl", "w") as fh:
        for s, p in zip(te.samples, res.predictions):
            ts = s.frame_timestamp_us
            pred = render(p)
            truth = s.frame.frame.pixels
            names = {kind: f"{kind}_{ts}.pgm" for kind in ("pred", "truth", "diff")}
            write_pgm(out / names["pred"], pred)
            write_pgm(out / names["truth"], truth)
            write_pgm(out / names["diff"], np.abs(pred - truth))
            fh.write(json.dumps({"timestamp_us": ts, **names}) + "\n")
    _emit(f"generated {len(te)} frames into {out}")
    return len(te)


# --- entry point -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wi2vi", description="Generate video frames from WiFi CSI.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run configuration (JSON)")
        p.add_argument("--seed", type=int, help="override the configuration seed")

    p = sub.add_parser("simulate", help="synthesize a CSI trace and silhouette video")
    common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", help="grayscale, downsample and weight the video frames")
    common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sync", help="pair frames with CSI neighbourhoods and save the dataset")
    common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the network")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("generate", help="render predicted frames for the test split")
    common(p, config_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="print test-split metrics")
    common(p, config_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="also write metrics.json here")
    return ap


def _dispatch(args) -> None:
    cfg = None
    if args.config:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    elif args.seed is not None:
        raise ConfigError("--seed needs --config")
    if args.command == "simulate":
        cmd_simulate(cfg, args.out)
    elif args.command == "preprocess":
        cmd_preprocess(cfg, args.in_dir, args.out)
    elif args.command == "sync":
        cmd_sync(cfg, args.in_dir, args.out)
    elif args.command == "train":
        cmd_train(cfg, args.dataset, args.out, args.resume)
    elif args.command == "generate":
        cmd_generate(args.checkpoint, args.dataset, args.out, cfg)
    elif args.command == "eval":
        cmd_eval(args.checkpoint, args.dataset, cfg, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
