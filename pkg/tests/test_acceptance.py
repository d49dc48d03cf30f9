"""Acceptance suite: one test (or group) per numbered criterion.

Criteria 7 to 9 train the default desk-scale model for 200 epochs three
times, which takes hours on a single core. Set ``WI2VI_ACCEPTANCE_DIR`` to a
directory to keep those runs between sessions; completed runs found there
are reused for criteria 7 and 8, while criterion 9 always trains afresh.
"""

from __future__ import annotations

import math
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from wi2vi import autodiff as ad
from wi2vi.cli import cmd_preprocess, cmd_simulate, cmd_sync, cmd_train, evaluate_checkpoint
from wi2vi.config import load_config
from wi2vi.csi import linear_sanitize, sanitize_phase
from wi2vi.csi import CsiTrace
from wi2vi.metrics import median_frame
from wi2vi.model import init_model, render
from wi2vi.sim import Scene, SimConfig, mover_state, simulate_csi
from wi2vi.sync import (
    build_dataset,
    build_ftn,
    dropin_indices,
    dropin_matrix,
    ftn_overlaps,
    load_dataset,
    max_lag_us,
    split,
)
from wi2vi.train import AdamState, TrainConfig, adam_step, evaluate, load_model, lr_at, read_history, train

from .gradcheck import check_grads
from .support import blank_frames, brute_force_ftn, full_graph_grad_error, random_trace

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# pinned tolerances
SANITIZE_REL = 1e-12
CONST_ABS = 1e-12
DROPIN_FREQ_TOL = 0.02
MAX_LAG_US = 160_000
OVERLAP_RANGE = (0.40, 0.60)
GRAD_REL = 1e-4
LR_REFERENCE = {0: 0.002, 5: 0.00191, 10: 0.0018241}
LR_PRINT_SLACK = 5e-8  # half a unit in the last printed digit of the reference values
ADAM_TARGET = 1e-3
ADAM_STEPS = 2000
ADAM_LR = 0.01
L1_RATIO = 0.6
HIT_RATE_DYNAMICS = 0.70
HIT_RATE_FULL = 0.60
EMPTY_SCENE_L1 = 0.05


def literal_sanitize(phi):
    F = len(phi)
    a1 = (phi[F - 1] - phi[0]) / (2 * math.pi * F)
    a0 = sum(phi) / F
    return [phi[f - 1] - (a1 * f + a0) for f in range(1, F + 1)]


# --- criterion 1 ------------------------------------------------------------------------

def test_criterion_1_sanitization(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_const = 0.0
    for F in (8, 56):
        for d in rng.uniform(-20, 20, 50):
            worst_const = max(worst_const, float(np.max(np.abs(sanitize_phase(np.full(F, d))))))
    worst_rel = 0.0
    for F in (8, 56):
        for _ in range(1000):
            phi = rng.uniform(-4 * math.pi, 4 * math.pi, F)
            ref = np.array(literal_sanitize(list(phi)))
            got = linear_sanitize(phi)
            worst_rel = max(worst_rel, float(np.max(np.abs(got - ref)) / np.max(np.abs(ref))))
    elapsed = time.perf_counter() - t0
    ok = worst_const < CONST_ABS and worst_rel < SANITIZE_REL and elapsed < 1.0
    criterion(1, ok, f"const max {worst_const:.1e}, oracle rel {worst_rel:.1e}, {elapsed:.2f} s")
    assert worst_const < CONST_ABS
    assert worst_rel < SANITIZE_REL
    assert elapsed < 1.0


# --- criterion 2 ------------------------------------------------------------------------

def test_criterion_2_dropin(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    counts = np.zeros(5)
    distinct = True
    for _ in range(10_000):
        sel = dropin_indices(5, 2, rng)
        m = dropin_matrix(sel, 5)
        distinct &= bool(m.sum(axis=0).tolist() == [1, 1] and m.sum(axis=1).max() == 1)
        counts[sel] += 1
    freq = counts / 10_000
    reproduced = []
    for target, expected in (([0, 2], [[1, 0], [0, 0], [0, 1]]), ([0, 1], [[1, 0], [0, 1], [0, 0]])):
        seed = next(s for s in range(10_000) if dropin_indices(3, 2, np.random.default_rng(s)).tolist() == target)
        sel = dropin_indices(3, 2, np.random.default_rng(seed))
        reproduced.append(dropin_matrix(sel, 3).tolist() == expected)
    elapsed = time.perf_counter() - t0
    freq_ok = bool(np.all(np.abs(freq - 0.4) <= DROPIN_FREQ_TOL))
    ok = freq_ok and distinct and all(reproduced) and elapsed < 1.0
    criterion(2, ok, f"freq {np.round(freq, 4).tolist()}, distinct {distinct}, matrices {reproduced}, {elapsed:.2f} s")
    assert freq_ok and distinct and all(reproduced)
    assert elapsed < 1.0


# --- criterion 3 ------------------------------------------------------------------------

def test_criterion_3_ftn(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(1000):
        tr = random_trace(int(rng.integers(40, 120)), rng)
        ts = tr.timestamps_us
        n = int(rng.integers(1, 36))
        ft = int(rng.integers(ts[0] - 200, ts[-1] + 200))
        mismatches += build_ftn(ft, tr, n).csi_indices != brute_force_ftn(ts, ft, n)
    cfg = SimConfig(jitter_us=1000, drop_prob=0.01, noise_sigma=0.01, inject_linear_phase=True, rng_seed=11)
    trace = simulate_csi(Scene(), cfg, 60_000_000)  # 100 packets per second
    frame_ts = np.round(np.arange(0, 60, 1 / 6) * 1e6).astype(np.int64)
    ds = build_dataset(blank_frames(frame_ts), trace, n=29)
    lag = max_lag_us(ds)
    ov = ftn_overlaps(ds)
    elapsed = time.perf_counter() - t0
    ov_ok = bool(ov.min() >= OVERLAP_RANGE[0] and ov.max() <= OVERLAP_RANGE[1])
    ok = mismatches == 0 and lag <= MAX_LAG_US and ov_ok and elapsed < 5.0
    criterion(
        3,
        ok,
        f"brute-force mismatches {mismatches}/1000, max lag {lag / 1000:.1f} ms, "
        f"overlap {ov.min():.3f}..{ov.max():.3f} (mean {ov.mean():.3f}), {elapsed:.2f} s",
    )
    assert mismatches == 0
    assert lag <= MAX_LAG_US
    assert ov_ok
    assert elapsed < 5.0


# --- criterion 4 ------------------------------------------------------------------------

def _dot(t, proj):
    flat = ad.reshape(t, (t.size,))
    return ad.reshape(ad.linear(flat, ad.Tensor(proj.reshape(1, -1)), ad.Tensor(np.zeros(1))), ())


def primitive_errors() -> dict[str, float]:
    rng = np.random.default_rng(4)

    def T(*shape, offset=0.0):
        a = rng.standard_normal(shape) + offset
        return ad.Tensor(np.where(np.abs(a) < 1e-3, 0.5, a), requires_grad=True)

    errs = {}
    x, w, b = T(2, 3, 6, 7), T(4, 3, 3, 3), T(4)
    p = rng.standard_normal((2, 4, 3, 4))
    errs["conv2d (im2col)"] = check_grads(lambda: _dot(ad.conv2d(x, w, b, (2, 2), 1), p), [x, w, b])
    x2, w2, b2 = T(2, 4, 5, 6), T(2, 4, 3, 3), T(2)
    p2 = rng.standard_normal((2, 2, 5, 6))
    errs["conv2d (shifted)"] = check_grads(lambda: _dot(ad.conv2d(x2, w2, b2, 1, 1), p2), [x2, w2, b2])
    xn, g, be = T(2, 3, 4, 5), T(3, offset=1.0), T(3)
    pn = rng.standard_normal((2, 3, 4, 5))
    errs["instance_norm"] = check_grads(lambda: _dot(ad.instance_norm(xn, g, be), pn), [xn, g, be])
    xr = T(4, 6)
    pr = rng.standard_normal((4, 6))
    errs["relu"] = check_grads(lambda: _dot(ad.relu(xr), pr), [xr])
    errs["leaky_relu"] = check_grads(lambda: _dot(ad.leaky_relu(xr, 0.2), pr), [xr])
    xl, wl, bl = T(3, 5), T(4, 5), T(4)
    pl = rng.standard_normal((3, 4))
    errs["linear"] = check_grads(lambda: _dot(ad.linear(xl, wl, bl), pl), [xl, wl, bl])
    xu = T(2, 3, 4)
    pu = rng.standard_normal((2, 6, 8))
    errs["upsample2x"] = check_grads(lambda: _dot(ad.upsample2x(xu), pu), [xu])
    xa, xb = T(3, 4), T(3, 4)
    pa = rng.standard_normal((3, 4))
    errs["add/reshape"] = check_grads(lambda: _dot(ad.reshape(ad.add(xa, xb), (4, 3)), pa.reshape(4, 3)), [xa, xb])
    xw = T(2, 4, 4)
    tgt = rng.standard_normal((2, 4, 4)) + 5.0
    msk = rng.random((2, 4, 4))
    errs["weighted_l1/mean"] = check_grads(lambda: ad.mean(ad.weighted_l1(xw, tgt, np.array([0.4, 1.0]), msk)), [xw])
    xs = T(3, 3)
    errs["sum"] = check_grads(lambda: ad.sum(xs), [xs])
    return errs


def test_criterion_4_gradients(criterion):
    t0 = time.perf_counter()
    errs = primitive_errors()
    errs["full tiny graph"] = full_graph_grad_error(entries=6)
    elapsed = time.perf_counter() - t0
    worst = max(errs.values())
    ok = worst < GRAD_REL and elapsed < 60.0
    worst_name = max(errs, key=errs.get)
    criterion(4, ok, f"{len(errs)} checks, worst rel {worst:.1e} ({worst_name}), {elapsed:.1f} s")
    assert all(e < GRAD_REL for e in errs.values()), errs
    assert elapsed < 60.0


# --- criterion 5 ------------------------------------------------------------------------

def test_criterion_5_optimizer(criterion):
    t0 = time.perf_counter()
    cfg = TrainConfig()
    lrs = {e: lr_at(e, cfg) for e in LR_REFERENCE}
    lr_ok = lrs[0] == LR_REFERENCE[0] and all(abs(lrs[e] - v) <= LR_PRINT_SLACK for e, v in LR_REFERENCE.items())
    p = {"p": np.array([0.0])}
    state = AdamState()
    reached = None
    for step in range(1, ADAM_STEPS + 1):
        adam_step(p, {"p": 2.0 * (p["p"] - 3.0)}, state, ADAM_LR, cfg)
        if abs(p["p"][0] - 3.0) < ADAM_TARGET:
            reached = step
            break
    elapsed = time.perf_counter() - t0
    ok = lr_ok and reached is not None and elapsed < 1.0
    criterion(5, ok, f"lr {[round(v, 9) for v in lrs.values()]}, |p-3| < 1e-3 after {reached} steps, {elapsed:.3f} s")
    assert lr_ok
    assert reached is not None
    assert elapsed < 1.0


# --- criterion 6 ------------------------------------------------------------------------

def test_criterion_6_split(criterion):
    t0 = time.perf_counter()
    ts = np.arange(8300 * 4 + 100) * 10_000
    trace = CsiTrace(ts, np.ones((len(ts), 2, 1, 1), complex))
    ds = build_dataset(blank_frames(ts[50 : 50 + 8300 * 4 : 4]), trace, n=29)
    train_ds, test_ds = split(ds, 0.95)
    elapsed = time.perf_counter() - t0
    ok = len(ds) == 8300 and (len(train_ds), len(test_ds)) == (7885, 415) and elapsed < 1.0
    criterion(6, ok, f"{len(ds)} -> {len(train_ds)}/{len(test_ds)}, {elapsed:.2f} s")
    assert len(ds) == 8300
    assert (len(train_ds), len(test_ds)) == (7885, 415)
    assert train_ds.samples[-1].frame_timestamp_us < test_ds.samples[0].frame_timestamp_us
    assert elapsed < 1.0


# --- criteria 7 to 9: end-to-end runs ---------------------------------------------------------

def run_pipeline(config: Path, root: Path) -> dict:
    """simulate, preprocess, sync and train; returns paths and wall times."""
    cfg = load_config(config)
    done = root / "train" / "summary.json"
    times = {}
    if not done.exists():
        if root.exists():
            shutil.rmtree(root)
        t0 = time.perf_counter()
        cmd_simulate(cfg, root / "sim")
        cmd_preprocess(cfg, root / "sim", root / "prep")
        cmd_sync(cfg, root / "prep", root / "ds")
        times["data_s"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        cmd_train(cfg, root / "ds", root / "train")
        times["train_s"] = time.perf_counter() - t0
    ckpt = root / "train" / f"ckpt_{cfg.train.epochs}.w2vp"
    return {"cfg": cfg, "root": root, "ds": root / "ds", "ckpt": ckpt, "history": root / "train" / "history.csv", **times}


@pytest.fixture(scope="module")
def runs_root(tmp_path_factory):
    env = os.environ.get("WI2VI_ACCEPTANCE_DIR")
    if env:
        p = Path(env)
        p.mkdir(parents=True, exist_ok=True)
        return p
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def dynamics_run(runs_root):
    return run_pipeline(CONFIGS / "acceptance_dynamics.json", runs_root / "dynamics")


@pytest.fixture(scope="module")
def full_scene_run(runs_root):
    return run_pipeline(CONFIGS / "acceptance_full_scene.json", runs_root / "full_scene")


def median_baseline_l1(run) -> float:
    ds = load_dataset(run["ds"])
    train_ds, test_ds = split(ds, ds.meta["train_fraction"])
    base = median_frame([s.frame.frame.pixels for s in train_ds.samples])
    res = evaluate(None, test_ds, run["cfg"].train, predictor=lambda x, s: np.broadcast_to(base, (len(s),) + base.shape))
    return res.mean_l1


def _minutes(run) -> str:
    return f"{run['train_s'] / 60:.1f} min training" if "train_s" in run else "reused run"


@pytest.mark.slow
def test_criterion_7_dynamics_learning(dynamics_run, criterion):
    cfg = dynamics_run["cfg"]
    ds = load_dataset(dynamics_run["ds"])
    assert cfg.sim.F == 56 and cfg.sim.T == cfg.sim.R == 3
    assert ds.frame_size == (24, 32) and ds.n == 29 and cfg.k == 8
    assert cfg.train.epochs == 200 and cfg.train.batch_size == 32
    assert cfg.duration_us == 300_000_000
    metrics = evaluate_checkpoint(dynamics_run["ckpt"], dynamics_run["ds"])
    baseline = median_baseline_l1(dynamics_run)
    ratio = metrics["mean_l1"] / baseline
    rate = metrics["centroid_hit_rate"]
    ok = ratio <= L1_RATIO and rate >= HIT_RATE_DYNAMICS
    criterion(
        7,
        ok,
        f"test L1 {metrics['mean_l1']:.5f} vs median baseline {baseline:.5f} (ratio {ratio:.3f}), "
        f"centroid hits {rate:.1%} of {metrics['centroid_frames']} frames, {_minutes(dynamics_run)}",
    )
    assert ratio <= L1_RATIO
    assert rate >= HIT_RATE_DYNAMICS


@pytest.mark.slow
def test_criterion_8_full_scene(full_scene_run, criterion):
    cfg = full_scene_run["cfg"]
    ds = load_dataset(full_scene_run["ds"])
    assert ds.mode == "full_scene" and ds.background is not None
    _, test_ds = split(ds, ds.meta["train_fraction"])
    model, _ = load_model(full_scene_run["ckpt"])
    res = evaluate(model, test_ds, cfg.train, keep_predictions=True)
    ts = np.array([s.frame_timestamp_us for s in test_ds.samples])
    _, present = mover_state(cfg.scene, ts)
    absent = np.flatnonzero(~present)
    bg = ds.background.pixels
    empty_l1 = float(np.mean([np.mean(np.abs(render(res.predictions[i]) - bg)) for i in absent])) if len(absent) else math.nan
    metrics = evaluate_checkpoint(full_scene_run["ckpt"], full_scene_run["ds"])
    rate = metrics["centroid_hit_rate"]
    ok = len(absent) > 0 and empty_l1 <= EMPTY_SCENE_L1 and rate >= HIT_RATE_FULL
    criterion(
        8,
        ok,
        f"empty-scene L1 {empty_l1:.4f} over {len(absent)} frames, centroid hits {rate:.1%} "
        f"of {metrics['centroid_frames']} frames, {_minutes(full_scene_run)}",
    )
    assert len(absent) > 0
    assert empty_l1 <= EMPTY_SCENE_L1
    assert rate >= HIT_RATE_FULL


@pytest.mark.slow
def test_criterion_9_determinism(dynamics_run, tmp_path, criterion):
    repeat = run_pipeline(CONFIGS / "acceptance_dynamics.json", tmp_path / "repeat")
    first = dynamics_run["history"].read_bytes()
    second = repeat["history"].read_bytes()
    same_trace = (dynamics_run["ds"] / "trace.csit").read_bytes() == (repeat["ds"] / "trace.csit").read_bytes()
    rows = read_history(repeat["history"])
    # the full-size model in float64 for a few epochs on the same data
    cfg = repeat["cfg"]
    ds = load_dataset(repeat["ds"])
    train_ds, test_ds = split(ds, ds.meta["train_fraction"])
    t64 = TrainConfig.from_dict({**cfg.train.to_dict(), "dtype": "float64", "epochs": 2})
    hist64 = []
    for _ in range(2):
        model = init_model(cfg.model_config(18, 56), cfg.seed, np.float64)
        _, h = train(model, train_ds, t64, test_ds)
        hist64.append(repr(h))
    ok = first == second and same_trace and hist64[0] == hist64[1]
    criterion(
        9,
        ok,
        f"history.csv ({len(rows)} rows) identical: {first == second}, trace identical: {same_trace}, "
        f"float64 repeat identical: {hist64[0] == hist64[1]}",
    )
    assert same_trace
    assert first == second
    assert hist64[0] == hist64[1]
