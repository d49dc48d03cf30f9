import json
import subprocess
import sys

import numpy as np
import pytest

from wi2vi.cli import EXIT_CONFIG, EXIT_DATA, main
from wi2vi.sync import load_dataset
from wi2vi.train import read_history
from wi2vi.video import read_pgm

from .support import small_run_config


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.json"
    cfg.write_text(json.dumps(small_run_config()))
    c = str(cfg)
    assert main(["simulate", "--config", c, "--out", str(root / "sim")]) == 0
    assert main(["preprocess", "--config", c, "--in", str(root / "sim"), "--out", str(root / "prep")]) == 0
    assert main(["sync", "--config", c, "--in", str(root / "prep"), "--out", str(root / "ds")]) == 0
    assert main(["train", "--config", c, "--dataset", str(root / "ds"), "--out", str(root / "train")]) == 0
    return root


def test_simulate_outputs(pipeline):
    sim = pipeline / "sim"
    lines = (sim / "frames.jsonl").read_text().splitlines()
    assert len(lines) == 300  # 30 s at 10 fps
    first = json.loads(lines[0])
    assert read_pgm(sim / first["path"]).shape == (24, 32)
    assert len((sim / "background.jsonl").read_text().splitlines()) == 3
    assert (sim / "trace.csit").exists() and (sim / "config.json").exists()


def test_sync_dataset(pipeline, capsys):
    ds = load_dataset(pipeline / "ds")
    assert ds.n == 9 and ds.k_default == 4 and len(ds) >= 140
    assert ds.frame_size == (12, 16)
    assert ds.background is not None


def test_sync_report(tmp_path, pipeline, capsys):
    c = str(pipeline / "run.json")
    assert main(["sync", "--config", c, "--in", str(pipeline / "prep"), "--out", str(tmp_path / "ds")]) == 0
    out = capsys.readouterr().out
    ds = load_dataset(tmp_path / "ds")
    n_train = int(np.floor(0.9 * len(ds)))
    assert "n=9" in out and "k=4" in out
    assert f"train {n_train} / test {len(ds) - n_train}" in out
    assert f"dropped: {ds.meta['boundary_dropped']}" in out


def test_train_outputs(pipeline):
    hist = read_history(pipeline / "train" / "history.csv")
    assert [h["epoch"] for h in hist] == [0, 1]
    summary = json.loads((pipeline / "train" / "summary.json").read_text())
    assert summary["checkpoint"] == "ckpt_2.w2vp"
    assert (pipeline / "train" / "ckpt_1.w2vp").exists()


def test_eval_and_generate(pipeline, tmp_path, capsys):
    ck = str(pipeline / "train" / "ckpt_2.w2vp")
    assert main(["eval", "--checkpoint", ck, "--dataset", str(pipeline / "ds"), "--out", str(tmp_path / "ev")]) == 0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert set(metrics) >= {"mean_l1", "p50", "p90", "p99", "centroid_hit_rate", "test_samples"}
    hist = read_history(pipeline / "train" / "history.csv")
    assert metrics["mean_l1"] == pytest.approx(hist[-1]["eval_l1"], rel=1e-12)
    assert main(["generate", "--checkpoint", ck, "--dataset", str(pipeline / "ds"), "--out", str(tmp_path / "gen")]) == 0
    recs = [json.loads(x) for x in (tmp_path / "gen" / "generated.jsonl").read_text().splitlines()]
    assert len(recs) == metrics["test_samples"]
    pred = read_pgm(tmp_path / "gen" / recs[0]["pred"])
    assert pred.shape == (12, 16) and pred.min() >= 0 and pred.max() <= 1


def test_resume_from_checkpoint(pipeline, tmp_path):
    c = str(pipeline / "run.json")
    ck = str(pipeline / "train" / "ckpt_1.w2vp")
    out = tmp_path / "resumed"
    assert main(["train", "--config", c, "--dataset", str(pipeline / "ds"), "--out", str(out), "--resume", ck]) == 0
    assert (out / "history.csv").read_bytes() == (pipeline / "train" / "history.csv").read_bytes()


def test_seed_override_changes_simulation(tmp_path, pipeline):
    c = str(pipeline / "run.json")
    assert main(["simulate", "--config", c, "--seed", "6", "--out", str(tmp_path / "s6")]) == 0
    assert (tmp_path / "s6" / "trace.csit").read_bytes() != (pipeline / "sim" / "trace.csit").read_bytes()
    assert json.loads((tmp_path / "s6" / "config.json").read_text())["seed"] == 6


def test_invalid_config_exit_code_and_no_output(tmp_path, capsys):
    doc = small_run_config()
    doc["sync"]["k"] = 50
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(bad), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_missing_input_exit_code(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(small_run_config()))
    assert main(["sync", "--config", str(cfg), "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["eval", "--checkpoint", str(tmp_path / "x.w2vp"), "--dataset", str(tmp_path)]) == EXIT_DATA


def test_seed_without_config(tmp_path):
    assert main(["eval", "--seed", "3", "--checkpoint", "x", "--dataset", str(tmp_path)]) == EXIT_CONFIG


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "wi2vi.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "preprocess", "sync", "train", "generate", "eval"):
        assert cmd in res.stdout
