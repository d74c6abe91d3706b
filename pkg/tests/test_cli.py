import json
import os
import subprocess
import sys

import numpy as np
import pytest

from vid2ode.checkpoint import load_checkpoint
from vid2ode.cli import EXIT_OK, EXIT_USAGE, load_config, main, UsageError

TINY = {"epochs_pretrain": 2, "epochs_total": 2, "epochs_threshold": 2, "threshold_interval": 1,
        "epochs_refine": 1, "desk_scale": 1.0}


def run_cli(*args, threads=None):
    env = dict(os.environ)
    env.pop("XLA_FLAGS", None)
    if threads is not None:
        env["VID2ODE_THREADS"] = str(threads)
    return subprocess.run([sys.executable, "-m", "vid2ode.cli", *args], capture_output=True, text=True,
                          env=env, timeout=600)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("ds") / "duffing"
    assert main(["synth", "--system", "duffing", "--videos", "2", "--frames", "24", "--out", str(d)]) == EXIT_OK
    return d


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def test_synth_is_reproducible(dataset, tmp_path):
    again = tmp_path / "again"
    main(["synth", "--system", "duffing", "--videos", "2", "--frames", "24", "--out", str(again)])
    assert (again / "manifest.json").read_bytes() == (dataset / "manifest.json").read_bytes()
    assert not (dataset / ".incomplete").exists()


def test_missing_config_is_usage_error(dataset, tmp_path, capsys):
    code = main(["discover", "--dataset", str(dataset), "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "run")])
    assert code == EXIT_USAGE
    assert "config not found" in capsys.readouterr().err


def test_unknown_config_key_is_usage_error(dataset, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"learning_rate": 0.1}')
    assert main(["discover", "--dataset", str(dataset), "--config", str(bad), "--out", str(tmp_path / "r")]) == 2


def test_missing_dataset_is_usage_error(tmp_path):
    assert main(["baseline", "--dataset", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == EXIT_USAGE


def test_bad_ablation_mode(dataset, tmp_path):
    assert main(["ablate", "--dataset", str(dataset), "--modes", "bogus", "--out", str(tmp_path / "r")]) == 2


def test_load_config_merges_preset():
    cfg = load_config(None, "duffing", True, {"seed": 3})
    assert cfg.desk_scale == 0.2 and cfg.seed == 3 and cfg.batch_size == 1
    with pytest.raises(UsageError):
        load_config(None, "duffing", True, {"q": 0})


def test_report_without_run(tmp_path):
    assert main(["report", "--run", str(tmp_path)]) == EXIT_USAGE


def test_baseline_and_report(dataset, tiny_config, tmp_path, capsys):
    out = tmp_path / "base"
    assert main(["baseline", "--dataset", str(dataset), "--config", str(tiny_config), "--out", str(out)]) == 0
    for name in ("report.json", "resolved_config.json", "coefficients_final.csv", "coefficients_final_mask.csv",
                 "loss_trace.csv", "checkpoint.bin", "trajectories.png", "sprite.png"):
        assert (out / name).exists(), name
    assert not (out / ".incomplete").exists()
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["two_step"]["normalize"] == 1.0 and resolved["config"]["epochs_pretrain"] == 2
    capsys.readouterr()
    assert main(["report", "--run", str(out)]) == 0
    text = capsys.readouterr().out
    assert "dy/dt =" in text and "alpha" in text


# --- invariants ---------------------------------------------------------------

@pytest.mark.invariant
def test_discovery_is_identical_across_thread_counts(dataset, tiny_config, tmp_path):
    outs = []
    for n in (1, 4):
        out = tmp_path / f"t{n}"
        r = run_cli("discover", "--dataset", str(dataset), "--config", str(tiny_config), "--out", str(out),
                    threads=n)
        assert r.returncode == 0, r.stderr
        assert json.loads((out / "resolved_config.json").read_text())["threads"] == n
        outs.append(out)
    a, _ = load_checkpoint(outs[0] / "checkpoint.bin")
    b, _ = load_checkpoint(outs[1] / "checkpoint.bin")
    for k in a:
        assert a[k].tobytes() == b[k].tobytes(), k


@pytest.mark.invariant
def test_resolved_config_reproduces_run(dataset, tiny_config, tmp_path):
    first = tmp_path / "first"
    assert main(["discover", "--dataset", str(dataset), "--config", str(tiny_config), "--out", str(first)]) == 0
    cfg = json.loads((first / "resolved_config.json").read_text())["config"]
    replay = tmp_path / "replay.json"
    replay.write_text(json.dumps(cfg))
    second = tmp_path / "second"
    assert main(["discover", "--dataset", str(dataset), "--config", str(replay), "--full-scale",
                 "--out", str(second)]) == 0
    a, _ = load_checkpoint(first / "checkpoint.bin")
    b, _ = load_checkpoint(second / "checkpoint.bin")
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
