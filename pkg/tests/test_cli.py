import json

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from hfn.cli import main
from hfn.data import load_manifest
from hfn.hintmaps import load_click_file
from hfn.network import HFN, NetworkConfig, save_checkpoint

runner = CliRunner()

TINY = {"stages": 2, "blocks_per_stage": [1, 1], "channels_per_stage": [4, 8],
        "stem_downsample": 2, "input_pad_multiple": 8}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    result = runner.invoke(main, ["make-synthetic", "--count", "6", "--size", "48",
                                  "--seed", "0", "--out", str(tmp / "data")])
    assert result.exit_code == 0, result.output
    ckpt = tmp / "model.ckpt"
    save_checkpoint(ckpt, HFN(NetworkConfig.from_dict(TINY)), metadata={})
    return tmp


def test_make_synthetic_writes_manifest(workdir):
    manifest = load_manifest(workdir / "data" / "manifest.jsonl")
    assert len(manifest.entries) == 6


def test_simulate_clicks_writes_click_file(workdir):
    mask = next(iter(load_manifest(workdir / "data" / "manifest.jsonl").entries)).mask
    out = workdir / "clicks.json"
    result = runner.invoke(main, ["simulate-clicks", "--mask", str(mask), "--n", "3",
                                  "--seed", "1", "--out", str(out)])
    assert result.exit_code == 0, result.output
    clicks, record = load_click_file(out)
    assert len(clicks.foreground) == len(clicks.background) == 3
    assert record["seed"] == 1

    # clicks land on the correct side of the stored mask
    arr = (np.asarray(Image.open(mask).convert("L")) >= 128).astype(np.uint8)
    for r, c in clicks.foreground:
        assert arr[r, c] == 1
    for r, c in clicks.background:
        assert arr[r, c] == 0


def test_predict_writes_mask_and_metrics(workdir):
    manifest = load_manifest(workdir / "data" / "manifest.jsonl")
    entry = manifest.entries[0]
    clicks = workdir / "clicks.json"
    runner.invoke(main, ["simulate-clicks", "--mask", str(entry.mask), "--out", str(clicks)])
    out = workdir / "pred.png"
    result = runner.invoke(main, ["predict", "--image", str(entry.image),
                                  "--clicks", str(clicks),
                                  "--checkpoint", str(workdir / "model.ckpt"),
                                  "--out", str(out), "--gt", str(entry.mask)])
    assert result.exit_code == 0, result.output
    assert "jaccard" in result.output
    pred = np.asarray(Image.open(out))
    assert pred.shape == (48, 48)
    assert set(np.unique(pred)) <= {0, 255}


def test_predict_without_checkpoint_is_usage_error(workdir, monkeypatch):
    monkeypatch.delenv("HFN_CHECKPOINT", raising=False)
    entry = load_manifest(workdir / "data" / "manifest.jsonl").entries[0]
    result = runner.invoke(main, ["predict", "--image", str(entry.image),
                                  "--clicks", str(workdir / "clicks.json"),
                                  "--out", str(workdir / "x.png")])
    assert result.exit_code == 1
    assert "checkpoint" in result.output


def test_checkpoint_env_fallback(workdir, monkeypatch):
    monkeypatch.setenv("HFN_CHECKPOINT", str(workdir / "model.ckpt"))
    entry = load_manifest(workdir / "data" / "manifest.jsonl").entries[0]
    result = runner.invoke(main, ["predict", "--image", str(entry.image),
                                  "--clicks", str(workdir / "clicks.json"),
                                  "--out", str(workdir / "env_pred.png")])
    assert result.exit_code == 0, result.output


def test_eval_report_structure(workdir):
    report_path = workdir / "eval.json"
    result = runner.invoke(main, ["eval", "--checkpoint", str(workdir / "model.ckpt"),
                                  "--manifest", str(workdir / "data" / "manifest.jsonl"),
                                  "--report", str(report_path)])
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text())
    assert set(report) >= {"per_image", "mean", "pr_curve", "challenging"}
    assert 0.0 <= report["mean"]["jaccard"] <= 1.0
    # challenging subset is the floor of 20% of the test split
    n_test = len(report["per_image"])
    assert len(report["challenging"]["ids"]) == int(np.floor(0.2 * n_test))


def test_train_then_eval_round_trip(workdir):
    tc = workdir / "train_cfg.json"
    tc.write_text(json.dumps({"epochs": 1, "seed": 0}))
    nc = workdir / "net_cfg.json"
    nc.write_text(json.dumps(TINY))
    ckpt = workdir / "trained.ckpt"
    result = runner.invoke(main, ["train",
                                  "--manifest", str(workdir / "data" / "manifest.jsonl"),
                                  "--net-config", str(nc), "--train-config", str(tc),
                                  "--out", str(ckpt)])
    assert result.exit_code == 0, result.output
    assert ckpt.exists()
    result = runner.invoke(main, ["eval", "--checkpoint", str(ckpt),
                                  "--manifest", str(workdir / "data" / "manifest.jsonl"),
                                  "--report", str(workdir / "eval2.json")])
    assert result.exit_code == 0, result.output


def test_end_to_end_requires_quickstart_flag(workdir):
    result = runner.invoke(main, ["end-to-end", "--workdir", str(workdir / "e2e")])
    assert result.exit_code == 1


def test_simulate_clicks_noisy_infeasible_is_usage_error(workdir, tmp_path):
    tiny = np.zeros((16, 16), np.uint8)
    tiny[7:9, 7:9] = 1
    mask_path = tmp_path / "tiny_mask.png"
    Image.fromarray(tiny * 255).save(mask_path)
    result = runner.invoke(main, ["simulate-clicks", "--mask", str(mask_path),
                                  "--n", "1", "--noisy-bg", "1",
                                  "--out", str(tmp_path / "c.json")])
    assert result.exit_code == 1
