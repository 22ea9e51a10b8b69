"""Command-line entry point wiring all modules together."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click as click_cli
import numpy as np
from PIL import Image

from . import click_sim, data, evaluation, hintmaps, network, training

EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _fail(code: int, message: str):
    click_cli.echo(f"error: {message}", err=True)
    sys.exit(code)


def _atomic_save_png(path: Path, array: np.ndarray) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    Image.fromarray(array).save(tmp, format="PNG")
    tmp.replace(path)


def _load_net_config(path: str | None) -> network.NetworkConfig:
    if path is None:
        return network.NetworkConfig()
    return network.NetworkConfig.from_dict(json.loads(Path(path).read_text()))


def _load_train_config(path: str | None, seed: int | None) -> training.TrainConfig:
    cfg = training.TrainConfig() if path is None else \
        training.TrainConfig.from_dict(json.loads(Path(path).read_text()))
    if seed is not None:
        cfg.seed = seed
    return cfg


@click_cli.group()
def main():
    """Semi-automatic skin lesion segmentation toolkit."""


@main.command("make-synthetic")
@click_cli.option("--count", type=int, required=True, help="Number of samples to render.")
@click_cli.option("--size", type=int, default=128, show_default=True, help="Image side length.")
@click_cli.option("--seed", type=int, default=0, show_default=True)
@click_cli.option("--out", "out_dir", type=click_cli.Path(), required=True,
                  help="Output directory; manifest.jsonl is written inside.")
def make_synthetic_cmd(count, size, seed, out_dir):
    """Render a deterministic synthetic lesion dataset."""
    try:
        manifest = data.make_synthetic_dataset(count, size, seed, out_dir)
    except data.DataError as exc:
        _fail(EXIT_USAGE, str(exc))
    click_cli.echo(f"wrote {len(manifest.entries)} samples to {out_dir} "
                   f"({manifest.counts()})")


@main.command("simulate-clicks")
@click_cli.option("--mask", "mask_path", type=click_cli.Path(exists=True), required=True)
@click_cli.option("--n", type=click_cli.IntRange(1, 6), default=3, show_default=True,
                  help="Clean clicks per region.")
@click_cli.option("--noisy-fg", type=int, default=0, show_default=True)
@click_cli.option("--noisy-bg", type=int, default=0, show_default=True)
@click_cli.option("--seed", type=int, default=0, show_default=True)
@click_cli.option("--out", "out_path", type=click_cli.Path(), required=True)
def simulate_clicks_cmd(mask_path, n, noisy_fg, noisy_bg, seed, out_path):
    """Simulate user clicks from a ground-truth mask into a click file."""
    mask_arr = (np.asarray(Image.open(mask_path).convert("L")) >= 128).astype(np.uint8)
    gt = click_sim.GroundTruthMask.from_array(mask_arr)
    try:
        if noisy_fg or noisy_bg:
            clicks = click_sim.simulate_clicks_with_noise(gt, n, noisy_fg, noisy_bg, seed)
        else:
            clicks = click_sim.simulate_clicks(gt, n, seed)
    except click_sim.SimulationError as exc:
        _fail(EXIT_USAGE, str(exc))
    tmp = Path(out_path).with_suffix(".tmp")
    hintmaps.save_click_file(tmp, clicks, image=None, seed=seed)
    tmp.replace(out_path)
    click_cli.echo(f"wrote {len(clicks.foreground)} fg + {len(clicks.background)} bg clicks")


@main.command("train")
@click_cli.option("--manifest", "manifest_path", type=click_cli.Path(exists=True), required=True)
@click_cli.option("--net-config", type=click_cli.Path(exists=True), default=None,
                  help="JSON file mirroring NetworkConfig fields.")
@click_cli.option("--train-config", type=click_cli.Path(exists=True), default=None,
                  help="JSON file mirroring TrainConfig fields.")
@click_cli.option("--out", "out_path", type=click_cli.Path(), required=True)
@click_cli.option("--seed", type=int, default=None)
@click_cli.option("--history", "history_path", type=click_cli.Path(), default=None)
def train_cmd(manifest_path, net_config, train_config, out_path, seed, history_path):
    """Train the network and save a checkpoint."""
    manifest = data.load_manifest(manifest_path)
    net_cfg = _load_net_config(net_config)
    train_cfg = _load_train_config(train_config, seed)

    def progress(epoch, history):
        click_cli.echo(f"epoch {epoch}: loss {history.loss[-1]:.4f} "
                       f"val_jaccard {history.val_jaccard[-1]:.4f}")

    try:
        model, history = training.train(manifest, net_cfg, train_cfg, progress=progress)
    except training.TrainingError as exc:
        _fail(EXIT_RUNTIME, str(exc))
    tmp = Path(out_path).with_suffix(".tmp")
    network.save_checkpoint(tmp, model, metadata={"train_config": train_cfg.to_dict()})
    tmp.replace(out_path)
    if history_path:
        evaluation.write_report(history_path, {"history": history.rows()})
    click_cli.echo(f"saved checkpoint to {out_path}")


def _load_model(checkpoint: str | None) -> network.HFN:
    checkpoint = checkpoint or os.environ.get("HFN_CHECKPOINT")
    if not checkpoint:
        _fail(EXIT_USAGE, "no checkpoint: pass --checkpoint or set HFN_CHECKPOINT")
    try:
        model, _ = network.load_checkpoint(checkpoint)
    except (FileNotFoundError, network.NetworkError) as exc:
        _fail(EXIT_RUNTIME, f"cannot load checkpoint: {exc}")
    return model


@main.command("predict")
@click_cli.option("--image", "image_path", type=click_cli.Path(exists=True), required=True)
@click_cli.option("--clicks", "clicks_path", type=click_cli.Path(exists=True), required=True)
@click_cli.option("--checkpoint", type=click_cli.Path(), default=None)
@click_cli.option("--out", "out_path", type=click_cli.Path(), required=True)
@click_cli.option("--gt", "gt_path", type=click_cli.Path(exists=True), default=None,
                  help="Optional ground-truth mask; prints metrics when given.")
def predict_cmd(image_path, clicks_path, checkpoint, out_path, gt_path):
    """Segment one image from a click file and write the mask PNG."""
    model = _load_model(checkpoint)
    image = np.asarray(Image.open(image_path).convert("RGB"))
    clicks, _ = hintmaps.load_click_file(clicks_path)
    if not clicks.foreground or not clicks.background:
        _fail(EXIT_USAGE, "click file needs at least one foreground and one background click")
    image, _ = training.preprocess(image, np.zeros(image.shape[:2], dtype=np.uint8))
    try:
        _, mask = network.predict_mask(model, image, clicks)
    except (network.NetworkError, hintmaps.ClickError) as exc:
        _fail(EXIT_USAGE, str(exc))
    _atomic_save_png(Path(out_path), mask * 255)
    click_cli.echo(f"wrote mask {mask.shape[0]}x{mask.shape[1]} to {out_path}")
    if gt_path:
        gt = (np.asarray(Image.open(gt_path).convert("L")) >= 128).astype(np.uint8)
        _, gt = training.preprocess(np.zeros((*gt.shape, 3), dtype=np.uint8), gt)
        rec = evaluation.metrics(evaluation.confusion(mask, gt))
        click_cli.echo(f"jaccard {rec.jaccard:.4f} sensitivity {rec.sensitivity:.4f} "
                       f"specificity {rec.specificity:.4f} accuracy {rec.accuracy:.4f}")


@main.command("eval")
@click_cli.option("--checkpoint", type=click_cli.Path(), default=None)
@click_cli.option("--manifest", "manifest_path", type=click_cli.Path(exists=True), required=True)
@click_cli.option("--n-clicks", type=click_cli.IntRange(1, 6), default=3, show_default=True)
@click_cli.option("--seed", type=int, default=0, show_default=True)
@click_cli.option("--report", "report_path", type=click_cli.Path(), required=True)
def eval_cmd(checkpoint, manifest_path, n_clicks, seed, report_path):
    """Evaluate on the test split: metrics, PR curve, challenging subset."""
    model = _load_model(checkpoint)
    manifest = data.load_manifest(manifest_path)
    report = evaluation.evaluate_dataset(model, manifest, n_clicks, seed, collect_probs=True)
    baseline = evaluation.hint_free_scores(model, manifest, seed)
    challenging = evaluation.select_challenging(baseline)
    per_image = {r["id"]: r for r in report["per_image"]}
    challenging_records = [
        evaluation.MetricsRecord(jaccard=per_image[i]["jaccard"],
                                 sensitivity=per_image[i]["sensitivity"],
                                 specificity=per_image[i]["specificity"],
                                 accuracy=per_image[i]["accuracy"])
        for i in challenging]
    report["challenging"] = {
        "ids": challenging,
        "mean": evaluation.mean_metrics(challenging_records).to_dict() if challenging_records else None,
    }
    evaluation.write_report(report_path, report)
    click_cli.echo(f"mean jaccard {report['mean']['jaccard']:.4f} "
                   f"({len(report['per_image'])} images); report at {report_path}")


@main.command("sweep-clicks")
@click_cli.option("--checkpoint", type=click_cli.Path(), default=None)
@click_cli.option("--manifest", "manifest_path", type=click_cli.Path(exists=True), required=True)
@click_cli.option("--seed", type=int, default=0, show_default=True)
@click_cli.option("--report", "report_path", type=click_cli.Path(), required=True)
def sweep_clicks_cmd(checkpoint, manifest_path, seed, report_path):
    """Evaluate at accumulated click budgets 1..6."""
    model = _load_model(checkpoint)
    manifest = data.load_manifest(manifest_path)
    sweep = evaluation.click_sweep(model, manifest, seed)
    evaluation.write_report(report_path, {str(n): r for n, r in sweep.items()})
    for n, r in sweep.items():
        click_cli.echo(f"n={n}: mean jaccard {r['mean']['jaccard']:.4f}")


@main.command("noisy-eval")
@click_cli.option("--checkpoint", type=click_cli.Path(), default=None)
@click_cli.option("--manifest", "manifest_path", type=click_cli.Path(exists=True), required=True)
@click_cli.option("--noisy-fg", type=int, default=1, show_default=True)
@click_cli.option("--noisy-bg", type=int, default=1, show_default=True)
@click_cli.option("--seed", type=int, default=0, show_default=True)
@click_cli.option("--report", "report_path", type=click_cli.Path(), required=True)
def noisy_eval_cmd(checkpoint, manifest_path, noisy_fg, noisy_bg, seed, report_path):
    """Evaluate with noisy clicks replacing clean ones in the (3,3) default."""
    model = _load_model(checkpoint)
    manifest = data.load_manifest(manifest_path)
    report = evaluation.noisy_eval(model, manifest, noisy_fg, noisy_bg, seed)
    evaluation.write_report(report_path, report)
    click_cli.echo(f"noisy jaccard {report['noisy']['mean']['jaccard']:.4f} "
                   f"vs clean {report['clean']['mean']['jaccard']:.4f}")


@main.command("ablate-him")
@click_cli.option("--manifest", "manifest_path", type=click_cli.Path(exists=True), required=True)
@click_cli.option("--net-config", type=click_cli.Path(exists=True), default=None)
@click_cli.option("--train-config", type=click_cli.Path(exists=True), default=None)
@click_cli.option("--seed", type=int, default=None)
@click_cli.option("--report", "report_path", type=click_cli.Path(), required=True)
def ablate_him_cmd(manifest_path, net_config, train_config, seed, report_path):
    """Train paired models with and without the integration modules."""
    manifest = data.load_manifest(manifest_path)
    net_cfg = _load_net_config(net_config)
    train_cfg = _load_train_config(train_config, seed)
    report = evaluation.ablation_him(manifest, net_cfg, train_cfg, validate=False)
    evaluation.write_report(report_path, report)
    click_cli.echo(f"with HIMs {report['with_him']['mean']['jaccard']:.4f} "
                   f"vs without {report['without_him']['mean']['jaccard']:.4f}")


@main.command("serve")
@click_cli.option("--checkpoint", type=click_cli.Path(), default=None)
@click_cli.option("--port", type=int, default=8000, show_default=True)
@click_cli.option("--host", default="127.0.0.1", show_default=True)
@click_cli.option("--ttl-minutes", type=float, default=30.0, show_default=True)
@click_cli.option("--frontend-dir", type=click_cli.Path(), default=None,
                  help="Static frontend bundle to serve at /.")
def serve_cmd(checkpoint, port, host, ttl_minutes, frontend_dir):
    """Run the interactive segmentation HTTP service."""
    import uvicorn
    from .service import create_app
    checkpoint = checkpoint or os.environ.get("HFN_CHECKPOINT")
    if not checkpoint:
        _fail(EXIT_USAGE, "no checkpoint: pass --checkpoint or set HFN_CHECKPOINT")
    if frontend_dir is None:
        default_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        frontend_dir = default_dir if default_dir.is_dir() else None
    app = create_app(checkpoint, ttl_minutes=ttl_minutes, frontend_dir=frontend_dir)
    uvicorn.run(app, host=host, port=port)


@main.command("end-to-end")
@click_cli.option("--quickstart", is_flag=True, help="Run the full desk-scale pipeline.")
@click_cli.option("--workdir", type=click_cli.Path(), default="e2e_run", show_default=True)
@click_cli.option("--seed", type=int, default=0, show_default=True)
@click_cli.option("--count", type=int, default=24, show_default=True)
@click_cli.option("--size", type=int, default=64, show_default=True)
@click_cli.option("--epochs", type=int, default=4, show_default=True)
def end_to_end_cmd(quickstart, workdir, seed, count, size, epochs):
    """Synthetic data -> train -> eval -> sweep -> noisy -> ablation, one report."""
    if not quickstart:
        _fail(EXIT_USAGE, "pass --quickstart to run the pipeline")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    report: dict = {"seed": seed}
    stage = "make-synthetic"
    try:
        manifest = data.make_synthetic_dataset(count, size, seed, workdir / "data")
        report["dataset"] = {"count": count, "size": size,
                             "counts": manifest.counts()}

        stage = "train"
        net_cfg = network.NetworkConfig(input_pad_multiple=16)
        train_cfg = training.TrainConfig(epochs=epochs, seed=seed)
        model, history = training.train(manifest, net_cfg, train_cfg, validate=False)
        ckpt = workdir / "model.ckpt"
        network.save_checkpoint(ckpt, model, metadata={"seed": seed})
        report["train"] = {"final_loss": history.loss[-1], "epochs": epochs}

        stage = "eval"
        report["eval"] = evaluation.evaluate_dataset(model, manifest, 3, seed)

        stage = "sweep-clicks"
        sweep = evaluation.click_sweep(model, manifest, seed)
        report["sweep"] = {str(n): r["mean"] for n, r in sweep.items()}

        stage = "noisy-eval"
        noisy = evaluation.noisy_eval(model, manifest, 1, 1, seed)
        report["noisy"] = {"noisy_mean": noisy["noisy"]["mean"],
                           "clean_mean": noisy["clean"]["mean"]}

        stage = "ablate-him"
        ablation = evaluation.ablation_him(manifest, net_cfg, train_cfg, validate=False)
        report["ablation"] = {"with_him": ablation["with_him"]["mean"],
                              "without_him": ablation["without_him"]["mean"]}
    except Exception as exc:
        _fail(EXIT_RUNTIME, f"stage {stage} failed: {exc}")
    evaluation.write_report(workdir / "report.json", report)
    click_cli.echo(f"pipeline complete; report at {workdir / 'report.json'}")


if __name__ == "__main__":
    main()
