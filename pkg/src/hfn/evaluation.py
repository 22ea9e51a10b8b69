"""Segmentation metrics, PR curves, click sweeps and ablation reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .click_sim import GroundTruthMask, simulate_clicks, simulate_clicks_with_noise
from .data import DatasetManifest, load_sample
from .network import HFN, NetworkConfig, predict_mask
from .training import TrainConfig, preprocess, train


class EvaluationError(ValueError):
    pass


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsRecord:
    jaccard: float
    sensitivity: float
    specificity: float
    accuracy: float

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(pred_mask: np.ndarray, gt_mask: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred_mask)
    gt = np.asarray(gt_mask)
    if pred.shape != gt.shape:
        raise EvaluationError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(pred & gt)),
        fp=int(np.sum(pred & ~gt)),
        tn=int(np.sum(~pred & ~gt)),
        fn=int(np.sum(~pred & gt)),
    )


def _ratio(num: int, den: int) -> float:
    # 0/0 is vacuously perfect by convention
    return 1.0 if den == 0 else num / den


def metrics(counts: ConfusionCounts) -> MetricsRecord:
    if counts.total <= 0:
        raise EvaluationError("confusion counts are empty")
    return MetricsRecord(
        jaccard=_ratio(counts.tp, counts.tp + counts.fp + counts.fn),
        sensitivity=_ratio(counts.tp, counts.tp + counts.fn),
        specificity=_ratio(counts.tn, counts.tn + counts.fp),
        accuracy=(counts.tp + counts.tn) / counts.total,
    )


def mean_metrics(records: list[MetricsRecord]) -> MetricsRecord:
    if not records:
        raise EvaluationError("no metric records to average")
    return MetricsRecord(
        jaccard=float(np.mean([r.jaccard for r in records])),
        sensitivity=float(np.mean([r.sensitivity for r in records])),
        specificity=float(np.mean([r.specificity for r in records])),
        accuracy=float(np.mean([r.accuracy for r in records])),
    )


def pr_curve(probability_maps: list[np.ndarray], gt_masks: list[np.ndarray],
             n_thresholds: int = 256) -> list[tuple[float, float, float]]:
    """Pooled precision/recall over an even threshold grid in [0, 1].

    Precision with zero predicted positives is 1.0 by convention.
    """
    probs = np.concatenate([p.ravel() for p in probability_maps])
    gts = np.concatenate([np.asarray(g).ravel().astype(bool) for g in gt_masks])
    if probs.shape != gts.shape:
        raise EvaluationError("probability maps and masks disagree in size")
    total_pos = int(gts.sum())
    out = []
    for tau in np.linspace(0.0, 1.0, n_thresholds):
        pred = probs >= tau
        tp = int(np.sum(pred & gts))
        pp = int(pred.sum())
        precision = 1.0 if pp == 0 else tp / pp
        recall = 1.0 if total_pos == 0 else tp / total_pos
        out.append((float(tau), precision, recall))
    return out


def select_challenging(ranking_scores: dict[str, float], fraction: float = 0.2) -> list[str]:
    """Image ids in the lowest score fraction; ties broken by id."""
    if not 0 < fraction <= 1:
        raise EvaluationError(f"fraction must be in (0, 1], got {fraction}")
    k = int(np.floor(fraction * len(ranking_scores)))
    ranked = sorted(ranking_scores.items(), key=lambda kv: (kv[1], kv[0]))
    return [image_id for image_id, _ in ranked[:k]]


def _eval_samples(manifest: DatasetManifest, split: str = "test"):
    entries = manifest.split(split)
    if not entries:
        raise EvaluationError(f"manifest has no {split} split")
    for entry in entries:
        s = load_sample(entry)
        img, msk = preprocess(s.image, s.mask.values)
        yield entry.id, img, msk


def evaluate_dataset(model: HFN, manifest: DatasetManifest, n_clicks: int, seed: int,
                     noisy_fg: int = 0, noisy_bg: int = 0,
                     collect_probs: bool = False) -> dict:
    """Per-image metrics at a fixed click budget, optionally with noisy clicks."""
    per_image = []
    probs, gts = [], []
    for image_id, img, msk in _eval_samples(manifest):
        gt = GroundTruthMask.from_array(msk)
        if noisy_fg or noisy_bg:
            clicks = simulate_clicks_with_noise(gt, n_clicks, noisy_fg, noisy_bg, seed)
        else:
            clicks = simulate_clicks(gt, n_clicks, seed)
        prob, pred = predict_mask(model, img, clicks)
        counts = confusion(pred, msk)
        rec = metrics(counts)
        per_image.append({"id": image_id, "n_clicks": n_clicks,
                          "counts": asdict(counts), **rec.to_dict()})
        if collect_probs:
            probs.append(prob)
            gts.append(msk)
    records = [MetricsRecord(jaccard=r["jaccard"], sensitivity=r["sensitivity"],
                             specificity=r["specificity"], accuracy=r["accuracy"])
               for r in per_image]
    out = {"per_image": per_image, "mean": mean_metrics(records).to_dict()}
    if collect_probs:
        out["pr_curve"] = pr_curve(probs, gts)
    return out


def hint_free_scores(model: HFN, manifest: DatasetManifest, seed: int) -> dict[str, float]:
    """Jaccard per image with hint features zeroed (challenging-subset ranking)."""
    scores = {}
    for image_id, img, msk in _eval_samples(manifest):
        clicks = simulate_clicks(GroundTruthMask.from_array(msk), 1, seed)
        _, pred = predict_mask(model, img, clicks, zero_hints=True)
        scores[image_id] = metrics(confusion(pred, msk)).jaccard
    return scores


def click_sweep(model: HFN, manifest: DatasetManifest, seed: int,
                budgets=range(1, 7)) -> dict[int, dict]:
    """Mean metrics at each accumulated click budget."""
    return {n: evaluate_dataset(model, manifest, n, seed) for n in budgets}


def noisy_eval(model: HFN, manifest: DatasetManifest, noisy_fg: int, noisy_bg: int,
               seed: int, total: int = 3) -> dict:
    """(total, total) clicks per region with the stated counts replaced by noise."""
    noisy = evaluate_dataset(model, manifest, total, seed, noisy_fg=noisy_fg,
                             noisy_bg=noisy_bg)
    clean = evaluate_dataset(model, manifest, total, seed)
    return {"noisy": noisy, "clean": clean,
            "noisy_fg": noisy_fg, "noisy_bg": noisy_bg}


def ablation_him(manifest: DatasetManifest, net_config: NetworkConfig,
                 train_config: TrainConfig, n_clicks: int = 3, **train_kwargs) -> dict:
    """Train with and without the integration modules under identical seeds."""
    from dataclasses import replace
    with_cfg = replace(net_config, use_him=True)
    without_cfg = replace(net_config, use_him=False)
    model_with, _ = train(manifest, with_cfg, train_config, **train_kwargs)
    model_without, _ = train(manifest, without_cfg, train_config, **train_kwargs)
    rep_with = evaluate_dataset(model_with, manifest, n_clicks, train_config.seed)
    rep_without = evaluate_dataset(model_without, manifest, n_clicks, train_config.seed)
    ids_w = {r["id"] for r in rep_with["per_image"]}
    ids_wo = {r["id"] for r in rep_without["per_image"]}
    assert ids_w == ids_wo
    return {"with_him": rep_with, "without_him": rep_without}


def write_report(path: str | Path, report: dict) -> None:
    """Atomic structured-text report (JSON)."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)
