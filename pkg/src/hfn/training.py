"""Training loop: preprocessing, augmentation, loss, and momentum SGD.

Encoder and decoder parameters train with separate learning rates that
halve every 50 epochs. Each training image carries six pre-sampled click
combinations (budgets 1..6, accumulated); one combination is used per
epoch, cycling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import click_sim
from .click_sim import GroundTruthMask, simulate_clicks
from .data import DatasetManifest, LesionSample, load_sample
from .hintmaps import ClickSet, clickset_to_hint_arrays
from .network import HFN, NetworkConfig, init_params, pad_to_multiple, predict_mask

RESIZE_MAX_LONG_AXIS = 512


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 3
    lr_encoder: float = 0.0005
    lr_decoder: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.00001
    lr_halving_period_epochs: int = 50
    resize_max_long_axis: int = RESIZE_MAX_LONG_AXIS
    click_combinations_per_image: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.lr_encoder <= 0 or self.lr_decoder <= 0:
            raise TrainingError("learning rates must be positive")
        if self.lr_halving_period_epochs < 1:
            raise TrainingError("halving period must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    lr_encoder: list[float] = field(default_factory=list)
    lr_decoder: list[float] = field(default_factory=list)
    val_jaccard: list[float] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [
            {"epoch": e, "loss": l, "lr_enc": le, "lr_dec": ld, "val_jaccard": vj}
            for e, l, le, ld, vj in zip(self.epochs, self.loss, self.lr_encoder,
                                        self.lr_decoder, self.val_jaccard)
        ]


def preprocess(image: np.ndarray, mask: np.ndarray,
               max_long_axis: int = RESIZE_MAX_LONG_AXIS) -> tuple[np.ndarray, np.ndarray]:
    """Downscale (never upscale) so the longest axis is at most the limit.

    Nearest-neighbor for both image and mask so labels stay binary.
    """
    if image.size == 0:
        raise TrainingError("empty image")
    h, w = image.shape[:2]
    if max(h, w) <= max_long_axis:
        return image, mask
    scale = max_long_axis / max(h, w)
    nh, nw = round(h * scale), round(w * scale)
    img = np.asarray(Image.fromarray(image).resize((nw, nh), Image.NEAREST))
    msk = np.asarray(Image.fromarray(mask.astype(np.uint8)).resize((nw, nh), Image.NEAREST))
    return img, msk


def _transform_clicks(clicks: list, crop, scale_r, scale_c,
                      mask: np.ndarray, want: int) -> list:
    """Map click coordinates through crop + resize; drop any click that
    ends up outside the crop or off its correct mask side."""
    h, w = mask.shape
    r0, r1, c0, c1 = crop
    mapped = []
    for r, c in clicks:
        if not (r0 <= r < r1 and c0 <= c < c1):
            continue
        nr = int(round((r - r0) * scale_r))
        nc = int(round((c - c0) * scale_c))
        nr = min(max(nr, 0), h - 1)
        nc = min(max(nc, 0), w - 1)
        if mask[nr, nc] != want:
            continue
        mapped.append((nr, nc))
    # rounding can collapse neighbours onto one pixel
    seen, dedup = set(), []
    for p in mapped:
        if p not in seen:
            seen.add(p)
            dedup.append(p)
    return dedup


def augment(image: np.ndarray, mask: np.ndarray, clicks: ClickSet,
            seed: int) -> tuple[np.ndarray, np.ndarray, ClickSet]:
    """Random flip and crop applied identically to image, mask and clicks.

    A crop is rejected (up to 10 redraws) unless at least one foreground and
    one background click survive; if none qualifies the input is returned
    unchanged.
    """
    rng = np.random.default_rng(seed)
    h, w = mask.shape
    flip_h = bool(rng.uniform() < 0.5)
    flip_v = bool(rng.uniform() < 0.5)

    img, msk = image, mask
    fg, bg = list(clicks.foreground), list(clicks.background)
    if flip_h:
        img = img[:, ::-1].copy()
        msk = msk[:, ::-1].copy()
        fg = [(r, w - 1 - c) for r, c in fg]
        bg = [(r, w - 1 - c) for r, c in bg]
    if flip_v:
        img = img[::-1].copy()
        msk = msk[::-1].copy()
        fg = [(h - 1 - r, c) for r, c in fg]
        bg = [(h - 1 - r, c) for r, c in bg]

    for _ in range(10):
        ch = int(round(rng.uniform(0.7, 1.0) * h))
        cw = int(round(rng.uniform(0.7, 1.0) * w))
        r0 = int(rng.integers(0, h - ch + 1))
        c0 = int(rng.integers(0, w - cw + 1))
        crop = (r0, r0 + ch, c0, c0 + cw)
        cimg = img[r0:r0 + ch, c0:c0 + cw]
        cmsk = msk[r0:r0 + ch, c0:c0 + cw]
        rimg = np.asarray(Image.fromarray(cimg).resize((w, h), Image.NEAREST))
        rmsk = np.asarray(Image.fromarray(cmsk.astype(np.uint8)).resize((w, h), Image.NEAREST))
        scale_r, scale_c = h / ch, w / cw
        nfg = _transform_clicks(fg, crop, scale_r, scale_c, rmsk, 1)
        nbg = _transform_clicks(bg, crop, scale_r, scale_c, rmsk, 0)
        if nfg and nbg and not (set(nfg) & set(nbg)):
            return rimg, rmsk, ClickSet(foreground=nfg, background=nbg)
    return image, mask, clicks


def loss(logits: torch.Tensor, gt_mask: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel two-class cross-entropy."""
    if logits.shape[-2:] != gt_mask.shape[-2:]:
        raise TrainingError(
            f"logits spatial dims {tuple(logits.shape[-2:])} != mask {tuple(gt_mask.shape[-2:])}")
    if logits.dim() == 3:
        logits = logits[None]
    if gt_mask.dim() == 2:
        gt_mask = gt_mask[None]
    return F.cross_entropy(logits, gt_mask.long())


def lr_schedule(epoch: int, config: TrainConfig) -> tuple[float, float]:
    """Each rate halves after every halving period (default 50 epochs)."""
    factor = 0.5 ** (epoch // config.lr_halving_period_epochs)
    return config.lr_encoder * factor, config.lr_decoder * factor


def sgd_step(params: list[torch.Tensor], grads: list[torch.Tensor],
             velocity: list[torch.Tensor], lr: float, momentum: float,
             weight_decay: float, names: list[str] | None = None) -> None:
    """In-place momentum SGD: v <- m*v - lr*(g + wd*p); p <- p + v."""
    names = names or [f"param[{i}]" for i in range(len(params))]
    with torch.no_grad():
        for p, g, v, name in zip(params, grads, velocity, names):
            if g is None:
                continue
            if not torch.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for {name}")
            v.mul_(momentum).add_(g + weight_decay * p, alpha=-lr)
            p.add_(v)


def _encoder_decoder_split(model: HFN) -> tuple[list, list]:
    enc_prefixes = ("image_branch", "fg_branch", "bg_branch",
                    "fg_stem_proj", "bg_stem_proj", "fg_projs", "bg_projs")
    enc, dec = [], []
    for name, p in model.named_parameters():
        (enc if name.startswith(enc_prefixes) else dec).append((name, p))
    return enc, dec


def sample_click_combinations(mask: GroundTruthMask, n_combos: int, seed: int) -> list[ClickSet]:
    """Accumulated click sets at budgets 1..n_combos for one image."""
    return [simulate_clicks(mask, n, seed) for n in range(1, n_combos + 1)]


@dataclass
class _TrainSample:
    id: str
    image: np.ndarray
    mask: np.ndarray
    combos: list[ClickSet]


def _prepare_dataset(manifest: DatasetManifest, train_config: TrainConfig) -> tuple[list[_TrainSample], list[LesionSample]]:
    train_samples = []
    for i, entry in enumerate(manifest.split("train")):
        s = load_sample(entry)
        img, msk = preprocess(s.image, s.mask.values, train_config.resize_max_long_axis)
        gt = GroundTruthMask.from_array(msk)
        combos = sample_click_combinations(gt, train_config.click_combinations_per_image,
                                           seed=train_config.seed * 100003 + i)
        train_samples.append(_TrainSample(id=entry.id, image=img, mask=msk, combos=combos))
    val_samples = [load_sample(e) for e in manifest.split("test")]
    return train_samples, val_samples


def validation_jaccard(model: HFN, samples: list[LesionSample], seed: int,
                       n_clicks: int = 3) -> float:
    from .evaluation import confusion, metrics
    if not samples:
        return float("nan")
    scores = []
    for s in samples:
        img, msk = preprocess(s.image, s.mask.values)
        clicks = simulate_clicks(GroundTruthMask.from_array(msk), n_clicks, seed)
        _, pred = predict_mask(model, img, clicks)
        scores.append(metrics(confusion(pred, msk)).jaccard)
    return float(np.mean(scores))


def train(manifest: DatasetManifest, net_config: NetworkConfig,
          train_config: TrainConfig, augment_data: bool = True,
          validate: bool = True, progress=None) -> tuple[HFN, TrainHistory]:
    if not manifest.split("train"):
        raise TrainingError("dataset has no training split")
    torch.manual_seed(train_config.seed)
    model = init_params(net_config, seed=train_config.seed)
    train_samples, val_samples = _prepare_dataset(manifest, train_config)

    enc, dec = _encoder_decoder_split(model)
    velocity = {name: torch.zeros_like(p) for name, p in enc + dec}
    history = TrainHistory()
    order_rng = np.random.default_rng(train_config.seed + 17)
    n_combos = train_config.click_combinations_per_image

    for epoch in range(train_config.epochs):
        lr_enc, lr_dec = lr_schedule(epoch, train_config)
        order = order_rng.permutation(len(train_samples))
        model.train()
        epoch_losses = []
        for start in range(0, len(order), train_config.batch_size):
            batch_ids = order[start:start + train_config.batch_size]
            batch_loss = 0.0
            model.zero_grad(set_to_none=True)
            for j in batch_ids:
                sample = train_samples[j]
                clicks = sample.combos[(epoch + j) % n_combos]
                img, msk, clk = sample.image, sample.mask, clicks
                if augment_data:
                    img, msk, clk = augment(img, msk, clk,
                                            seed=train_config.seed * 1000003 + epoch * 1009 + int(j))
                img_t, fg_t, bg_t = _to_tensors(img, clk)
                mult = net_config.input_pad_multiple
                img_t, (h, w) = pad_to_multiple(img_t, mult)
                fg_t, _ = pad_to_multiple(fg_t, mult)
                bg_t, _ = pad_to_multiple(bg_t, mult)
                logits = model(img_t, fg_t, bg_t)[:, :, :h, :w]
                sample_loss = loss(logits, torch.from_numpy(msk.astype(np.int64))[None])
                (sample_loss / len(batch_ids)).backward()
                batch_loss += float(sample_loss.detach()) / len(batch_ids)
            torch.nn.utils.clip_grad_norm_(model.parameters(), max_norm=10.0)
            if not np.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}")
            for group, lr in ((enc, lr_enc), (dec, lr_dec)):
                names = [n for n, _ in group]
                params = [p for _, p in group]
                grads = [p.grad for _, p in group]
                vels = [velocity[n] for n in names]
                sgd_step(params, grads, vels, lr, train_config.momentum,
                         train_config.weight_decay, names)
            epoch_losses.append(batch_loss)

        val_j = validation_jaccard(model, val_samples, seed=train_config.seed + 31) \
            if validate else float("nan")
        history.epochs.append(epoch)
        history.loss.append(float(np.mean(epoch_losses)))
        history.lr_encoder.append(lr_enc)
        history.lr_decoder.append(lr_dec)
        history.val_jaccard.append(val_j)
        if progress:
            progress(epoch, history)
    model.eval()
    return model, history


def _to_tensors(image: np.ndarray, clicks: ClickSet):
    h, w = image.shape[:2]
    fg, bg = clickset_to_hint_arrays(clicks, h, w)
    img_t = torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1)[None]
    return img_t, torch.from_numpy(fg.astype(np.float32))[None, None], \
        torch.from_numpy(bg.astype(np.float32))[None, None]
