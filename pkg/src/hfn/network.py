"""Hyper-fusion segmentation network.

Three residual encoder branches (image, foreground hints, background hints)
are fused stage by stage with a SUM + ReLU, and a decoder of per-stage
integration blocks (attention gating, upsample-and-sum fusion, chained
residual pooling) recovers a two-class per-pixel prediction.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .hintmaps import ClickSet, clickset_to_hint_arrays

CHECKPOINT_FORMAT_VERSION = 1


class NetworkError(ValueError):
    pass


@dataclass
class NetworkConfig:
    """Stage/channel schedule plus the decoder knobs."""

    stages: int = 4
    blocks_per_stage: list[int] = field(default_factory=lambda: [1, 1, 1, 1])
    channels_per_stage: list[int] = field(default_factory=lambda: [8, 16, 32, 64])
    stem_downsample: int = 4
    gcu_reduction: int = 4
    crpu_chain_length: int = 4
    input_pad_multiple: int = 32
    use_him: bool = True

    def __post_init__(self):
        if len(self.blocks_per_stage) != self.stages or len(self.channels_per_stage) != self.stages:
            raise NetworkError("blocks/channels lists must match stage count")
        if any(c <= 0 for c in self.channels_per_stage):
            raise NetworkError("channel counts must be positive")
        if self.crpu_chain_length < 1:
            raise NetworkError("crpu_chain_length must be >= 1")
        if self.stem_downsample not in (2, 4):
            raise NetworkError("stem_downsample must be 2 or 4")

    @classmethod
    def paper_scale(cls) -> "NetworkConfig":
        return cls(stages=4, blocks_per_stage=[3, 4, 23, 3],
                   channels_per_stage=[256, 512, 1024, 2048])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


def _hint_width(c: int) -> int:
    return max(1, c // 2)


class BottleneckBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        mid = max(1, out_ch // 4)
        self.conv1 = nn.Conv2d(in_ch, mid, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(mid)
        self.conv2 = nn.Conv2d(mid, mid, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(mid)
        self.conv3 = nn.Conv2d(mid, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch))
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        y = F.relu(self.bn1(self.conv1(x)))
        y = F.relu(self.bn2(self.conv2(y)))
        y = self.bn3(self.conv3(y))
        return F.relu(y + self.shortcut(x))


class Stem(nn.Module):
    """Input stem; downsamples by 2 (conv) or 4 (conv + max pool)."""

    def __init__(self, in_ch: int, out_ch: int, downsample: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 7, stride=2, padding=3, bias=False)
        self.bn = nn.BatchNorm2d(out_ch)
        self.pool = nn.MaxPool2d(3, stride=2, padding=1) if downsample == 4 else nn.Identity()

    def forward(self, x):
        return self.pool(F.relu(self.bn(self.conv(x))))


class Stage(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, blocks: int, stride: int):
        super().__init__()
        layers = [BottleneckBlock(in_ch, out_ch, stride=stride)]
        layers += [BottleneckBlock(out_ch, out_ch) for _ in range(blocks - 1)]
        self.blocks = nn.Sequential(*layers)

    def forward(self, x):
        return self.blocks(x)


class Branch(nn.Module):
    """One encoder branch: stem plus the residual stages."""

    def __init__(self, in_ch: int, config: NetworkConfig, width_fn=lambda c: c):
        super().__init__()
        chans = [width_fn(c) for c in config.channels_per_stage]
        self.stem = Stem(in_ch, chans[0], config.stem_downsample)
        stages = []
        prev = chans[0]
        for t in range(config.stages):
            stride = 1 if t == 0 else 2
            stages.append(Stage(prev, chans[t], config.blocks_per_stage[t], stride))
            prev = chans[t]
        self.stages = nn.ModuleList(stages)
        self.out_channels = chans


class GuidanceConstraintUnit(nn.Module):
    """Channel-then-spatial attention from hint features gating image features."""

    def __init__(self, channels: int, reduction: int, spatial_kernel: int = 7):
        super().__init__()
        hidden = max(1, (2 * channels) // reduction)
        self.fc1 = nn.Conv2d(2 * channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)
        self.spatial_conv = nn.Conv2d(2, 1, spatial_kernel, padding=spatial_kernel // 2)
        self.spatial_bn = nn.BatchNorm2d(1)

    def forward(self, fg_feat, bg_feat, img_feat):
        if fg_feat.shape != bg_feat.shape or fg_feat.shape[1] != img_feat.shape[1]:
            raise NetworkError("gcu channel mismatch between hint and image features")
        hints = torch.cat([fg_feat, bg_feat], dim=1)
        mx = F.adaptive_max_pool2d(hints, 1)
        av = F.adaptive_avg_pool2d(hints, 1)
        channel = torch.sigmoid(self.fc2(F.relu(self.fc1(mx))) +
                                self.fc2(F.relu(self.fc1(av))))
        sp_mx = hints.max(dim=1, keepdim=True).values
        sp_av = hints.mean(dim=1, keepdim=True)
        spatial = torch.sigmoid(F.relu(self.spatial_bn(
            self.spatial_conv(torch.cat([sp_mx, sp_av], dim=1)))))
        return img_feat * channel * spatial


class FusionUnit(nn.Module):
    """Project the previous decoder features, upsample, and sum."""

    def __init__(self, prev_channels: int | None, channels: int):
        super().__init__()
        self.proj = nn.Conv2d(prev_channels, channels, 1) if prev_channels else None

    def forward(self, prev, current):
        if prev is None:
            return current
        if self.proj is None:
            raise NetworkError("fusion unit built without a previous-stage projection")
        prev = self.proj(prev)
        if prev.shape[-2:] != current.shape[-2:]:
            prev = F.interpolate(prev, size=current.shape[-2:], mode="bilinear",
                                 align_corners=False)
        if prev.shape[1] != current.shape[1]:
            raise NetworkError("fusion unit channel mismatch after projection")
        return current + prev


class ChainedResidualPooling(nn.Module):
    """Stride-1 pooled context accumulated back onto the feature map."""

    def __init__(self, channels: int, chain_length: int):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=1, bias=False)
            for _ in range(chain_length))
        self.pool = nn.MaxPool2d(5, stride=1, padding=2)

    def forward(self, x):
        y = F.relu(x)
        path = y
        for conv in self.convs:
            path = conv(self.pool(path))
            y = y + path
        return y


class IntegrationModule(nn.Module):
    """Decoder block: attention gating, fusion with the deeper stage, refinement."""

    def __init__(self, channels: int, prev_channels: int | None, config: NetworkConfig):
        super().__init__()
        self.use_him = config.use_him
        if self.use_him:
            self.gcu = GuidanceConstraintUnit(channels, config.gcu_reduction)
            self.crpu = ChainedResidualPooling(channels, config.crpu_chain_length)
        self.fu = FusionUnit(prev_channels, channels)

    def forward(self, fg_feat, bg_feat, img_feat, prev):
        x = self.gcu(fg_feat, bg_feat, img_feat) if self.use_him else img_feat
        x = self.fu(prev, x)
        if self.use_him:
            x = self.crpu(x)
        return x


class HFN(nn.Module):
    """Full network: three-branch fused encoder plus integration decoder."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        self.image_branch = Branch(3, config)
        self.fg_branch = Branch(1, config, width_fn=_hint_width)
        self.bg_branch = Branch(1, config, width_fn=_hint_width)

        stem_hint = _hint_width(config.channels_per_stage[0])
        stem_img = config.channels_per_stage[0]
        self.fg_stem_proj = nn.Conv2d(stem_hint, stem_img, 1, bias=False)
        self.bg_stem_proj = nn.Conv2d(stem_hint, stem_img, 1, bias=False)
        self.fg_projs = nn.ModuleList(
            nn.Conv2d(_hint_width(c), c, 1, bias=False) for c in config.channels_per_stage)
        self.bg_projs = nn.ModuleList(
            nn.Conv2d(_hint_width(c), c, 1, bias=False) for c in config.channels_per_stage)

        decoders = []
        prev_ch: int | None = None
        for t in reversed(range(config.stages)):
            decoders.append(IntegrationModule(config.channels_per_stage[t], prev_ch, config))
            prev_ch = config.channels_per_stage[t]
        self.decoder = nn.ModuleList(decoders)  # deepest first
        self.classifier = nn.Conv2d(config.channels_per_stage[0], 2, 1)

    def encode(self, image, fg_hint, bg_hint, image_only: bool = False,
               zero_hints: bool = False):
        """Per-stage fused features plus projected hint-branch features.

        ``image_only`` skips the hint branches entirely (the SUM degenerates
        to the image path); ``zero_hints`` runs them but zeroes their
        contribution, used by the hint-free evaluation baseline.
        """
        if not image_only and (image.shape[-2:] != fg_hint.shape[-2:]
                               or image.shape[-2:] != bg_hint.shape[-2:]):
            raise NetworkError("image and hint maps must share spatial dimensions")
        img = self.image_branch.stem(image)
        if image_only:
            f = b = None
            fused_in = F.relu(img)
        else:
            f = self.fg_branch.stem(fg_hint)
            b = self.bg_branch.stem(bg_hint)
            pf, pb = self.fg_stem_proj(f), self.bg_stem_proj(b)
            if zero_hints:
                pf, pb = pf * 0, pb * 0
            fused_in = F.relu(img + pf + pb)

        fused_stages, fg_stages, bg_stages = [], [], []
        for t in range(self.config.stages):
            img = self.image_branch.stages[t](fused_in)
            if image_only:
                pf = pb = None
                fused_in = F.relu(img)
            else:
                f = self.fg_branch.stages[t](f)
                b = self.bg_branch.stages[t](b)
                pf, pb = self.fg_projs[t](f), self.bg_projs[t](b)
                if zero_hints:
                    pf, pb = pf * 0, pb * 0
                fused_in = F.relu(img + pf + pb)
            fused_stages.append(img)
            fg_stages.append(pf)
            bg_stages.append(pb)
        return fused_stages, fg_stages, bg_stages

    def decode(self, fused_stages, fg_stages, bg_stages, out_size):
        x = None
        for i, module in enumerate(self.decoder):
            t = self.config.stages - 1 - i
            fg = fg_stages[t] if fg_stages[t] is not None else torch.zeros_like(fused_stages[t])
            bg = bg_stages[t] if bg_stages[t] is not None else torch.zeros_like(fused_stages[t])
            x = module(fg, bg, fused_stages[t], x)
        x = F.interpolate(x, size=out_size, mode="bilinear", align_corners=False)
        return self.classifier(x)

    def forward(self, image, fg_hint, bg_hint, zero_hints: bool = False):
        """Logits (N, 2, H, W) for an already padded input."""
        fused, fg_s, bg_s = self.encode(image, fg_hint, bg_hint, zero_hints=zero_hints)
        return self.decode(fused, fg_s, bg_s, image.shape[-2:])


def init_params(config: NetworkConfig, seed: int) -> HFN:
    """Deterministic variance-scaled initialization."""
    torch.manual_seed(seed)
    model = HFN(config)
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    # The pooling chain accumulates onto its input; start it near identity so
    # activations do not compound across decoder stages.
    for m in model.modules():
        if isinstance(m, ChainedResidualPooling):
            for conv in m.convs:
                with torch.no_grad():
                    conv.weight.mul_(0.1)
    # Open the attention gates at init (sigmoid(2) per factor); a closed start
    # of sigmoid(0)^2 = 0.25x starves the decoder of signal.
    for m in model.modules():
        if isinstance(m, GuidanceConstraintUnit):
            nn.init.ones_(m.fc2.bias)
            nn.init.constant_(m.spatial_bn.bias, 2.0)
    nn.init.normal_(model.classifier.weight, std=0.01)
    nn.init.zeros_(model.classifier.bias)
    return model


def pad_to_multiple(arr: torch.Tensor, multiple: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad the last two dims up to a multiple; returns original (H, W)."""
    h, w = arr.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        arr = F.pad(arr, (0, pw, 0, ph), mode="reflect")
    return arr, (h, w)


def prepare_inputs(image: np.ndarray, clicks: ClickSet,
                   dtype: torch.dtype = torch.float32) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Image (HxWx3 uint8) and clicks to normalized network tensors (unpadded)."""
    h, w = image.shape[:2]
    clicks.validate(h, w)
    if not clicks.foreground or not clicks.background:
        raise NetworkError("forward pass requires at least one foreground and one background click")
    fg, bg = clickset_to_hint_arrays(clicks, h, w)
    img_t = torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1)[None].to(dtype)
    fg_t = torch.from_numpy(fg)[None, None].to(dtype)
    bg_t = torch.from_numpy(bg)[None, None].to(dtype)
    return img_t, fg_t, bg_t


@torch.no_grad()
def predict_mask(model: HFN, image: np.ndarray, clicks: ClickSet,
                 zero_hints: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """(probability map, binary mask at 0.5) at the image's resolution."""
    model.eval()
    dtype = next(model.parameters()).dtype
    img_t, fg_t, bg_t = prepare_inputs(image, clicks, dtype)
    h, w = image.shape[:2]
    mult = model.config.input_pad_multiple
    img_t, _ = pad_to_multiple(img_t, mult)
    fg_t, _ = pad_to_multiple(fg_t, mult)
    bg_t, _ = pad_to_multiple(bg_t, mult)
    logits = model(img_t, fg_t, bg_t, zero_hints=zero_hints)[:, :, :h, :w]
    prob = torch.softmax(logits, dim=1)[0, 1].cpu().numpy()
    return prob, (prob >= 0.5).astype(np.uint8)


def save_checkpoint(path, model: HFN, metadata: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "metadata": metadata or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[HFN, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise NetworkError(f"unsupported checkpoint format: {payload.get('format_version')}")
    config = NetworkConfig.from_dict(payload["config"])
    model = HFN(config)
    expected = model.state_dict()
    loaded = payload["state_dict"]
    if set(expected) != set(loaded):
        missing = set(expected) ^ set(loaded)
        raise NetworkError(f"checkpoint parameter names do not match config: {sorted(missing)[:5]}")
    for name, tensor in expected.items():
        if loaded[name].shape != tensor.shape:
            raise NetworkError(
                f"checkpoint shape mismatch for {name}: {tuple(loaded[name].shape)} "
                f"vs expected {tuple(tensor.shape)}")
    model.load_state_dict(loaded)
    model.eval()
    return model, payload.get("metadata", {})
