"""Dataset ingestion and the synthetic lesion generator.

Manifests are line-delimited JSON records pointing at image/mask files.
The synthetic generator renders smooth elliptical blobs with optional low
contrast and hair-like distractors so that desk-scale runs include both
easy and challenging cases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .click_sim import GroundTruthMask


class DataError(ValueError):
    pass


@dataclass
class ManifestEntry:
    id: str
    image: Path
    mask: Path
    label: str  # melanoma | non-melanoma
    split: str  # train | test


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict:
        out: dict[str, int] = {}
        for e in self.entries:
            out[f"split:{e.split}"] = out.get(f"split:{e.split}", 0) + 1
            out[f"label:{e.label}"] = out.get(f"label:{e.label}", 0) + 1
        return out


@dataclass
class LesionSample:
    id: str
    image: np.ndarray  # H x W x 3 uint8
    mask: GroundTruthMask
    label: str
    split: str


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    seen_ids: set[str] = set()
    base = path.parent
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed record: {exc}") from exc
        for key in ("id", "image", "mask", "label", "split"):
            if key not in rec:
                raise DataError(f"{path}:{lineno}: record missing {key!r}")
        if rec["id"] in seen_ids:
            raise DataError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
        seen_ids.add(rec["id"])
        if rec["split"] not in ("train", "test"):
            raise DataError(f"{path}:{lineno}: bad split {rec['split']!r}")
        image_path = (base / rec["image"]).resolve()
        mask_path = (base / rec["mask"]).resolve()
        for p in (image_path, mask_path):
            if not p.exists():
                raise DataError(f"{path}:{lineno}: file not found: {p}")
        entries.append(ManifestEntry(id=rec["id"], image=image_path, mask=mask_path,
                                     label=rec["label"], split=rec["split"]))
    if not entries:
        raise DataError("manifest contains no entries")
    return DatasetManifest(entries=entries)


def load_sample(entry: ManifestEntry) -> LesionSample:
    try:
        image = np.asarray(Image.open(entry.image).convert("RGB"))
    except Exception as exc:
        raise DataError(f"cannot decode image {entry.image}: {exc}") from exc
    try:
        mask_raw = np.asarray(Image.open(entry.mask).convert("L"))
    except Exception as exc:
        raise DataError(f"cannot decode mask {entry.mask}: {exc}") from exc
    if mask_raw.shape != image.shape[:2]:
        raise DataError(
            f"{entry.id}: mask dims {mask_raw.shape} != image dims {image.shape[:2]}")
    mask = (mask_raw >= 128).astype(np.uint8)
    return LesionSample(id=entry.id, image=image,
                        mask=GroundTruthMask.from_array(mask),
                        label=entry.label, split=entry.split)


def _render_blob(size: int, rng: np.random.Generator, low_contrast: bool) -> tuple[np.ndarray, np.ndarray]:
    """One lesion image: 1-3 fused ellipses with a perturbed boundary."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    field = np.zeros((size, size))
    n_ellipses = rng.integers(1, 4)
    for _ in range(n_ellipses):
        cy = rng.uniform(0.35, 0.65) * size
        cx = rng.uniform(0.35, 0.65) * size
        ry = rng.uniform(0.12, 0.26) * size
        rx = rng.uniform(0.12, 0.26) * size
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        field = np.maximum(field, 1.0 - ((u / rx) ** 2 + (v / ry) ** 2))

    # Low-frequency boundary wobble
    freqs = rng.normal(size=(3, 3)) * 0.12
    wobble = np.zeros((size, size))
    for i in range(3):
        for j in range(3):
            wobble += freqs[i, j] * np.sin(
                2 * np.pi * ((i + 1) * yy + (j + 1) * xx) / size + rng.uniform(0, 2 * np.pi))
    mask = ((field + wobble) > 0.0).astype(np.uint8)

    skin = rng.uniform(150, 210)
    lesion = skin - rng.uniform(12, 30) if low_contrast else skin - rng.uniform(60, 110)
    base = np.where(mask == 1, lesion, skin).astype(np.float64)
    base = base + rng.normal(scale=6.0, size=(size, size))

    # Hair-like line distractors
    img = np.repeat(base[:, :, None], 3, axis=2)
    tint = rng.uniform(0.9, 1.1, size=3)
    img = img * tint[None, None, :]
    for _ in range(rng.integers(0, 4)):
        r0, c0 = rng.integers(0, size, 2)
        angle = rng.uniform(0, np.pi)
        length = rng.integers(size // 3, size)
        ts = np.arange(length)
        rr = np.clip((r0 + ts * np.sin(angle)).astype(int), 0, size - 1)
        cc = np.clip((c0 + ts * np.cos(angle)).astype(int), 0, size - 1)
        img[rr, cc] *= 0.45
    return np.clip(img, 0, 255).astype(np.uint8), mask


def _mask_usable(mask: np.ndarray, min_pixels: int) -> bool:
    fg = int(mask.sum())
    return fg >= min_pixels and mask.size - fg >= min_pixels


def make_synthetic_dataset(count: int, image_size: int, seed: int,
                           out_dir: str | Path, low_contrast_fraction: float = 0.25) -> DatasetManifest:
    """Render a deterministic synthetic dataset with an 80/20 train/test split."""
    if count < 1:
        raise DataError("count must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_train = count - max(1, count // 5) if count > 1 else 1
    min_pixels = max(100, (image_size * image_size) // 160)

    lines = []
    entries = []
    for i in range(count):
        low_contrast = rng.uniform() < low_contrast_fraction
        while True:
            image, mask = _render_blob(image_size, rng, low_contrast)
            if _mask_usable(mask, min_pixels):
                break
        sample_id = f"syn{i:04d}"
        image_path = out_dir / f"{sample_id}.png"
        mask_path = out_dir / f"{sample_id}_mask.png"
        Image.fromarray(image).save(image_path)
        Image.fromarray(mask * 255).save(mask_path)
        label = "melanoma" if low_contrast else "non-melanoma"
        split = "train" if i < n_train else "test"
        rec = {"id": sample_id, "image": image_path.name, "mask": mask_path.name,
               "label": label, "split": split}
        lines.append(json.dumps(rec))
        entries.append(ManifestEntry(id=sample_id, image=image_path.resolve(),
                                     mask=mask_path.resolve(), label=label, split=split))
    (out_dir / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    return DatasetManifest(entries=entries)
