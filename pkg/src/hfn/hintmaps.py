"""Click sets and distance-based hint maps.

User clicks are encoded as per-pixel fields of minimum Euclidean distance
to the clicked pixels. One map is built from the foreground clicks and one
from the background clicks; both are normalized to [0, 1] before they enter
the network.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Coord = tuple[int, int]


class ClickError(ValueError):
    pass


def _validate_coords(coords: list[Coord], height: int, width: int, name: str) -> None:
    seen = set()
    for r, c in coords:
        if not (0 <= r < height and 0 <= c < width):
            raise ClickError(f"{name} click ({r}, {c}) out of bounds for {height}x{width} image")
        if (r, c) in seen:
            raise ClickError(f"duplicate {name} click ({r}, {c})")
        seen.add((r, c))


@dataclass
class ClickSet:
    """Foreground and background click coordinates, (row, col) integers."""

    foreground: list[Coord] = field(default_factory=list)
    background: list[Coord] = field(default_factory=list)

    def validate(self, height: int, width: int) -> None:
        _validate_coords(self.foreground, height, width, "foreground")
        _validate_coords(self.background, height, width, "background")
        overlap = set(map(tuple, self.foreground)) & set(map(tuple, self.background))
        if overlap:
            raise ClickError(f"clicks appear in both regions: {sorted(overlap)}")

    def __len__(self) -> int:
        return len(self.foreground) + len(self.background)


@dataclass
class HintMap:
    """Minimum Euclidean distance field to a set of clicks."""

    height: int
    width: int
    values: np.ndarray
    kind: str  # "foreground" or "background"


def compute_hint_map(clicks: list[Coord], height: int, width: int,
                     kind: str = "foreground") -> HintMap:
    """Distance field: values[p] = min over clicked q of ||p - q||_2.

    Exactly zero at the clicked pixels, never larger than the image diagonal.
    """
    if not clicks:
        raise ClickError("hint map requires at least one click")
    _validate_coords(list(map(tuple, clicks)), height, width, kind)
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    dist = np.full((height, width), np.inf)
    for r, c in clicks:
        d = np.sqrt((rows - r) ** 2 + (cols - c) ** 2)
        np.minimum(dist, d, out=dist)
    return HintMap(height=height, width=width, values=dist, kind=kind)


def normalize_hint_map(hint: HintMap) -> np.ndarray:
    """Scale distances by the image diagonal and clip to [0, 1]."""
    diag = math.hypot(hint.height - 1, hint.width - 1)
    if diag == 0:
        return np.zeros_like(hint.values)
    return np.clip(hint.values / diag, 0.0, 1.0)


def clickset_to_hint_arrays(clicks: ClickSet, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (foreground, background) hint fields for network input."""
    fg = compute_hint_map(clicks.foreground, height, width, "foreground")
    bg = compute_hint_map(clicks.background, height, width, "background")
    return normalize_hint_map(fg), normalize_hint_map(bg)


def save_click_file(path: str | Path, clicks: ClickSet, image: str | None = None,
                    seed: int | None = None) -> None:
    record = {
        "image": image,
        "foreground": [[int(r), int(c)] for r, c in clicks.foreground],
        "background": [[int(r), int(c)] for r, c in clicks.background],
        "seed": seed,
    }
    Path(path).write_text(json.dumps(record, indent=2) + "\n")


def load_click_file(path: str | Path) -> tuple[ClickSet, dict]:
    record = json.loads(Path(path).read_text())
    clicks = ClickSet(
        foreground=[(int(r), int(c)) for r, c in record.get("foreground", [])],
        background=[(int(r), int(c)) for r, c in record.get("background", [])],
    )
    return clicks, record
