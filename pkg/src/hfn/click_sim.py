"""Simulated user clicks derived from ground-truth masks.

Clean clicks are spread over the region by banding pixels into equal-count
quantile bands of boundary distance and drawing one click per band, so that
clicks never clutter together. Budgets accumulate: the n-click set is a
prefix of the (n+1)-click set for the same seed. Noisy clicks land on the
wrong side of the lesion boundary at 5-10 pixels distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .hintmaps import ClickSet, Coord

MAX_BUDGET = 6
NOISY_DIST_RANGE = (5.0, 10.0)

# Rank-fraction windows for the k-th accumulated click. Each window avoids
# every quantile boundary j/n for the band counts n at which that click is
# active, so click k sits in its own band under every partition n >= k.
_RANK_WINDOWS = [
    (0.00, 0.15),
    (0.85, 1.00),
    (0.51, 0.58),
    (0.26, 0.33),
    (0.68, 0.74),
    (0.35, 0.48),
]


class SimulationError(ValueError):
    pass


@dataclass
class GroundTruthMask:
    height: int
    width: int
    values: np.ndarray

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "GroundTruthMask":
        arr = np.asarray(arr)
        if not np.isin(arr, (0, 1)).all():
            raise SimulationError("mask values must be binary")
        return cls(height=arr.shape[0], width=arr.shape[1], values=arr.astype(np.uint8))


@dataclass
class ClickBudget:
    n: int

    def __post_init__(self):
        if not 1 <= self.n <= MAX_BUDGET:
            raise SimulationError(f"click budget must be in 1..{MAX_BUDGET}, got {self.n}")


def boundary_distance(mask: np.ndarray, region: str) -> np.ndarray:
    """Per-pixel distance to the lesion boundary, valid on the given region.

    For "fg" the distance is measured from inside the lesion to the nearest
    background pixel; for "bg" from outside to the nearest lesion pixel.
    """
    if region == "fg":
        return ndimage.distance_transform_edt(mask)
    if region == "bg":
        return ndimage.distance_transform_edt(1 - mask)
    raise SimulationError(f"unknown region {region!r}")


def _region_pixels_sorted(mask: GroundTruthMask, region: str) -> np.ndarray:
    """Region pixels as an (N, 2) array sorted by (boundary distance, row, col)."""
    want = 1 if region == "fg" else 0
    rows, cols = np.nonzero(mask.values == want)
    if rows.size == 0:
        raise SimulationError(f"mask has no {region} pixels")
    dist = boundary_distance(mask.values, region)[rows, cols]
    order = np.lexsort((cols, rows, dist))
    return np.stack([rows[order], cols[order]], axis=1)


def distance_bands(mask: GroundTruthMask, region: str, n_bands: int) -> list[set[Coord]]:
    """Split a region into disjoint equal-count bands of boundary distance."""
    if n_bands < 1:
        raise SimulationError("n_bands must be >= 1")
    pixels = _region_pixels_sorted(mask, region)
    if n_bands > len(pixels):
        raise SimulationError(
            f"n_bands={n_bands} exceeds {region} pixel count {len(pixels)}")
    chunks = np.array_split(pixels, n_bands)
    return [set(map(tuple, chunk.tolist())) for chunk in chunks]


def _draw_region_clicks(mask: GroundTruthMask, region: str, n: int,
                        rng: np.random.Generator) -> list[Coord]:
    pixels = _region_pixels_sorted(mask, region)
    count = len(pixels)
    if n > count:
        raise SimulationError(f"{region} region too small for {n} bands")
    clicks: list[Coord] = []
    for k in range(n):
        lo_f, hi_f = _RANK_WINDOWS[k]
        lo = int(np.ceil(lo_f * count))
        hi = max(lo + 1, int(np.floor(hi_f * count)))
        hi = min(hi, count)
        lo = min(lo, hi - 1)
        pool = pixels[lo:hi]
        pick = tuple(pool[rng.integers(len(pool))].tolist())
        while pick in clicks:
            pick = tuple(pool[rng.integers(len(pool))].tolist())
        clicks.append(pick)
    return clicks


def _rng_for(seed: int, region: str) -> np.random.Generator:
    return np.random.default_rng([seed, 0 if region == "fg" else 1])


def simulate_clicks(mask: GroundTruthMask, n: int | ClickBudget, seed: int) -> ClickSet:
    """Simulate n clean clicks per region, accumulated across budgets.

    Deterministic in (mask, n, seed); the result for budget n is a prefix of
    the result for budget n+1 because both regions draw from a fixed
    per-seed stream of band windows.
    """
    budget = n if isinstance(n, ClickBudget) else ClickBudget(n)
    fg = _draw_region_clicks(mask, "fg", budget.n, _rng_for(seed, "fg"))
    bg = _draw_region_clicks(mask, "bg", budget.n, _rng_for(seed, "bg"))
    return ClickSet(foreground=fg, background=bg)


def _noisy_pool(mask: GroundTruthMask, click_region: str) -> np.ndarray:
    # Noisy fg clicks sit outside the lesion, noisy bg clicks inside.
    side = "bg" if click_region == "fg" else "fg"
    want = 0 if side == "bg" else 1
    dist = boundary_distance(mask.values, side)
    lo, hi = NOISY_DIST_RANGE
    eligible = (mask.values == want) & (dist >= lo) & (dist <= hi)
    rows, cols = np.nonzero(eligible)
    return np.stack([rows, cols], axis=1)


def simulate_noisy_clicks(mask: GroundTruthMask, n_fg_noisy: int, n_bg_noisy: int,
                          seed: int, avoid: set[Coord] | None = None) -> ClickSet:
    """Erroneous clicks 5-10 pixels on the wrong side of the boundary."""
    avoid = avoid or set()
    out: dict[str, list[Coord]] = {"fg": [], "bg": []}
    for region, count in (("fg", n_fg_noisy), ("bg", n_bg_noisy)):
        if count == 0:
            continue
        pool = _noisy_pool(mask, region)
        taken = set(avoid)
        rng = np.random.default_rng([seed, 2 if region == "fg" else 3])
        candidates = [tuple(p.tolist()) for p in pool]
        candidates = [p for p in candidates if p not in taken]
        if len(candidates) < count:
            raise SimulationError(
                f"no eligible pixel in the 5-10 band for noisy {region} clicks")
        idx = rng.choice(len(candidates), size=count, replace=False)
        out[region] = [candidates[i] for i in idx]
        avoid |= set(out[region])
    return ClickSet(foreground=out["fg"], background=out["bg"])


def simulate_clicks_with_noise(mask: GroundTruthMask, total: int, n_fg_noisy: int,
                               n_bg_noisy: int, seed: int) -> ClickSet:
    """Total clicks per region with the last few replaced by noisy ones."""
    if n_fg_noisy > total or n_bg_noisy > total:
        raise SimulationError("noisy counts exceed the per-region total")
    clean = simulate_clicks(mask, total, seed)
    avoid = set(clean.foreground) | set(clean.background)
    noisy = simulate_noisy_clicks(mask, n_fg_noisy, n_bg_noisy, seed, avoid=avoid)
    return ClickSet(
        foreground=clean.foreground[: total - n_fg_noisy] + noisy.foreground,
        background=clean.background[: total - n_bg_noisy] + noisy.background,
    )
