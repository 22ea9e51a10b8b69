import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfn.hintmaps import (ClickError, ClickSet, compute_hint_map, load_click_file,
                          normalize_hint_map, save_click_file)


def brute_force_distance_field(clicks, height, width):
    """O(N*K) double loop used as the oracle for every fast path."""
    out = np.empty((height, width))
    for r in range(height):
        for c in range(width):
            out[r, c] = min(math.hypot(r - qr, c - qc) for qr, qc in clicks)
    return out


def test_single_click_corner():
    hm = compute_hint_map([(0, 0)], 3, 3)
    assert hm.values[0, 0] == 0.0
    assert hm.values[2, 2] == pytest.approx(2 * math.sqrt(2), abs=1e-12)


def test_click_at_every_pixel_gives_zero_field():
    clicks = [(r, c) for r in range(4) for c in range(4)]
    hm = compute_hint_map(clicks, 4, 4)
    assert np.all(hm.values == 0.0)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = rng.integers(1, 4)
        clicks = set()
        while len(clicks) < n:
            clicks.add((int(rng.integers(16)), int(rng.integers(16))))
        clicks = sorted(clicks)
        hm = compute_hint_map(clicks, 16, 16)
        oracle = brute_force_distance_field(clicks, 16, 16)
        assert np.max(np.abs(hm.values - oracle)) <= 1e-9


def test_empty_clicks_rejected():
    with pytest.raises(ClickError, match="at least one click"):
        compute_hint_map([], 8, 8)


def test_out_of_bounds_rejected():
    with pytest.raises(ClickError, match="out of bounds"):
        compute_hint_map([(8, 0)], 8, 8)


def test_values_bounded_by_diagonal():
    hm = compute_hint_map([(0, 0)], 10, 20)
    assert hm.values.max() <= math.hypot(9, 19) + 1e-12


def test_adding_click_never_increases_values():
    base = compute_hint_map([(2, 3)], 12, 12).values
    more = compute_hint_map([(2, 3), (9, 9)], 12, 12).values
    assert np.all(more <= base + 1e-12)


@given(dr=st.integers(-3, 3), dc=st.integers(-3, 3))
@settings(max_examples=30, deadline=None)
def test_lipschitz_in_click_position(dr, dc):
    a = compute_hint_map([(6, 6)], 16, 16).values
    b = compute_hint_map([(6 + dr, 6 + dc)], 16, 16).values
    displacement = math.hypot(dr, dc)
    assert np.max(np.abs(a - b)) <= displacement + 1e-9


def test_normalize_zero_map():
    hm = compute_hint_map([(r, c) for r in range(3) for c in range(3)], 3, 3)
    assert np.all(normalize_hint_map(hm) == 0.0)


def test_normalize_corner_click_4x4():
    # Farthest pixel (3,3) is the opposite corner at exactly diagonal distance.
    hm = compute_hint_map([(0, 0)], 4, 4)
    norm = normalize_hint_map(hm)
    diag = math.hypot(3, 3)
    assert norm[3, 3] == pytest.approx(1.0)
    assert norm[0, 3] == pytest.approx(3 / diag)
    assert norm[2, 1] == pytest.approx(math.hypot(2, 1) / diag)


def test_normalize_stays_in_unit_interval():
    rng = np.random.default_rng(3)
    for _ in range(10):
        clicks = [(int(rng.integers(9)), int(rng.integers(17)))]
        norm = normalize_hint_map(compute_hint_map(clicks, 9, 17))
        assert norm.min() >= 0.0 and norm.max() <= 1.0


def test_clickset_validation():
    cs = ClickSet(foreground=[(1, 1)], background=[(1, 1)])
    with pytest.raises(ClickError, match="both regions"):
        cs.validate(4, 4)
    cs = ClickSet(foreground=[(1, 1), (1, 1)], background=[])
    with pytest.raises(ClickError, match="duplicate"):
        cs.validate(4, 4)


def test_click_file_round_trip(tmp_path):
    cs = ClickSet(foreground=[(1, 2), (3, 4)], background=[(0, 0)])
    path = tmp_path / "clicks.json"
    save_click_file(path, cs, image="img.png", seed=5)
    loaded, record = load_click_file(path)
    assert loaded == cs
    assert record["image"] == "img.png"
    assert record["seed"] == 5
