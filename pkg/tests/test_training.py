import math

import numpy as np
import pytest
import torch

from hfn.click_sim import GroundTruthMask, simulate_clicks
from hfn.data import make_synthetic_dataset
from hfn.hintmaps import ClickSet
from hfn.network import NetworkConfig
from hfn.training import (TrainConfig, TrainingError, augment, loss, lr_schedule,
                          preprocess, sample_click_combinations, sgd_step, train)


class TestPreprocess:
    def test_large_image_scaled_to_512(self):
        image = np.zeros((4499, 6748, 3), np.uint8)
        mask = np.zeros((4499, 6748), np.uint8)
        img, msk = preprocess(image, mask)
        # 341 = round(4499 * 512 / 6748)
        assert img.shape[:2] == (341, 512)
        assert msk.shape == (341, 512)

    def test_small_image_unchanged(self):
        image = np.zeros((400, 300, 3), np.uint8)
        mask = np.zeros((400, 300), np.uint8)
        img, msk = preprocess(image, mask)
        assert img.shape[:2] == (400, 300)
        assert img is image

    def test_mask_stays_binary(self):
        rng = np.random.default_rng(0)
        mask = (rng.uniform(size=(600, 900)) > 0.5).astype(np.uint8)
        image = np.zeros((600, 900, 3), np.uint8)
        _, msk = preprocess(image, mask)
        assert set(np.unique(msk)) <= {0, 1}

    def test_empty_image_rejected(self):
        with pytest.raises(TrainingError, match="empty"):
            preprocess(np.zeros((0, 0, 3), np.uint8), np.zeros((0, 0), np.uint8))


def blob_sample(seed=0, size=64):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = rng.integers(24, 40, 2)
    mask = ((yy - cy) ** 2 + (xx - cx) ** 2 <= 14 ** 2).astype(np.uint8)
    image = (mask * 100 + 100 + rng.normal(0, 5, (size, size))).clip(0, 255)
    return np.repeat(image[:, :, None], 3, 2).astype(np.uint8), mask


class TestAugment:
    def test_clicks_stay_on_correct_side(self):
        image, mask = blob_sample()
        clicks = simulate_clicks(GroundTruthMask.from_array(mask), 3, seed=1)
        for seed in range(100):
            img, msk, clk = augment(image, mask, clicks, seed=seed)
            assert clk.foreground and clk.background
            for r, c in clk.foreground:
                assert msk[r, c] == 1
            for r, c in clk.background:
                assert msk[r, c] == 0

    def test_deterministic(self):
        image, mask = blob_sample()
        clicks = simulate_clicks(GroundTruthMask.from_array(mask), 2, seed=1)
        a = augment(image, mask, clicks, seed=7)
        b = augment(image, mask, clicks, seed=7)
        assert np.array_equal(a[0], b[0]) and a[2] == b[2]

    def test_shapes_preserved(self):
        image, mask = blob_sample()
        clicks = simulate_clicks(GroundTruthMask.from_array(mask), 2, seed=1)
        img, msk, _ = augment(image, mask, clicks, seed=3)
        assert img.shape == image.shape and msk.shape == mask.shape


class TestLoss:
    def test_confident_correct_prediction_near_zero(self):
        gt = torch.tensor([[1, 0], [0, 1]])
        logits = torch.zeros(2, 2, 2)
        margin = 20.0
        logits[1] = torch.where(gt == 1, margin, -margin)
        logits[0] = -logits[1]
        assert loss(logits, gt).item() <= 1e-6

    def test_uniform_prediction_is_ln2(self):
        logits = torch.zeros(2, 4, 4)
        gt = (torch.rand(4, 4) > 0.5).long()
        assert loss(logits, gt).item() == pytest.approx(math.log(2), abs=1e-6)

    def test_hand_computed_2x2(self):
        logits = torch.tensor([[[1.0, 0.0], [2.0, -1.0]],
                               [[0.0, 1.0], [-2.0, 3.0]]])
        gt = torch.tensor([[1, 0], [1, 0]])
        # per pixel: -log softmax(correct class); pixel order (0,0),(0,1),(1,0),(1,1)
        expected = np.mean([
            -np.log(np.exp(0) / (np.exp(1) + np.exp(0))),
            -np.log(np.exp(0) / (np.exp(0) + np.exp(1))),
            -np.log(np.exp(-2) / (np.exp(2) + np.exp(-2))),
            -np.log(np.exp(-1) / (np.exp(-1) + np.exp(3))),
        ])
        assert loss(logits, gt).item() == pytest.approx(expected, abs=1e-6)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(TrainingError, match="mask"):
            loss(torch.zeros(2, 4, 4), torch.zeros(5, 5))


class TestLrSchedule:
    def test_paper_rates(self):
        cfg = TrainConfig()
        assert lr_schedule(0, cfg) == (0.0005, 0.005)
        assert lr_schedule(49, cfg) == (0.0005, 0.005)
        assert lr_schedule(50, cfg) == (0.00025, 0.0025)
        assert lr_schedule(149, cfg) == (0.000125, 0.00125)

    def test_non_increasing_piecewise_constant(self):
        cfg = TrainConfig()
        rates = [lr_schedule(e, cfg)[0] for e in range(200)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert len(set(rates)) == 4  # 200 epochs span 4 plateaus


class TestSgdStep:
    def test_zero_gradient_is_fixed_point(self):
        p = torch.tensor([1.0, 2.0])
        v = torch.zeros(2)
        sgd_step([p], [torch.zeros(2)], [v], lr=0.1, momentum=0.9, weight_decay=0.0)
        assert torch.equal(p, torch.tensor([1.0, 2.0]))

    def test_single_scalar_hand_case(self):
        p = torch.tensor([1.0])
        v = torch.zeros(1)
        sgd_step([p], [torch.ones(1)], [v], lr=0.1, momentum=0.9, weight_decay=0.0)
        assert v.item() == pytest.approx(-0.1)
        assert p.item() == pytest.approx(0.9)

    def test_two_steps_constant_gradient(self):
        p = torch.tensor([0.0])
        v = torch.zeros(1)
        lr, mom = 0.1, 0.9
        for _ in range(2):
            sgd_step([p], [torch.ones(1)], [v], lr=lr, momentum=mom, weight_decay=0.0)
        assert v.item() == pytest.approx(-lr * (1 + mom))

    def test_zero_lr_is_identity(self):
        p = torch.tensor([3.0])
        sgd_step([p], [torch.ones(1)], [torch.zeros(1)], lr=0.0, momentum=0.9,
                 weight_decay=0.01)
        assert p.item() == 3.0

    def test_non_finite_gradient_named(self):
        with pytest.raises(TrainingError, match="conv_w"):
            sgd_step([torch.ones(1)], [torch.tensor([float("nan")])],
                     [torch.zeros(1)], lr=0.1, momentum=0.9, weight_decay=0.0,
                     names=["conv_w"])


def test_click_combinations_are_accumulated_budgets_1_to_6():
    _, mask = blob_sample()
    combos = sample_click_combinations(GroundTruthMask.from_array(mask), 6, seed=4)
    assert [len(c.foreground) for c in combos] == [1, 2, 3, 4, 5, 6]
    for a, b in zip(combos, combos[1:]):
        assert b.foreground[:len(a.foreground)] == a.foreground


TINY_NET = NetworkConfig(stages=2, blocks_per_stage=[1, 1], channels_per_stage=[4, 8],
                         stem_downsample=2, input_pad_multiple=8)


@pytest.fixture(scope="module")
def small_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("trainset")
    return make_synthetic_dataset(5, 48, seed=0, out_dir=out)


def test_overfit_single_sample_loss_decreases(small_manifest):
    cfg = TrainConfig(epochs=80, batch_size=1, seed=0, lr_encoder=0.002,
                      lr_decoder=0.02, lr_halving_period_epochs=100)
    from hfn.data import DatasetManifest
    one = DatasetManifest(entries=small_manifest.entries[:1])
    one.entries[0].split = "train"
    _, history = train(one, TINY_NET, cfg, augment_data=False, validate=False)
    assert history.loss[-1] < history.loss[0]
    assert history.loss[-1] < 0.2


def test_training_replay_is_deterministic(small_manifest):
    cfg = TrainConfig(epochs=2, seed=3)
    _, h1 = train(small_manifest, TINY_NET, cfg)
    _, h2 = train(small_manifest, TINY_NET, cfg)
    assert h1.loss == h2.loss
    assert h1.val_jaccard == h2.val_jaccard


def test_history_length_and_rates(small_manifest):
    cfg = TrainConfig(epochs=3, seed=1)
    model, history = train(small_manifest, TINY_NET, cfg, validate=False)
    assert len(history.loss) == 3
    assert history.lr_encoder == [0.0005] * 3
    assert history.lr_decoder == [0.005] * 3
