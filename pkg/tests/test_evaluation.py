import numpy as np
import pytest

from hfn.evaluation import (ConfusionCounts, EvaluationError, confusion, mean_metrics,
                            metrics, pr_curve, select_challenging, write_report)


def brute_force_confusion(pred, gt):
    tp = fp = tn = fn = 0
    for r in range(pred.shape[0]):
        for c in range(pred.shape[1]):
            if pred[r, c] and gt[r, c]:
                tp += 1
            elif pred[r, c] and not gt[r, c]:
                fp += 1
            elif not pred[r, c] and gt[r, c]:
                fn += 1
            else:
                tn += 1
    return tp, fp, tn, fn


class TestConfusion:
    def test_matches_brute_force_on_random_masks(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            pred = rng.integers(0, 2, (8, 8))
            gt = rng.integers(0, 2, (8, 8))
            got = confusion(pred, gt)
            assert (got.tp, got.fp, got.tn, got.fn) == brute_force_confusion(pred, gt)
            assert got.total == 64

    def test_shape_mismatch_rejected(self):
        with pytest.raises(EvaluationError, match="shape"):
            confusion(np.zeros((4, 4)), np.zeros((4, 5)))


class TestMetrics:
    def test_hand_computed_case(self):
        m = metrics(ConfusionCounts(tp=6, fp=2, tn=10, fn=2))
        assert m.jaccard == pytest.approx(0.6)
        assert m.sensitivity == pytest.approx(0.75)
        assert m.specificity == pytest.approx(10 / 12)
        assert m.accuracy == pytest.approx(0.8)

    def test_perfect_prediction(self):
        m = metrics(ConfusionCounts(tp=5, fp=0, tn=11, fn=0))
        assert (m.jaccard, m.sensitivity, m.specificity, m.accuracy) == (1, 1, 1, 1)

    def test_empty_gt_and_empty_prediction_vacuously_perfect(self):
        m = metrics(ConfusionCounts(tp=0, fp=0, tn=16, fn=0))
        assert m.jaccard == 1.0
        assert m.sensitivity == 1.0

    def test_all_background_predicted_on_foreground_gt(self):
        m = metrics(ConfusionCounts(tp=0, fp=0, tn=0, fn=16))
        assert m.jaccard == 0.0
        assert m.specificity == 1.0

    def test_empty_counts_rejected(self):
        with pytest.raises(EvaluationError):
            metrics(ConfusionCounts(0, 0, 0, 0))

    def test_jaccard_bounded_by_sensitivity(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            tp, fp, tn, fn = rng.integers(0, 20, 4)
            if tp + fp + tn + fn == 0:
                continue
            m = metrics(ConfusionCounts(int(tp), int(fp), int(tn), int(fn)))
            assert m.jaccard <= m.sensitivity + 1e-12


def test_mean_metrics_averages_fields():
    a = metrics(ConfusionCounts(tp=6, fp=2, tn=10, fn=2))
    b = metrics(ConfusionCounts(tp=5, fp=0, tn=11, fn=0))
    m = mean_metrics([a, b])
    assert m.jaccard == pytest.approx(0.8)
    assert m.accuracy == pytest.approx(0.9)
    with pytest.raises(EvaluationError):
        mean_metrics([])


class TestPrCurve:
    def test_extreme_thresholds(self):
        probs = [np.array([[0.9, 0.1], [0.6, 0.2]])]
        gts = [np.array([[1, 0], [1, 0]])]
        curve = pr_curve(probs, gts, n_thresholds=11)
        tau0 = curve[0]
        assert tau0[1] == pytest.approx(0.5)  # everything predicted positive
        assert tau0[2] == 1.0
        tau1 = curve[-1]
        assert tau1[1] == 1.0  # no pixel reaches prob 1.0: convention kicks in
        assert tau1[2] == 0.0

    def test_recall_non_increasing_in_threshold(self):
        rng = np.random.default_rng(2)
        probs = [rng.uniform(size=(16, 16)) for _ in range(3)]
        gts = [rng.integers(0, 2, (16, 16)) for _ in range(3)]
        curve = pr_curve(probs, gts)
        recalls = [r for _, _, r in curve]
        assert all(a >= b - 1e-12 for a, b in zip(recalls, recalls[1:]))

    def test_oracle_at_single_threshold(self):
        probs = [np.array([[0.8, 0.3]])]
        gts = [np.array([[1, 1]])]
        curve = dict((round(t, 3), (p, r)) for t, p, r in pr_curve(probs, gts, 11))
        p, r = curve[0.5]
        assert p == 1.0 and r == pytest.approx(0.5)

    def test_empty_gt_gives_unit_recall(self):
        curve = pr_curve([np.array([[0.4]])], [np.array([[0]])], 3)
        assert all(r == 1.0 for _, _, r in curve)


class TestSelectChallenging:
    def test_bottom_fraction_with_tie_break(self):
        scores = {"d": 0.5, "a": 0.2, "c": 0.2, "b": 0.9, "e": 0.1}
        assert select_challenging(scores, 0.4) == ["e", "a"]

    def test_ties_resolved_by_id(self):
        scores = {"b": 0.3, "a": 0.3, "c": 0.3, "d": 0.3, "e": 0.3}
        assert select_challenging(scores, 0.2) == ["a"]

    def test_floor_rounding(self):
        scores = {f"i{k}": float(k) for k in range(7)}
        assert len(select_challenging(scores, 0.2)) == 1

    def test_invalid_fraction(self):
        with pytest.raises(EvaluationError, match="fraction"):
            select_challenging({"a": 1.0}, 0.0)


def test_write_report_round_trip(tmp_path):
    import json
    path = tmp_path / "report.json"
    write_report(path, {"mean": {"jaccard": 0.5}})
    assert json.loads(path.read_text()) == {"mean": {"jaccard": 0.5}}
    assert not path.with_suffix(".json.tmp").exists()
