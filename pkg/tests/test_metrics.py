"""Metrics against brute-force recomputation and hand-worked cases."""

import math

import numpy as np
import pytest

from fsgnet.errors import ValidationError
from fsgnet.metrics import (METRIC_NAMES, ConfusionCounts, MetricReport,
                            accuracy, auc_score, confusion, f1_score,
                            format_report_row, iou_background, iou_foreground,
                            mcc, mean_iou, mean_report, parse_report_row,
                            rank_average, report_from_counts, scalar_metrics,
                            sensitivity, specificity)


def brute_counts(probs, mask, threshold=0.5):
    tp = fp = tn = fn = 0
    for p, t in zip(probs.ravel(), mask.ravel()):
        pred = p > threshold
        if pred and t:
            tp += 1
        elif pred and not t:
            fp += 1
        elif not pred and t:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def trapezoid_auc(scores, labels):
    """ROC area from an explicit threshold sweep over the unique scores."""
    scores = scores.ravel()
    labels = labels.ravel().astype(bool)
    pos = labels.sum()
    neg = labels.size - pos
    pts = [(0.0, 0.0)]
    for th in sorted(np.unique(scores))[::-1]:
        pred = scores >= th
        tpr = np.count_nonzero(pred & labels) / pos
        fpr = np.count_nonzero(pred & ~labels) / neg
        pts.append((fpr, tpr))
    pts.append((1.0, 1.0))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def test_confusion_matches_loops_on_random_pairs():
    rng = np.random.default_rng(0)
    for trial in range(50):
        probs = rng.uniform(0, 1, size=(16, 16))
        mask = rng.integers(0, 2, size=(16, 16))
        got = confusion(probs, mask)
        ref = brute_counts(probs, mask)
        assert got == ref
    valid = rng.integers(0, 2, size=(16, 16)).astype(bool)
    valid[0, 0] = True
    got = confusion(probs, mask, valid=valid)
    ref = brute_counts(probs[valid], mask[valid])
    assert got == ref


def test_confusion_threshold_is_strict():
    probs = np.array([0.5, 0.5000001])
    mask = np.array([1, 1])
    c = confusion(probs, mask)
    assert (c.tp, c.fn) == (1, 1)  # exactly-at-threshold counts negative


def test_confusion_validation():
    with pytest.raises(ValidationError):
        confusion(np.ones((2, 2)), np.full((2, 2), 2))
    with pytest.raises(ValidationError):
        confusion(np.ones((2, 2)), np.ones((3, 3)))
    with pytest.raises(ValidationError):
        confusion(np.ones((2, 2)), np.ones((2, 2)), valid=np.zeros((2, 2), bool))
    with pytest.raises(ValidationError):
        confusion(np.full((2, 2), np.nan), np.ones((2, 2)))


def test_hand_worked_small_case():
    # tp=1, fp=1, tn=2, fn=0
    c = ConfusionCounts(tp=1, fp=1, tn=2, fn=0)
    assert iou_foreground(c) == 0.5
    assert iou_background(c) == pytest.approx(2 / 3)
    assert mean_iou(c) == pytest.approx(7 / 12)
    assert f1_score(c) == pytest.approx(2 / 3)
    assert accuracy(c) == 0.75
    assert sensitivity(c) == 1.0
    assert specificity(c) == pytest.approx(2 / 3)
    num = 1 * 2 - 1 * 0
    den = math.sqrt((1 + 1) * (1 + 0) * (2 + 1) * (2 + 0))
    assert mcc(c) == pytest.approx(num / den)


def test_formula_oracle_on_fixed_counts():
    c = ConfusionCounts(tp=37, fp=11, tn=88, fn=9)
    assert mean_iou(c) == pytest.approx(0.5 * (37 / 57 + 88 / 108))
    assert f1_score(c) == pytest.approx(74 / 94)
    assert accuracy(c) == pytest.approx(125 / 145)
    assert sensitivity(c) == pytest.approx(37 / 46)
    expected_mcc = (37 * 88 - 11 * 9) / math.sqrt(48 * 46 * 99 * 97)
    assert mcc(c) == pytest.approx(expected_mcc, abs=1e-12)
    miou, f1, acc, sen, mcc_val = scalar_metrics(c)
    assert miou == pytest.approx(100 * mean_iou(c))
    assert mcc_val == pytest.approx(100 * mcc(c))


def test_zero_denominators_yield_zero():
    empty_pos = ConfusionCounts(tp=0, fp=0, tn=4, fn=0)
    assert sensitivity(empty_pos) == 0.0
    assert f1_score(empty_pos) == 0.0
    assert mcc(empty_pos) == 0.0
    assert iou_foreground(empty_pos) == 0.0
    assert mean_iou(empty_pos) == 0.5  # background IoU is still perfect


def test_auc_matches_trapezoid_sweep():
    rng = np.random.default_rng(3)
    for trial in range(30):
        scores = rng.uniform(0, 1, size=200)
        if trial % 3 == 0:
            scores = np.round(scores, 1)  # force heavy ties
        labels = rng.integers(0, 2, size=200)
        if labels.sum() in (0, 200):
            labels[0] = 1 - labels[0]
        got = auc_score(scores, labels)
        ref = trapezoid_auc(scores, labels)
        assert abs(got - ref) < 1e-9


def test_auc_rank_invariance_and_symmetry():
    rng = np.random.default_rng(4)
    scores = rng.uniform(0.01, 0.99, size=100)
    labels = rng.integers(0, 2, size=100)
    labels[:2] = [0, 1]
    base = auc_score(scores, labels)
    assert auc_score(scores ** 3, labels) == pytest.approx(base, abs=1e-12)
    assert auc_score(1.0 - scores, 1 - labels) == pytest.approx(base, abs=1e-12)
    assert auc_score(np.full(100, 0.5), labels) == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        auc_score(scores, np.zeros(100))


def test_report_from_counts_scales_by_100():
    c = ConfusionCounts(tp=50, fp=10, tn=30, fn=10)
    rep = report_from_counts(c, 0.975)
    assert rep.auc == pytest.approx(97.5)
    assert rep.acc == pytest.approx(80.0)
    assert rep.values() == tuple(rep.as_dict()[n] for n in METRIC_NAMES)


def test_mean_report_averages_per_metric():
    a = MetricReport(80.0, 80.0, 90.0, 95.0, 70.0, 75.0)
    b = MetricReport(82.0, 84.0, 92.0, 97.0, 74.0, 77.0)
    m = mean_report([a, b])
    assert m.miou == pytest.approx(81.0)
    assert m.f1 == pytest.approx(82.0)
    assert m.sen == pytest.approx(72.0)
    with pytest.raises(ValidationError):
        mean_report([])


def test_rank_average_hand_cases():
    table = [[1.0, 2.0], [2.0, 1.0]]
    assert rank_average(table).tolist() == [1.5, 1.5]
    table = [[3.0, 3.0], [2.0, 2.0], [1.0, 1.0]]
    assert rank_average(table).tolist() == [1.0, 2.0, 3.0]
    tied = [[5.0, 1.0], [5.0, 2.0]]
    assert rank_average(tied).tolist() == [pytest.approx(1.75),
                                           pytest.approx(1.25)]
    flipped = rank_average([[3.0, 1.0], [2.0, 2.0], [1.0, 3.0]],
                           higher_is_better=[True, False])
    assert flipped.tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ValidationError):
        rank_average([[1.0, 2.0]])
    with pytest.raises(ValidationError):
        rank_average(table, higher_is_better=[True])


def test_report_row_round_trip():
    rep = MetricReport(miou=84.068, f1=83.229, acc=97.042, auc=98.235,
                       sen=84.207, mcc=81.731)
    row = format_report_row("fsg", "DRIVE", rep, rank_avg=7 / 6)
    assert row == "fsg\tDRIVE\t84.068\t83.229\t97.042\t98.235\t84.207\t81.731\t1.2"
    model, dataset, parsed, rank = parse_report_row(row)
    assert (model, dataset, rank) == ("fsg", "DRIVE", 1.2)
    assert parsed == rep
    no_rank = format_report_row("m", "d", rep)
    assert parse_report_row(no_rank)[3] is None
    with pytest.raises(ValidationError):
        parse_report_row("too\tfew\tcells")
