"""Segmentation metrics computed from hard confusion counts plus a
threshold-free AUC, and the cross-model rank-average summary."""

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.stats import rankdata

from .errors import require

METRIC_NAMES = ("miou", "f1", "acc", "auc", "sen", "mcc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricReport:
    """Percentage-scaled metrics as printed in evaluation reports."""

    miou: float
    f1: float
    acc: float
    auc: float
    sen: float
    mcc: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def values(self):
        return tuple(getattr(self, n) for n in METRIC_NAMES)


def _as_float_array(x, name):
    arr = np.asarray(x)
    require(arr.size > 0, f"{name} is empty")
    return arr


def confusion(probs, mask, valid=None, threshold=0.5):
    """Hard confusion counts; prediction is positive iff prob > threshold.

    ``valid`` restricts counting to a boolean region (used to drop padding).
    """
    probs = _as_float_array(probs, "probs").astype(np.float64)
    mask = _as_float_array(mask, "mask")
    require(probs.shape == mask.shape,
            f"probs shape {probs.shape} does not match mask shape {mask.shape}")
    require(0.0 < threshold < 1.0, f"threshold must be in (0, 1), got {threshold}")
    require(np.isfinite(probs).all(), "probs contain non-finite values")
    m = mask.astype(bool)
    require(set(np.unique(mask)).issubset({0, 1, False, True}),
            "mask must be binary")
    if valid is None:
        valid = np.ones(probs.shape, dtype=bool)
    else:
        valid = np.asarray(valid).astype(bool)
        require(valid.shape == probs.shape,
                f"valid shape {valid.shape} does not match probs shape {probs.shape}")
        require(valid.any(), "valid region is empty")
    pred = probs > threshold
    tp = int(np.count_nonzero(pred & m & valid))
    fp = int(np.count_nonzero(pred & ~m & valid))
    tn = int(np.count_nonzero(~pred & ~m & valid))
    fn = int(np.count_nonzero(~pred & m & valid))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def iou_foreground(c):
    return _ratio(c.tp, c.tp + c.fp + c.fn)


def iou_background(c):
    return _ratio(c.tn, c.tn + c.fp + c.fn)


def mean_iou(c):
    """Two-class mean of foreground and background IoU."""
    return 0.5 * (iou_foreground(c) + iou_background(c))


def f1_score(c):
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def accuracy(c):
    return _ratio(c.tp + c.tn, c.total)


def sensitivity(c):
    return _ratio(c.tp, c.tp + c.fn)


def specificity(c):
    return _ratio(c.tn, c.tn + c.fp)


def mcc(c):
    num = c.tp * c.tn - c.fp * c.fn
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        return 0.0
    return num / math.sqrt(den)


def auc_score(probs, mask, valid=None):
    """Area under the ROC curve via the midrank statistic.

    AUC = (sum of positive ranks - P(P+1)/2) / (P * N), ties get midranks.
    """
    probs = _as_float_array(probs, "probs").astype(np.float64)
    mask = _as_float_array(mask, "mask")
    require(probs.shape == mask.shape,
            f"probs shape {probs.shape} does not match mask shape {mask.shape}")
    if valid is not None:
        valid = np.asarray(valid).astype(bool)
        probs = probs[valid]
        mask = mask[valid]
    labels = mask.astype(bool).ravel()
    scores = probs.ravel()
    pos = int(labels.sum())
    neg = labels.size - pos
    require(pos > 0 and neg > 0,
            f"AUC needs both classes present, got {pos} positives and {neg} negatives")
    ranks = rankdata(scores)
    return (ranks[labels].sum() - pos * (pos + 1) / 2.0) / (pos * neg)


def scalar_metrics(c):
    """The five threshold metrics as percentages: (miou, f1, acc, sen, mcc)."""
    return (100.0 * mean_iou(c), 100.0 * f1_score(c), 100.0 * accuracy(c),
            100.0 * sensitivity(c), 100.0 * mcc(c))


def report_from_counts(counts, auc_value):
    """Assemble the percentage-scaled report from counts and a raw AUC."""
    miou, f1, acc, sen, mcc_val = scalar_metrics(counts)
    return MetricReport(miou=miou, f1=f1, acc=acc,
                        auc=100.0 * auc_value, sen=sen, mcc=mcc_val)


def mean_report(reports):
    """Per-image-mean report: averages each metric over a report list."""
    require(len(reports) >= 1, "mean_report needs at least one report")
    stacked = np.array([r.values() for r in reports], dtype=np.float64)
    return MetricReport(*stacked.mean(axis=0))


def rank_average(table, higher_is_better=None):
    """Mean across metrics of each row's rank (1 = best, ties get midranks).

    ``table`` is a 2D array-like of metric values, rows are models, columns
    are metrics.  ``higher_is_better`` flags each column's orientation; the
    default treats every column as larger-is-better.  Returns one rank
    average per row.
    """
    arr = np.asarray(table, dtype=np.float64)
    require(arr.ndim == 2 and arr.shape[0] >= 2 and arr.shape[1] >= 1,
            f"rank table must be 2D with at least two rows, got shape {arr.shape}")
    require(np.isfinite(arr).all(), "rank table contains non-finite values")
    if higher_is_better is None:
        higher_is_better = [True] * arr.shape[1]
    require(len(higher_is_better) == arr.shape[1],
            f"need one orientation flag per column, got {len(higher_is_better)} "
            f"for {arr.shape[1]} columns")
    cols = [rankdata(-arr[:, j] if higher_is_better[j] else arr[:, j])
            for j in range(arr.shape[1])]
    return np.column_stack(cols).mean(axis=1)


def format_report_row(model, dataset, report, rank_avg=None, delimiter="\t"):
    """One report line: identifiers, six metrics at three decimals, and an
    optional rank average at one decimal."""
    cells = [str(model), str(dataset)]
    cells += [f"{v:.3f}" for v in report.values()]
    if rank_avg is not None:
        cells.append(f"{rank_avg:.1f}")
    return delimiter.join(cells)


def parse_report_row(line, delimiter="\t"):
    """Inverse of format_report_row (rank column optional)."""
    parts = line.rstrip("\n").split(delimiter)
    require(len(parts) in (8, 9), f"report row must have 8 or 9 cells, got {len(parts)}")
    model, dataset = parts[0], parts[1]
    vals = [float(v) for v in parts[2:8]]
    report = MetricReport(*vals)
    rank = float(parts[8]) if len(parts) == 9 else None
    return model, dataset, report, rank
