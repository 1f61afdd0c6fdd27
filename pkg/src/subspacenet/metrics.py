"""Partition comparison: permutation-optimal error rate, NMI and F-measure."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dataio import ValidationError


def _pair(pred, gt):
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.size == 0 or gt.size == 0:
        raise ValidationError("empty label vector")
    if pred.shape != gt.shape:
        raise ValidationError(f"length mismatch: {pred.size} vs {gt.size}")
    return pred, gt


def confusion_matrix(pred, gt):
    """Counts with predicted clusters as rows and ground-truth classes as columns."""
    pred, gt = _pair(pred, gt)
    _, p = np.unique(pred, return_inverse=True)
    _, g = np.unique(gt, return_inverse=True)
    counts = np.zeros((p.max() + 1, g.max() + 1), dtype=np.int64)
    np.add.at(counts, (p, g), 1)
    return counts


def best_matching(counts):
    """Row/column pairs of the maximum-weight one-to-one matching."""
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return rows, cols


def error_rate(pred, gt):
    counts = confusion_matrix(pred, gt)
    rows, cols = best_matching(counts)
    return float(1.0 - counts[rows, cols].sum() / counts.sum())


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(pred, gt):
    """Mutual information normalized by the geometric mean of the entropies."""
    counts = confusion_matrix(pred, gt)
    n = counts.sum()
    h_pred = _entropy(counts.sum(axis=1))
    h_gt = _entropy(counts.sum(axis=0))
    if h_pred == 0.0 or h_gt == 0.0:
        return 1.0 if h_pred == h_gt else 0.0
    joint = counts / n
    outer = np.outer(counts.sum(axis=1), counts.sum(axis=0)) / n**2
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))
    return min(1.0, max(0.0, mi / np.sqrt(h_pred * h_gt)))


def prf(pred, gt):
    """Per-class precision/recall under the optimal matching, averaged over classes.

    A ground-truth class left without a matched cluster scores 0 on both.
    """
    counts = confusion_matrix(pred, gt)
    rows, cols = best_matching(counts)
    n_classes = counts.shape[1]
    precision = np.zeros(n_classes)
    recall = np.zeros(n_classes)
    pred_sizes = counts.sum(axis=1)
    gt_sizes = counts.sum(axis=0)
    for r, c in zip(rows, cols):
        precision[c] = counts[r, c] / pred_sizes[r]
        recall[c] = counts[r, c] / gt_sizes[c]
    p, r = float(precision.mean()), float(recall.mean())
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


@dataclass
class MetricReport:
    error_rate: float
    nmi: float
    precision: float
    recall: float
    fmeasure: float

    def to_dict(self):
        return asdict(self)


def evaluate(pred, gt):
    p, r, f = prf(pred, gt)
    return MetricReport(error_rate(pred, gt), nmi(pred, gt), p, r, f)


def correct_rate(estimated_k, true_k):
    """Fraction of instances whose cluster count was estimated exactly."""
    estimated_k, true_k = np.asarray(estimated_k), np.asarray(true_k)
    return float(np.mean(estimated_k == true_k))


FIELDS = ("error_rate", "nmi", "precision", "recall", "fmeasure")


def report_table(reports):
    """CSV text: one row per instance plus mean and median rows.

    ``reports`` maps instance name to :class:`MetricReport`.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("instance",) + FIELDS)
    values = []
    for name, rep in reports.items():
        row = [getattr(rep, f) for f in FIELDS]
        values.append(row)
        writer.writerow([name] + [repr(v) for v in row])
    if values:
        arr = np.array(values)
        writer.writerow(["mean"] + [repr(float(v)) for v in arr.mean(axis=0)])
        writer.writerow(["median"] + [repr(float(v)) for v in np.median(arr, axis=0)])
    return buf.getvalue()
