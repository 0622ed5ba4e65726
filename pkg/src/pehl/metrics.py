"""Evaluation metrics and probability re-calibration.

Balanced accuracy weights the two classes equally regardless of their
prevalence. AUC is computed as the tie-aware rank statistic (average
ranks), which equals the trapezoidal integral of the ROC curve. The two
calibrators rescale a scorer's probability outputs on a small labeled
sample without (for a monotone fit) touching its ranking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .mathutil import sigmoid


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores/labels shape mismatch: {s.shape} vs {y.shape}")
    return s, (y > 0)


def confusion_counts(scores, labels, threshold: float = 0.5):
    """(tp, fp, tn, fn) with positive predicted iff score >= threshold."""
    s, pos = _as_arrays(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return tp, fp, tn, fn


def balanced_accuracy(scores, labels, threshold: float = 0.5) -> float:
    """(TPR + TNR) / 2. With a single-class sample, the one defined rate
    is returned on its own (callers can check via evaluate())."""
    tp, fp, tn, fn = confusion_counts(scores, labels, threshold)
    rates = []
    if tp + fn:
        rates.append(tp / (tp + fn))
    if tn + fp:
        rates.append(tn / (tn + fp))
    if not rates:
        raise DataError("no samples to score")
    return float(np.mean(rates))


def roc_auc_points(scores, labels):
    """AUC by average ranks plus the full ROC point list.

    Returns (auc, points) where points are (fpr, tpr, threshold) from the
    (0, 0, +inf) sentinel down to (1, 1, -inf). Raises DataError if only
    one class is present (AUC undefined).
    """
    s, pos = _as_arrays(scores, labels)
    n_pos = int(pos.sum())
    n_neg = len(s) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC requires both classes")

    # average ranks, ascending scores
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # mean of ranks i+1..j+1
        i = j + 1
    auc = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    # ROC sweep over distinct thresholds, descending
    desc = np.argsort(-s, kind="stable")
    points = [(0.0, 0.0, np.inf)]
    tp = fp = 0
    i = 0
    s_desc, pos_desc = s[desc], pos[desc]
    while i < len(s):
        j = i
        while j + 1 < len(s) and s_desc[j + 1] == s_desc[i]:
            j += 1
        tp += int(pos_desc[i:j + 1].sum())
        fp += (j - i + 1) - int(pos_desc[i:j + 1].sum())
        points.append((fp / n_neg, tp / n_pos, float(s_desc[i])))
        i = j + 1
    points.append((1.0, 1.0, -np.inf))
    return float(auc), points


def trapezoid_auc(points) -> float:
    """Trapezoidal integral of ROC points (the independent AUC route)."""
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.trapezoid(tpr, fpr))


@dataclass
class EvalReport:
    balanced_accuracy: float
    auc: float | None
    roc: list = field(default_factory=list, repr=False)
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    single_class: bool = False

    def summary(self) -> dict:
        return {
            "balanced_accuracy": self.balanced_accuracy,
            "auc": self.auc,
            "confusion": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "single_class": self.single_class,
        }


def evaluate(scores, labels, threshold: float = 0.5) -> EvalReport:
    s, pos = _as_arrays(scores, labels)
    tp, fp, tn, fn = confusion_counts(s, pos, threshold)
    single = pos.all() or not pos.any()
    if single:
        auc, roc = None, []
    else:
        auc, roc = roc_auc_points(s, pos)
    return EvalReport(
        balanced_accuracy=balanced_accuracy(s, pos, threshold),
        auc=auc, roc=roc, tp=tp, fp=fp, tn=tn, fn=fn, single_class=single,
    )


@dataclass
class PlattCalibrator:
    """sigma(a * score + b), fit by maximum likelihood with Platt's
    smoothed targets (the smoothing doubles as regularization)."""

    a: float
    b: float
    kind: str = "platt"

    def apply(self, scores):
        return sigmoid(self.a * np.asarray(scores, dtype=float) + self.b)


@dataclass
class IsotonicCalibrator:
    """Nondecreasing step function from pool-adjacent-violators."""

    breakpoints: np.ndarray
    values: np.ndarray
    kind: str = "isotonic"

    def apply(self, scores):
        s = np.asarray(scores, dtype=float)
        idx = np.searchsorted(self.breakpoints, s, side="right") - 1
        return self.values[np.clip(idx, 0, len(self.values) - 1)]


def platt_calibrate(scores, labels, max_iter: int = 100, tol: float = 1e-10) -> PlattCalibrator:
    """Newton fit of sigma(a*s + b) to smoothed 0/1 targets."""
    s, pos = _as_arrays(scores, labels)
    if len(s) < 2:
        raise DataError("Platt calibration needs at least 2 points")
    n_pos = int(pos.sum())
    n_neg = len(s) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("Platt calibration requires both classes")

    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 0.0, float(np.log((n_pos + 1.0) / (n_neg + 1.0)))

    def nll(a_, b_):
        z = a_ * s + b_
        # -sum(t*log p + (1-t)*log(1-p)) in logit form
        return float(np.sum(np.logaddexp(0.0, z) - t * z))

    cur = nll(a, b)
    ridge = 1e-10
    for _ in range(max_iter):
        p = sigmoid(a * s + b)
        g = np.array([np.sum((p - t) * s), np.sum(p - t)])
        if np.max(np.abs(g)) < tol:
            break
        w = p * (1.0 - p)
        h = np.array([
            [np.sum(w * s * s) + ridge, np.sum(w * s)],
            [np.sum(w * s), np.sum(w) + ridge],
        ])
        step = np.linalg.solve(h, g)
        lam = 1.0
        for _ in range(50):
            cand = nll(a - lam * step[0], b - lam * step[1])
            if cand <= cur:
                break
            lam *= 0.5
        a, b = a - lam * step[0], b - lam * step[1]
        cur = nll(a, b)
    return PlattCalibrator(a=float(a), b=float(b))


def isotonic_calibrate(scores, labels) -> IsotonicCalibrator:
    """PAV fit of a nondecreasing step function to the 0/1 labels ordered
    by score. Equal scores are pooled up front (they must share a value)."""
    s, pos = _as_arrays(scores, labels)
    if len(s) < 2:
        raise DataError("isotonic calibration needs at least 2 points")
    y = pos.astype(float)
    order = np.argsort(s, kind="stable")
    xs, ys = s[order], y[order]

    # blocks: [x, value, weight]
    blocks: list[list[float]] = []
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        blocks.append([xs[i], float(np.mean(ys[i:j + 1])), float(j - i + 1)])
        i = j + 1

    merged: list[list[float]] = []
    for blk in blocks:
        merged.append(list(blk))
        while len(merged) > 1 and merged[-2][1] > merged[-1][1]:
            x0, v0, w0 = merged[-2]
            _, v1, w1 = merged[-1]
            merged[-2:] = [[x0, (v0 * w0 + v1 * w1) / (w0 + w1), w0 + w1]]

    breakpoints, values = [], []
    for blk, orig in zip(_expand(merged, blocks), blocks):
        breakpoints.append(orig[0])
        values.append(blk)
    return IsotonicCalibrator(
        breakpoints=np.array(breakpoints), values=np.array(values)
    )


def _expand(merged, blocks):
    """Per original block, the fitted value of the merged block covering it."""
    out = []
    k = 0
    covered = merged[0][2]
    for blk in blocks:
        if not covered:
            k += 1
            covered = merged[k][2]
        out.append(merged[k][1])
        covered -= blk[2]
    return out


Calibrator = PlattCalibrator | IsotonicCalibrator


def calibrator_to_dict(cal: Calibrator) -> dict:
    if cal.kind == "platt":
        return {"kind": "platt", "a": cal.a, "b": cal.b}
    return {
        "kind": "isotonic",
        "breakpoints": [float(x) for x in cal.breakpoints],
        "values": [float(v) for v in cal.values],
    }


def calibrator_from_dict(doc: dict) -> Calibrator:
    if doc["kind"] == "platt":
        return PlattCalibrator(a=doc["a"], b=doc["b"])
    return IsotonicCalibrator(
        breakpoints=np.array(doc["breakpoints"]), values=np.array(doc["values"])
    )
