"""
Frame-level binary metrics for AU tracks.

Any ratio whose denominator is zero is reported as 0 (so an AU that never
occurs and is never predicted scores F1 = 0, MCC = 0, FPR = 0).
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyData, LengthMismatch


def _fmt(x):
    return format(float(x), ".9g")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def _pair(pred, truth):
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise LengthMismatch(f"prediction has {p.size} frames, truth has {t.size}")
    return p, t.astype(bool)


def confusion(pred, truth):
    """Tally binary frame tracks of equal length."""
    p, t = _pair(pred, truth)
    p = p.astype(bool)
    return ConfusionCounts(
        int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & ~t)), int(np.sum(~p & t))
    )


def _ratio(num, den):
    return num / den if den else 0.0


def f1(c):
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def tpr(c):
    return _ratio(c.tp, c.tp + c.fn)


def fpr(c):
    return _ratio(c.fp, c.fp + c.tn)


def mcc(c):
    den = math.sqrt(float(c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn))
    return _ratio(c.tp * c.tn - c.fp * c.fn, den)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_curve(prob, truth, n_thresholds=1000):
    """ROC points from sweeping ``p >= threshold`` over the observed probabilities.

    At most ``n_thresholds`` thresholds are used (evenly spaced order
    statistics of the unique values when there are more).  The curve always
    contains (0, 0) and (1, 1), is sorted by FPR and carries the trapezoid
    AUC.
    """
    p, t = _pair(prob, truth)
    p = p.astype(float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if n_thresholds < 1:
        raise ValueError("n_thresholds must be positive")
    u = np.unique(p)[::-1]
    if u.size > n_thresholds:
        u = u[np.unique(np.round(np.linspace(0, u.size - 1, n_thresholds)).astype(int))]
    order = np.argsort(-p, kind="stable")
    ps, ts = p[order], t[order]
    cum_tp = np.concatenate([[0], np.cumsum(ts)])
    cum_fp = np.concatenate([[0], np.cumsum(~ts)])
    # number of frames with p >= threshold
    k = np.searchsorted(-ps, -u, side="right")
    n_pos, n_neg = int(ts.sum()), int((~ts).sum())
    tp_r = cum_tp[k] / n_pos if n_pos else np.zeros(k.size)
    fp_r = cum_fp[k] / n_neg if n_neg else np.zeros(k.size)
    x = np.concatenate([[0.0], fp_r, [1.0]])
    y = np.concatenate([[0.0], tp_r, [1.0]])
    th = np.concatenate([[np.inf], u, [-np.inf]])
    o = np.lexsort((y, x))
    x, y, th = x[o], y[o], th[o]
    keep = np.ones(x.size, dtype=bool)
    keep[1:] = (np.diff(x) != 0) | (np.diff(y) != 0)
    x, y, th = x[keep], y[keep], th[keep]
    auc = float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))
    return RocCurve(x, y, th, auc)


@dataclass
class MetricsTable:
    """Per-AU rows ``{au: {"f1", "tpr", "fpr", "mcc", "counts"}}`` plus the unweighted mean."""

    rows: dict
    macro: dict


def evaluate_run(pred, truth):
    """Metrics per AU (frames pooled) and their unweighted mean.

    ``pred`` and ``truth`` map AU name to a binary frame track (or a list of
    per-utterance tracks, which are concatenated).
    """
    if set(pred) != set(truth):
        raise LengthMismatch(f"AU sets differ: {sorted(set(pred) ^ set(truth))}")
    if not pred:
        raise EmptyData("no AU tracks to evaluate")
    rows = {}
    for au in truth:
        p, t = pred[au], truth[au]
        if isinstance(p, (list, tuple)):
            p = np.concatenate([np.asarray(x).ravel() for x in p]) if p else np.zeros(0)
            t = np.concatenate([np.asarray(x).ravel() for x in t]) if t else np.zeros(0)
        c = confusion(p, t)
        if c.total == 0:
            raise EmptyData(f"no frames to evaluate for {au}")
        rows[au] = {"f1": f1(c), "tpr": tpr(c), "fpr": fpr(c), "mcc": mcc(c), "counts": c}
    macro = {m: float(np.mean([r[m] for r in rows.values()])) for m in ("f1", "tpr", "fpr", "mcc")}
    return MetricsTable(rows, macro)


def format_metrics_table(table):
    lines = ["au,f1,tpr,fpr,mcc,tp,fp,tn,fn"]
    for au, r in table.rows.items():
        c = r["counts"]
        vals = ",".join(_fmt(r[m]) for m in ("f1", "tpr", "fpr", "mcc"))
        lines.append(f"{au},{vals},{c.tp},{c.fp},{c.tn},{c.fn}")
    vals = ",".join(_fmt(table.macro[m]) for m in ("f1", "tpr", "fpr", "mcc"))
    lines.append(f"macro,{vals},,,,")
    return "\n".join(lines) + "\n"


def format_roc(curve):
    lines = [f"# auc,{_fmt(curve.auc)}", "fpr,tpr"]
    lines += [f"{_fmt(x)},{_fmt(y)}" for x, y in zip(curve.fpr, curve.tpr)]
    return "\n".join(lines) + "\n"
