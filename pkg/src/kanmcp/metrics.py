"""Sentiment-regression metrics: binned accuracies, weighted F1, MAE, Pearson r.

Binning conventions:

* Acc7: clip to [-3, 3] and round to the nearest integer (numpy rounding,
  halves go to even).
* Acc5: the same after clipping to [-2, 2].
* Acc3: negative / neutral / positive with a neutral band ``|v| < 0.1``.
* Acc2 and F1: samples with a label of exactly zero are dropped; the
  remaining labels are split negative vs positive and predictions negative
  vs non-negative.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import LengthMismatch, NoNonzeroLabels

NEUTRAL_BAND = 0.1


@dataclass
class MetricReport:
    acc7: float
    acc5: float
    acc3: float
    acc2: float
    f1: float
    mae: float
    corr: float
    corr_defined: bool = True

    def as_dict(self):
        return asdict(self)


def _pair(pred, y):
    pred = np.asarray(pred, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if pred.shape != y.shape:
        raise LengthMismatch(f"{pred.size} predictions for {y.size} labels")
    return pred, y


def _bin(v, k):
    if k == 7:
        return np.round(np.clip(v, -3.0, 3.0))
    if k == 5:
        return np.round(np.clip(v, -2.0, 2.0))
    if k == 3:
        return np.where(np.abs(v) < NEUTRAL_BAND, 0.0, np.sign(v))
    raise ValueError(f"unsupported k={k}")


def _binary(pred, y):
    nonzero = y != 0
    if not np.any(nonzero):
        raise NoNonzeroLabels("every label is exactly zero")
    return pred[nonzero] >= 0, y[nonzero] > 0


def acc_k(pred, y, k):
    pred, y = _pair(pred, y)
    if k == 2:
        p, t = _binary(pred, y)
        return 100.0 * float(np.mean(p == t))
    return 100.0 * float(np.mean(_bin(pred, k) == _bin(y, k)))


def f1_binary(pred, y):
    """Support-weighted F1 over the negative and positive classes, in percent."""
    pred, y = _pair(pred, y)
    p, t = _binary(pred, y)
    total = 0.0
    for cls in (False, True):
        tp = np.sum((p == cls) & (t == cls))
        fp = np.sum((p == cls) & (t != cls))
        fn = np.sum((p != cls) & (t == cls))
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 0.0
        total += f1 * np.sum(t == cls)
    return 100.0 * float(total / t.size)


def mae(pred, y):
    pred, y = _pair(pred, y)
    return float(np.mean(np.abs(pred - y)))


def pearson_corr(pred, y):
    """Returns ``(r, defined)``; ``r`` is 0 when either argument has zero variance."""
    pred, y = _pair(pred, y)
    dp, dy = pred - pred.mean(), y - y.mean()
    ssp, ssy = dp @ dp, dy @ dy
    if ssp == 0 or ssy == 0:
        return 0.0, False
    # one square root keeps r exactly +-1 for exact (anti-)proportionality
    return float(np.clip(dp @ dy / np.sqrt(ssp * ssy), -1.0, 1.0)), True


def report(pred, y):
    corr, defined = pearson_corr(pred, y)
    return MetricReport(
        acc7=acc_k(pred, y, 7),
        acc5=acc_k(pred, y, 5),
        acc3=acc_k(pred, y, 3),
        acc2=acc_k(pred, y, 2),
        f1=f1_binary(pred, y),
        mae=mae(pred, y),
        corr=corr,
        corr_defined=defined,
    )
