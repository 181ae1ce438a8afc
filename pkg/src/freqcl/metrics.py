"""AUC, partial AUC and ROC curves for anomaly scores.

Labels are 1 for anomaly, 0 for normal; higher scores mean "more anomalous".
Tied scores produce diagonal ROC segments, which makes the trapezoidal area
equal to the Mann-Whitney statistic with the usual half-credit for ties.
"""

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricConfig:
    p: float = 0.1
    mcclish: bool = False

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # first entry is +inf (nothing flagged)

    def area(self):
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for th, f, t in zip(self.thresholds, self.fpr, self.tpr):
            w.writerow([repr(float(th)), repr(float(f)), repr(float(t))])
        return buf.getvalue()


def _split(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"need at least one normal and one anomaly (got {n_neg} normal, {n_pos} anomaly)"
        )
    return scores, labels, n_pos, n_neg


def auc(scores, labels):
    """Mann-Whitney estimate of P(score_anomaly > score_normal), ties count 1/2."""
    scores, labels, n_pos, n_neg = _split(scores, labels)
    ranks = rankdata(scores)  # average ranks handle ties
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels):
    """Empirical ROC with one point per distinct threshold, highest first."""
    scores, labels, n_pos, n_neg = _split(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y == 1)[last_of_group]
    fp = np.cumsum(y == 0)[last_of_group]
    fpr = np.r_[0, fp] / n_neg
    tpr = np.r_[0, tp] / n_pos
    return RocCurve(fpr=fpr.astype(np.float64), tpr=tpr.astype(np.float64),
                    thresholds=np.r_[np.inf, s[last_of_group]])


def partial_area(curve, p):
    """Unnormalised area under ``curve`` for FPR in [0, p]."""
    area = 0.0
    f, t = curve.fpr, curve.tpr
    for f0, f1, t0, t1 in zip(f[:-1], f[1:], t[:-1], t[1:]):
        if f0 >= p:
            break
        if f1 == f0:
            continue
        hi = min(f1, p)
        t_hi = t0 + (t1 - t0) * (hi - f0) / (f1 - f0)
        area += (hi - f0) * (t0 + t_hi) / 2
    return area


def pauc(scores, labels, cfg=MetricConfig()):
    """Partial AUC over FPR in [0, p].

    By default the area is divided by ``p`` so a perfect detector scores 1.
    With ``cfg.mcclish`` the McClish standardisation is returned instead,
    which maps a chance-level (diagonal) curve to 0.5.
    """
    curve = roc_points(scores, labels)
    p = cfg.p
    area = partial_area(curve, p)
    if cfg.mcclish:
        lo = p * p / 2
        return float(0.5 * (1 + (area - lo) / (p - lo)))
    return float(area / p)


@dataclass
class ClassReport:
    name: str
    auc: float
    pauc: float
    n_normal: int
    n_anomaly: int


@dataclass
class Report:
    rows: list
    skipped: list
    mean_auc: float
    mean_pauc: float

    def to_csv(self):
        lines = ["class,auc,pauc"]
        lines += [f"{r.name},{r.auc!r},{r.pauc!r}" for r in self.rows]
        lines.append(f"average,{self.mean_auc!r},{self.mean_pauc!r}")
        return "\n".join(lines) + "\n"

    def to_text(self):
        names = [r.name for r in self.rows] + ["average"]
        width = max(len("class"), *map(len, names))
        out = [f"{'class':<{width}}  {'AUC(%)':>8}  {'pAUC(%)':>8}"]
        for r in self.rows:
            out.append(f"{r.name:<{width}}  {100 * r.auc:8.2f}  {100 * r.pauc:8.2f}")
        out.append(f"{'average':<{width}}  {100 * self.mean_auc:8.2f}  {100 * self.mean_pauc:8.2f}")
        for name, why in self.skipped:
            out.append(f"# skipped {name}: {why}")
        return "\n".join(out) + "\n"


def report(groups, cfg=MetricConfig()):
    """Per-class AUC/pAUC and their unweighted mean.

    ``groups`` maps class name to a ``(scores, labels)`` pair.  Classes lacking
    either label are skipped with a warning.
    """
    rows, skipped = [], []
    for name in sorted(groups):
        scores, labels = groups[name]
        try:
            rows.append(ClassReport(name, auc(scores, labels), pauc(scores, labels, cfg),
                                    int(np.sum(np.asarray(labels) == 0)),
                                    int(np.sum(np.asarray(labels) == 1))))
        except UndefinedMetricError as exc:
            logger.warning("skipping class %s: %s", name, exc)
            skipped.append((name, str(exc)))
    if not rows:
        raise UndefinedMetricError("no class has both normal and anomalous clips")
    return Report(rows, skipped,
                  float(np.mean([r.auc for r in rows])),
                  float(np.mean([r.pauc for r in rows])))
