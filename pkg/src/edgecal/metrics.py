"""Discrimination and calibration metrics for edge-class predictions.

Evaluation merges the seven classes into five types: the two directed classes
become one type, as do the two partially directed ones. For a merged type the
predicted probability of a pair is the sum of its member classes' probabilities.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


class MergedType(enum.Enum):
    DIRECTED = (1, 2)
    PARTIALLY_DIRECTED = (3, 4)
    CIRCLE_CIRCLE = (5,)
    BIDIRECTED = (6,)
    NO_EDGE = (0,)

    @property
    def classes(self) -> Tuple[int, ...]:
        return self.value

    @property
    def label(self) -> str:
        return self.name.lower()


MERGE = np.array([4, 0, 0, 1, 1, 2, 3])  # class -> position of its type in MergedType
TYPES = list(MergedType)


def predict_class(probs: np.ndarray) -> np.ndarray:
    """Most probable class; ties go to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=-1)


def prf1(predictions, truths, merged: MergedType):
    """Precision, recall and F1 for one merged type (one-vs-rest).

    Ratios with a zero denominator are returned as ``None``; F1 is ``None``
    whenever precision or recall is.
    """
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise ValueError("predictions and truths must have equal length")
    pred_pos = np.isin(predictions, merged.classes)
    true_pos = np.isin(truths, merged.classes)
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def _equal_frequency_bins(n: int, capacity: int) -> List[Tuple[int, int]]:
    nbins = max(n // capacity, 1)
    bounds = [(b * capacity, (b + 1) * capacity) for b in range(nbins)]
    bounds[-1] = (bounds[-1][0], n)
    return bounds


def mce(predictions, labels, bin_capacity: int = 100) -> float:
    """Maximum calibration error over equal-frequency bins.

    Instances are stably sorted by prediction and cut into consecutive bins of
    ``bin_capacity``; the last bin absorbs any remainder.
    """
    predictions = np.asarray(predictions, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if predictions.size == 0:
        raise ValueError("mce of an empty input")
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    if bin_capacity < 1:
        raise ValueError("bin_capacity must be at least 1")
    order = np.argsort(predictions, kind="stable")
    p, z = predictions[order], labels[order]
    worst = 0.0
    for lo, hi in _equal_frequency_bins(p.size, bin_capacity):
        worst = max(worst, abs(p[lo:hi].mean() - z[lo:hi].mean()))
    return float(worst)


def one_hot(truths, num_classes: int = 7) -> np.ndarray:
    truths = np.asarray(truths, dtype=np.int64)
    out = np.zeros((truths.size, num_classes))
    out[np.arange(truths.size), truths] = 1.0
    return out


def overall_mce(prob_table, truths, bin_capacity: int = 100) -> float:
    """MCE of all seven probabilities of every instance, pooled with their 1-of-7 labels."""
    prob_table = np.asarray(prob_table, dtype=float)
    if prob_table.shape[0] != np.asarray(truths).size:
        raise ValueError("one truth per probability vector required")
    return mce(prob_table.ravel(), one_hot(truths, prob_table.shape[1]).ravel(), bin_capacity)


def merged_probabilities(prob_table, merged: MergedType) -> np.ndarray:
    return np.asarray(prob_table)[:, list(merged.classes)].sum(axis=1)


@dataclass
class ReliabilityBin:
    lo: float
    hi: float
    mean_prediction: Optional[float]
    frequency: Optional[float]
    count: int


def reliability_bins(predictions, labels, num_bins: int = 5) -> List[ReliabilityBin]:
    """Fixed-width bins over [0, 1]; the last bin includes 1.0."""
    if num_bins < 1:
        raise ValueError("num_bins must be at least 1")
    predictions = np.asarray(predictions, dtype=float)
    labels = np.asarray(labels, dtype=float)
    edges = np.linspace(0.0, 1.0, num_bins + 1)
    which = np.clip(np.searchsorted(edges[1:-1], predictions, side="right"), 0, num_bins - 1)
    out = []
    for b in range(num_bins):
        sel = which == b
        count = int(sel.sum())
        out.append(
            ReliabilityBin(
                float(edges[b]),
                float(edges[b + 1]),
                float(predictions[sel].mean()) if count else None,
                float(labels[sel].mean()) if count else None,
                count,
            )
        )
    return out


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    degenerate: bool = False


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    start = 0
    while start < values.size:
        stop = start
        while stop + 1 < values.size and sorted_vals[stop + 1] == sorted_vals[start]:
            stop += 1
        ranks[order[start : stop + 1]] = (start + stop) / 2 + 1
        start = stop + 1
    return ranks


def _exact_lower_tail(doubled_ranks: Sequence[int], w2: int) -> float:
    """P(W+ <= w) under random signs; ranks and w are doubled to stay integral."""
    total = sum(doubled_ranks)
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return float(counts[: w2 + 1].sum() / counts.sum())


def wilcoxon_signed_rank(x, y, exact_max_n: int = 25) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped. The null distribution is enumerated exactly
    (ties handled through midranks) for up to ``exact_max_n`` pairs; above
    that a tie-corrected normal approximation is used. The statistic is
    ``min(W+, W-)``.
    """
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    d = d[d != 0]
    if d.size == 0:
        return WilcoxonResult(0.0, 1.0, 0, degenerate=True)
    if d.size < 5:
        raise ValueError(f"need at least 5 non-zero differences, got {d.size}")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    n = d.size
    if n <= exact_max_n:
        doubled = [int(round(2 * r)) for r in ranks]
        p = 2.0 * _exact_lower_tail(doubled, int(round(2 * w)))
    else:
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
        z = (w - n * (n + 1) / 4.0) / math.sqrt(var)
        p = math.erfc(abs(z) / math.sqrt(2.0))
    return WilcoxonResult(w, min(1.0, p), n)


# -- reports ---------------------------------------------------------------------------


@dataclass
class TypeMetrics:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    mce: Optional[float]
    support: int
    reliability: List[ReliabilityBin] = field(default_factory=list)


@dataclass
class MetricsReport:
    types: Dict[str, TypeMetrics]
    overall_mce: float
    num_instances: int

    def to_dict(self) -> dict:
        return {
            "overall_mce": self.overall_mce,
            "num_instances": self.num_instances,
            "types": {
                name: {
                    "precision": t.precision,
                    "recall": t.recall,
                    "f1": t.f1,
                    "mce": t.mce,
                    "support": t.support,
                    "reliability": [b.__dict__ for b in t.reliability],
                }
                for name, t in self.types.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        types = {
            name: TypeMetrics(
                t["precision"], t["recall"], t["f1"], t["mce"], t["support"],
                [ReliabilityBin(**b) for b in t["reliability"]],
            )
            for name, t in d["types"].items()
        }
        return cls(types, d["overall_mce"], d["num_instances"])

    def value(self, merged: str, metric: str) -> Optional[float]:
        if merged == "overall":
            return self.overall_mce if metric == "mce" else None
        return getattr(self.types[merged], metric)


def evaluate(prob_table, truths, bin_capacity: int = 100, num_reliability_bins: int = 5) -> MetricsReport:
    """Score a table of 7-vectors against true classes."""
    prob_table = np.asarray(prob_table, dtype=float)
    truths = np.asarray(truths, dtype=np.int64)
    predictions = predict_class(prob_table)
    types = {}
    for merged in TYPES:
        p, r, f = prf1(predictions, truths, merged)
        scores = merged_probabilities(prob_table, merged)
        labels = np.isin(truths, merged.classes).astype(float)
        types[merged.label] = TypeMetrics(
            p, r, f,
            mce(scores, labels, bin_capacity) if truths.size else None,
            int(labels.sum()),
            reliability_bins(scores, labels, num_reliability_bins),
        )
    return MetricsReport(types, overall_mce(prob_table, truths, bin_capacity), int(truths.size))


def reliability_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["type", "bin_lo", "bin_hi", "mean_pred", "frequency", "count"])
    for name, t in report.types.items():
        for b in t.reliability:
            writer.writerow([name, repr(b.lo), repr(b.hi), _fmt(b.mean_prediction), _fmt(b.frequency), b.count])
    return buf.getvalue()


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))
