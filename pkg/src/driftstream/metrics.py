"""Evaluation metrics and the per-run report."""

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def compute_auc(scores, labels):
    """ROC AUC via the rank statistic; ties contribute one half.

    Non-finite scores (unscored warm-up records) are excluded together with
    their labels. Raises when only one class remains.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise DataError("scores and labels must align")
    keep = np.isfinite(scores)
    scores, labels = scores[keep], labels[keep]
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    rank = 1
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (rank + rank + (j - i))
        rank += j - i + 1
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def linear_fit_r2(x, y):
    """Least-squares line fit quality, used by the dimension sweep."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        raise DataError("need at least two points for a fit")
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return r2, float(slope), float(intercept)


@dataclass
class LatencyBreakdown:
    """Per-module wall time in milliseconds."""

    preprocess_ms: float = 0.0
    train_predict_ms: float = 0.0
    detect_ms: float = 0.0
    drift_update_ms: float = 0.0

    def as_dict(self):
        return dataclasses.asdict(self)


@dataclass
class RunReport:
    auc: float | None
    avg_exec_ms: float
    proc_rate: float  # records per second
    n_records: int
    n_scored: int
    retrain_indices: list = field(default_factory=list)
    retrain_ms_total: float = 0.0
    offline_latency: dict = field(default_factory=dict)
    realtime_latency: dict = field(default_factory=dict)
    offline_records: int = 0
    realtime_records: int = 0
    config: dict = field(default_factory=dict)

    def coupling(self):
        """proc_rate x avg exec seconds; ~1 by construction."""
        return self.proc_rate * (self.avg_exec_ms / 1000.0)

    def to_json(self, indent=2):
        doc = dataclasses.asdict(self)
        return json.dumps(doc, indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(**doc)
