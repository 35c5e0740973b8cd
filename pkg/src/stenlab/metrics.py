"""Ranking and calibration metrics: AUC, RelaImpr, log loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import format_kv
from .errors import DimensionError, UndefinedMetricError

_PROB_FLOOR = 1e-15


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise DimensionError(f"{s.shape[0]} scores vs {y.shape[0]} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int8)


def auc(scores, labels):
    """Probability a random positive outranks a random negative, ties count half.

    Mann-Whitney rank statistic with mid-ranks, O(n log n).
    """
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC needs both classes, got {n_pos} positives and {n_neg} negatives")
    order = np.argsort(s, kind="stable")
    rank_sum = kernels.positive_rank_sum(np.ascontiguousarray(s[order]), np.ascontiguousarray(y[order]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def relaimpr(auc_model, auc_base):
    """Relative improvement over a random ranker: ``(auc - 0.5) / (auc_base - 0.5) - 1``."""
    if not auc_base > 0.5:
        raise UndefinedMetricError(f"RelaImpr needs a base AUC above 0.5, got {auc_base}")
    return (auc_model - 0.5) / (auc_base - 0.5) - 1.0


def logloss_metric(scores, labels):
    s, y = _check(scores, labels)
    p = np.clip(s, _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


@dataclass
class EvalReport:
    auc: float
    logloss: float
    n_pos: int
    n_neg: int
    relaimpr_vs_base: float | None = None
    base_auc: float | None = None

    @classmethod
    def compute(cls, scores, labels, base_scores=None):
        s, y = _check(scores, labels)
        rep = cls(auc(s, y), logloss_metric(s, y), int(y.sum()), int(y.size - y.sum()))
        if base_scores is not None:
            rep.base_auc = auc(base_scores, y)
            rep.relaimpr_vs_base = relaimpr(rep.auc, rep.base_auc)
        return rep

    def to_kv(self):
        d = {"auc": repr(self.auc), "logloss": repr(self.logloss), "n_pos": str(self.n_pos), "n_neg": str(self.n_neg)}
        if self.relaimpr_vs_base is not None:
            d["base_auc"] = repr(self.base_auc)
            d["relaimpr"] = repr(self.relaimpr_vs_base)
        return d

    def __str__(self):
        return format_kv(self.to_kv())
