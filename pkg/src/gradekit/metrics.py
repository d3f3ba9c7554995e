"""Confusion-matrix metrics and seed-repetition summaries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def n(self):
        return self.tp + self.fn + self.tn + self.fp

    @property
    def sensitivity(self):
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @property
    def specificity(self):
        neg = self.tn + self.fp
        return self.tn / neg if neg else float("nan")

    @property
    def bacc(self):
        """Balanced accuracy as a fraction; with a single class present it
        reduces to that class's accuracy."""
        parts = [v for v in (self.sensitivity, self.specificity) if not np.isnan(v)]
        return float(np.mean(parts)) if parts else float("nan")

    def as_row(self):
        return {
            "n": self.n, "tp": self.tp, "fn": self.fn, "tn": self.tn, "fp": self.fp,
            "sensitivity": self.sensitivity, "specificity": self.specificity,
            "bacc": self.bacc,
        }


def confusion(y_true, y_pred):
    """Confusion counts for boolean (or 0/1) arrays; True is the positive class."""
    t = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    if t.shape != p.shape:
        raise ValueError(f"label/prediction shape mismatch: {t.shape} vs {p.shape}")
    return MetricsReport(
        tp=int((t & p).sum()), fn=int((t & ~p).sum()),
        tn=int((~t & ~p).sum()), fp=int((~t & p).sum()),
    )


def balanced_accuracy(y_true, y_pred):
    return confusion(y_true, y_pred).bacc


def summarize(values):
    """(mean, sample std) over repetitions; std is 0 for a single run."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0
