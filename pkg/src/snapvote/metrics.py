"""Accuracy and per-window error statistics."""

import math
from dataclasses import dataclass

import numpy as np

from snapvote.errors import EnsembleError, ShapeError

STATS_HEADER = ("Min", "Max", "Mean", "Standard Error")


def accuracy(pred, true):
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ShapeError(f"{pred.shape[0] if pred.ndim else 0} predictions for "
                         f"{true.shape[0] if true.ndim else 0} labels")
    if pred.size == 0:
        raise ShapeError("accuracy of an empty label vector is undefined")
    return float(np.mean(pred == true))


@dataclass(frozen=True)
class ErrorStats:
    min: float
    max: float
    mean: float
    std: float  # population standard deviation
    window: str = ""
    count: int = 0

    def __post_init__(self):
        if not self.min <= self.mean <= self.max:
            # rounding can push the mean a hair outside; only reject real violations
            slack = 1e-12 * max(1.0, abs(self.max))
            if not self.min - slack <= self.mean <= self.max + slack:
                raise ValueError(f"inconsistent stats: min {self.min}, mean {self.mean}, max {self.max}")
        if self.std < 0:
            raise ValueError(f"std must be >= 0, got {self.std}")

    @classmethod
    def from_errors(cls, errors, window="", count=None):
        errors = [float(e) for e in errors]
        if not errors:
            raise EnsembleError(f"no snapshots in window {window or '?'}")
        mean = math.fsum(errors) / len(errors)
        var = math.fsum((e - mean) ** 2 for e in errors) / len(errors)
        return cls(min(errors), max(errors), mean, math.sqrt(var), window,
                   len(errors) if count is None else count)

    def values(self):
        return (self.min, self.max, self.mean, self.std)


def error_stats(store, window):
    """Statistics of the validation error over the snapshots inside ``window``."""
    return ErrorStats.from_errors([s.valid_error for s in store.select(window)], str(window))


def format_stats_table(stats, decimals=6):
    """Space-separated header line and value row, one fixed-point column each."""
    row = " ".join(f"{v:.{decimals}f}" for v in stats.values())
    return " ".join(STATS_HEADER) + "\n" + row
