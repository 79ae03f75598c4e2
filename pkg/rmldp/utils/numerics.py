"""Small numerical helpers shared by the walkers and estimators."""

import math
from typing import Tuple

import numpy as np
from scipy.special import logsumexp


class CompensatedSum:
    """Neumaier running sum of a scalar sequence."""

    def __init__(self) -> None:
        self.total = 0.0
        self.compensation = 0.0

    def add(self, value: float) -> float:
        """Add ``value`` and return the corrected running total."""
        t = self.total + value
        if abs(self.total) >= abs(value):
            self.compensation += (self.total - t) + value
        else:
            self.compensation += (value - t) + self.total
        self.total = t
        return self.total + self.compensation

    @property
    def value(self) -> float:
        return self.total + self.compensation


class CompensatedArraySum:
    """Elementwise Neumaier sums for a batch of walks."""

    def __init__(self, size: int) -> None:
        self.total = np.zeros(size)
        self.compensation = np.zeros(size)

    def add(self, values: np.ndarray) -> None:
        t = self.total + values
        big = np.abs(self.total) >= np.abs(values)
        self.compensation += np.where(big, (self.total - t) + values, (values - t) + self.total)
        self.total = t

    @property
    def value(self) -> np.ndarray:
        return self.total + self.compensation


def log_mean_exp(log_terms: np.ndarray) -> Tuple[float, float]:
    """Log of the mean of ``exp(log_terms)`` and the relative standard error.

    Zero terms are passed as ``-inf``.  The mean is accumulated with
    ``math.fsum`` after shifting by the largest term, so the result does not
    depend on how the terms were produced.
    """
    log_terms = np.asarray(log_terms, dtype=float)
    count = log_terms.size
    if count == 0 or not np.isfinite(log_terms).any():
        return -math.inf, math.inf
    shift = float(np.max(log_terms))
    scaled = np.exp(log_terms - shift)
    mean = math.fsum(scaled.tolist()) / count
    if count > 1:
        second = math.fsum((scaled * scaled).tolist()) / count
        variance = max(second - mean * mean, 0.0) * count / (count - 1)
        rel_error = math.sqrt(variance / count) / mean
    else:
        rel_error = math.inf
    return shift + math.log(mean), rel_error


def log_weighted_sum(log_weights: np.ndarray, values: np.ndarray) -> float:
    """``log(sum(exp(log_weights) * values))`` for nonnegative ``values``."""
    values = np.asarray(values, dtype=float)
    positive = values > 0
    if not positive.any():
        return -math.inf
    return float(logsumexp(np.asarray(log_weights)[positive] + np.log(values[positive])))


def safe_exp(log_value: float) -> float:
    """``exp`` that underflows to 0 and saturates at ``inf`` instead of raising."""
    if log_value == -math.inf:
        return 0.0
    if log_value > 709.0:
        return math.inf
    return math.exp(log_value)
