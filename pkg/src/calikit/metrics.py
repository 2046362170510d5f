"""Binned calibration metrics and reliability-diagram data.

Confidence is the row maximum and the prediction its argmax (lowest index
on ties).  Bins are ``B`` equal-width intervals ``[0, 1/B], (1/B, 2/B], ...,
((B-1)/B, 1]``.
"""
from __future__ import annotations

import math

import numpy as np

from .core import ReliabilityBins, as_labels, as_probabilities, check_same_n

DIAGRAM_BINS = 10


def sqrt_bins(n):
    """Square-root rule: ``round(sqrt(n))``, at least 2."""
    return max(2, int(round(math.sqrt(n))))


def _resolve_bins(bins, n):
    if bins is None or bins == "sqrt":
        return sqrt_bins(n)
    bins = int(bins)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    return bins


def bin_index(conf, bins):
    """Bin of each confidence value under the right-closed convention."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.searchsorted(edges, conf, side="left") - 1
    return np.clip(idx, 0, bins - 1), edges


def reliability(x, y, bins=DIAGRAM_BINS):
    """Per-bin counts, mean confidence and accuracy.

    Parameters
    ----------
    x : ProbabilityMatrix or array-like, shape (n, c)
    y : labels
    bins : int or "sqrt"

    Returns
    -------
    ReliabilityBins
    """
    x = as_probabilities(x)
    labels = as_labels(y, x.shape[1])
    check_same_n(x, labels)
    bins = _resolve_bins(bins, x.shape[0])
    conf = x.max(axis=1)
    correct = (np.argmax(x, axis=1) == labels).astype(float)
    idx, edges = bin_index(conf, bins)
    counts = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    hit_sum = np.bincount(idx, weights=correct, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.where(counts > 0, conf_sum / counts, np.nan)
        acc = np.where(counts > 0, hit_sum / counts, np.nan)
    return ReliabilityBins(edges=edges, counts=counts, mean_confidence=mean_conf, accuracy=acc)


def ece(x, y, bins="sqrt"):
    """Expected calibration error, ``sum_m |B_m|/n * |acc_m - conf_m|``."""
    return reliability(x, y, bins).ece()


def mce(x, y, bins="sqrt"):
    """Maximum calibration error over nonempty bins."""
    rel = reliability(x, y, bins)
    nz = rel.counts > 0
    return float(np.max(np.abs(rel.accuracy[nz] - rel.mean_confidence[nz])))


def accuracy(x, y):
    x = as_probabilities(x)
    labels = as_labels(y, x.shape[1])
    check_same_n(x, labels)
    return float(np.mean(np.argmax(x, axis=1) == labels))


def label_change_rate(before, after):
    """Fraction of rows whose argmax differs between two prediction sets."""
    before = np.asarray(before.values if hasattr(before, "values") else before, dtype=float)
    after = np.asarray(after.values if hasattr(after, "values") else after, dtype=float)
    if before.shape != after.shape:
        raise ValueError(f"shape mismatch: {before.shape} vs {after.shape}")
    return float(np.mean(np.argmax(before, axis=1) != np.argmax(after, axis=1)))
