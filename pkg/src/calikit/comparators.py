"""Baseline recalibrators: temperature scaling, vector scaling, histogram binning.

Temperature and vector scaling act on logits; histogram binning acts on
probabilities, one class at a time.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import (
    DEFAULT_EPSILON,
    CalibrationDataError,
    as_labels,
    as_logits,
    as_probabilities,
    check_same_n,
)
from .mcllo import ConvergenceWarning
from .metrics import bin_index, sqrt_bins

T_MIN, T_MAX = 1e-2, 1e2
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _check_fit_inputs(z, y):
    z = as_logits(z)
    labels = as_labels(y, z.shape[1])
    check_same_n(z, labels)
    if z.shape[0] < 2:
        raise CalibrationDataError("need at least two observations")
    if np.unique(labels).size < 2:
        raise CalibrationDataError("need at least two distinct labels")
    return z, labels


def softmax_nll(scores, labels):
    """Summed multinomial negative log likelihood of ``softmax(scores)``."""
    return float(-log_softmax(scores, axis=1)[np.arange(len(labels)), labels].sum())


def apply_temperature(z, temperature):
    return softmax(as_logits(z) / temperature, axis=1)


def golden_section(f, lo, hi, tol):
    """Minimize a unimodal ``f`` on ``[lo, hi]`` until the bracket is below ``tol``."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fit_temperature(z, y, tol=1e-6):
    """Temperature minimizing the softmax NLL of ``z / T`` over ``[0.01, 100]``.

    The NLL is convex in ``1/T`` and so unimodal in ``T``, which is what
    golden-section search needs.
    """
    z, labels = _check_fit_inputs(z, y)
    t = golden_section(lambda t: softmax_nll(z / t, labels), T_MIN, T_MAX, tol)
    # the bracket never includes its end points; check them explicitly
    best = min((t, T_MIN, T_MAX), key=lambda s: softmax_nll(z / s, labels))
    return float(best)


def apply_vector_scaling(z, w, b):
    return softmax(as_logits(z) * np.asarray(w) + np.asarray(b), axis=1)


@dataclass(frozen=True)
class VectorScalingFit:
    w: np.ndarray
    b: np.ndarray
    nll: float
    converged: bool
    iterations: int


def fit_vector_scaling(z, y, max_iter=1000, gtol=1e-8):
    """Per-class scale ``w`` and bias ``b`` minimizing the NLL of ``softmax(w*z + b)``.

    The bias is reported with ``sum(b) == 0``; softmax is shift invariant so
    this loses nothing.

    Returns
    -------
    VectorScalingFit
    """
    z, labels = _check_fit_inputs(z, y)
    n, c = z.shape
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0

    def objective(theta):
        w, b = theta[:c], theta[c:]
        s = z * w + b
        logp = log_softmax(s, axis=1)
        r = np.exp(logp) - onehot
        grad = np.concatenate([(r * z).sum(axis=0), r.sum(axis=0)])
        return -logp[np.arange(n), labels].sum() / n, grad / n

    theta0 = np.concatenate([np.ones(c), np.zeros(c)])
    res = optimize.minimize(objective, theta0, jac=True, method="BFGS",
                            options={"maxiter": max_iter, "gtol": gtol})
    theta = res.x
    if objective(theta)[0] > objective(theta0)[0]:
        theta = theta0
    w, b = theta[:c], theta[c:] - theta[c:].mean()
    converged = bool(res.success) or np.max(np.abs(res.jac)) < 1e-6
    if not converged:
        warnings.warn(f"vector scaling did not converge: {res.message}", ConvergenceWarning, stacklevel=2)
    return VectorScalingFit(w=w, b=b, nll=softmax_nll(z * w + b, labels),
                            converged=converged, iterations=int(res.nit))


@dataclass(frozen=True)
class BinningModel:
    """Per-class bin values; ``values[j, m]`` replaces class-``j`` scores in bin ``m``."""

    edges: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    @property
    def n_bins(self):
        return self.edges.size - 1


def fit_histogram_binning(x, y, bins="sqrt", epsilon=DEFAULT_EPSILON):
    """Fit one equal-width histogram per class.

    Each bin's value is the observed frequency of that class among rows whose
    class score falls in the bin; empty bins keep their midpoint.
    """
    x = as_probabilities(x, epsilon)
    n, c = x.shape
    labels = as_labels(y, c)
    check_same_n(x, labels)
    bins = sqrt_bins(n) if bins in (None, "sqrt") else int(bins)
    if bins < 2:
        raise ValueError("bins must be >= 2")
    edges = np.linspace(0.0, 1.0, bins + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    values = np.empty((c, bins))
    counts = np.empty((c, bins), dtype=np.int64)
    for j in range(c):
        idx, _ = bin_index(x[:, j], bins)
        cnt = np.bincount(idx, minlength=bins)
        hits = np.bincount(idx, weights=(labels == j).astype(float), minlength=bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            values[j] = np.where(cnt > 0, hits / cnt, mids)
        counts[j] = cnt
    return BinningModel(edges=edges, values=values, counts=counts, epsilon=epsilon)


def apply_histogram_binning(model: BinningModel, x):
    x = as_probabilities(x, model.epsilon)
    if x.shape[1] != model.values.shape[0]:
        raise CalibrationDataError(f"model has {model.values.shape[0]} classes, input has {x.shape[1]}")
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        idx, _ = bin_index(x[:, j], model.n_bins)
        out[:, j] = model.values[j, idx]
    out = np.maximum(out, model.epsilon)
    return out / out.sum(axis=1, keepdims=True)


class TemperatureScaling(BaseEstimator):
    """Divide logits by a single fitted temperature.

    Attributes
    ----------
    temperature_ : float
    """

    def __init__(self, tol=1e-6):
        self.tol = tol

    def fit(self, Z, y):
        self.temperature_ = fit_temperature(Z, y, self.tol)
        self.n_classes_ = as_logits(Z).shape[1]
        return self

    def predict_proba(self, Z):
        check_is_fitted(self, "temperature_")
        return apply_temperature(Z, self.temperature_)

    def predict(self, Z):
        return np.argmax(self.predict_proba(Z), axis=1)


class VectorScaling(BaseEstimator):
    """Per-class scale and bias on logits (``2c`` parameters).

    Attributes
    ----------
    w_, b_ : ndarray of shape (n_classes,)
    converged_ : bool
    """

    def __init__(self, max_iter=1000, tol=1e-8):
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, Z, y):
        res = fit_vector_scaling(Z, y, self.max_iter, self.tol)
        self.w_, self.b_, self.converged_ = res.w, res.b, res.converged
        self.n_classes_ = res.w.size
        return self

    def predict_proba(self, Z):
        check_is_fitted(self, "w_")
        return apply_vector_scaling(Z, self.w_, self.b_)

    def predict(self, Z):
        return np.argmax(self.predict_proba(Z), axis=1)


class HistogramBinning(TransformerMixin, BaseEstimator):
    """Per-class histogram binning on probability predictions.

    Parameters
    ----------
    bins : int or "sqrt", default="sqrt"
        ``"sqrt"`` uses ``round(sqrt(n_train))`` bins.
    epsilon : float
    """

    def __init__(self, bins="sqrt", epsilon=DEFAULT_EPSILON):
        self.bins = bins
        self.epsilon = epsilon

    def fit(self, X, y):
        self.model_ = fit_histogram_binning(X, y, self.bins, self.epsilon)
        self.n_classes_ = self.model_.values.shape[0]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return apply_histogram_binning(self.model_, X)

    def transform(self, X):
        return self.predict_proba(X)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)
