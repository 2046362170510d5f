"""Shared data objects and input validation.

Every numerical routine in the package works on plain ``numpy`` arrays; the
classes here exist so that validated inputs can be passed around once and
trusted afterwards.  All of them are immutable (their arrays are marked
read-only).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_EPSILON = 1e-12
ROW_SUM_SLACK = 1e-6


class CalibrationDataError(ValueError):
    """Raised when probability, logit or label data violate their invariants."""


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _default_names(c):
    return tuple(f"class_{j}" for j in range(c))


@dataclass(frozen=True)
class ProbabilityMatrix:
    """Row-stochastic ``n x c`` matrix of probability predictions.

    Build instances with :func:`validate_and_floor`; the constructor itself
    only checks shapes.
    """

    values: np.ndarray
    category_names: tuple = ()

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 2:
            raise CalibrationDataError(
                f"probability matrix must be n x c with n >= 1, c >= 2; got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)
        names = tuple(self.category_names) or _default_names(values.shape[1])
        if len(names) != values.shape[1]:
            raise CalibrationDataError(
                f"{len(names)} category names for {values.shape[1]} columns"
            )
        object.__setattr__(self, "category_names", tuple(str(s) for s in names))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def c(self):
        return self.values.shape[1]

    def argmax(self):
        """Predicted class per row; ties go to the lowest index."""
        return np.argmax(self.values, axis=1)

    def confidence(self):
        return self.values.max(axis=1)


@dataclass(frozen=True)
class LogitMatrix:
    """Pre-softmax scores, ``n x c``, all finite."""

    values: np.ndarray
    category_names: tuple = ()

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 2:
            raise CalibrationDataError(f"logit matrix must be n x c with c >= 2; got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values).all(axis=1))[0])
            raise CalibrationDataError(f"non-finite logit in row {bad}")
        object.__setattr__(self, "values", values)
        names = tuple(self.category_names) or _default_names(values.shape[1])
        object.__setattr__(self, "category_names", tuple(str(s) for s in names))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def c(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class LabelData:
    """Observed class labels as integer indices into ``range(n_classes)``."""

    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise CalibrationDataError("labels must be one-dimensional")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            as_int = labels.astype(np.int64)
            if not np.array_equal(as_int, labels):
                raise CalibrationDataError("labels must be integer class indices")
            labels = as_int
        labels = np.array(labels, dtype=np.int64, copy=True)
        if self.n_classes < 2:
            raise CalibrationDataError("need at least two classes")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            bad = int(np.flatnonzero((labels < 0) | (labels >= self.n_classes))[0])
            raise CalibrationDataError(
                f"label {labels[bad]} at row {bad} is outside [0, {self.n_classes})"
            )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_classes", int(self.n_classes))

    @property
    def n(self):
        return self.labels.shape[0]

    def one_hot(self):
        out = np.zeros((self.n, self.n_classes))
        out[np.arange(self.n), self.labels] = 1.0
        return out

    def counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


def encode_labels(raw, category_names: Optional[Sequence[str]] = None, n_classes=None):
    """Map raw labels (ints or strings) to :class:`LabelData`.

    Integer labels are used as indices directly.  String labels are looked up
    in ``category_names`` when given; otherwise categories are numbered in
    order of first appearance.

    Returns
    -------
    labels : LabelData
    names : tuple of str
        Category names in index order.
    """
    raw = list(raw)
    if category_names is not None:
        names = tuple(str(s) for s in category_names)
        index = {s: j for j, s in enumerate(names)}
        out = []
        for i, v in enumerate(raw):
            key = str(v).strip()
            if key in index:
                out.append(index[key])
            elif _is_int(key) and 0 <= int(key) < len(names):
                out.append(int(key))
            else:
                raise CalibrationDataError(f"unknown label {v!r} at row {i}")
        return LabelData(np.asarray(out, dtype=np.int64), len(names)), names

    if all(isinstance(v, (int, np.integer)) or _is_int(str(v).strip()) for v in raw):
        ints = np.asarray([int(str(v).strip()) for v in raw], dtype=np.int64)
        c = n_classes if n_classes is not None else int(ints.max()) + 1
        return LabelData(ints, max(c, 2)), _default_names(max(c, 2))

    order = {}
    for v in raw:
        order.setdefault(str(v).strip(), len(order))
    names = tuple(order)
    if n_classes is not None and len(names) > n_classes:
        raise CalibrationDataError(f"{len(names)} distinct labels but only {n_classes} classes")
    c = n_classes if n_classes is not None else len(names)
    names = names + _default_names(c)[len(names):]
    return LabelData(np.asarray([order[str(v).strip()] for v in raw], dtype=np.int64), c), names


def _is_int(s):
    try:
        int(s)
    except (TypeError, ValueError):
        return False
    return True


def validate_and_floor(raw, epsilon=DEFAULT_EPSILON, category_names=None):
    """Check that ``raw`` is row-stochastic and floor tiny entries.

    Entries below ``epsilon / (1 + c * epsilon)`` are raised to ``epsilon``
    and the affected rows renormalized.  Rows whose sum is off by more than
    ``1e-15`` are renormalized as well; every other row is returned bit for
    bit.  The lower threshold is what makes the operation idempotent: a
    floored entry ends up at ``epsilon / s`` with ``s <= 1 + c * epsilon``.

    Parameters
    ----------
    raw : array-like, shape (n, c)
    epsilon : float
        Probability floor, in ``(0, 1/c)``.
    category_names : sequence of str, optional

    Returns
    -------
    ProbabilityMatrix

    Raises
    ------
    CalibrationDataError
        On non-finite entries, entries outside ``[0, 1]``, row sums outside
        ``1 +/- 1e-6`` or fewer than two columns.
    """
    if isinstance(raw, ProbabilityMatrix):
        category_names = category_names or raw.category_names
        raw = raw.values
    x = np.array(raw, dtype=float, copy=True)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] < 2:
        raise CalibrationDataError(f"need an n x c matrix with c >= 2; got shape {x.shape}")
    if x.shape[0] < 1:
        raise CalibrationDataError("no rows")
    n, c = x.shape
    if not 0.0 < epsilon < 1.0 / c:
        raise CalibrationDataError(f"epsilon must lie in (0, 1/c) = (0, {1.0 / c}); got {epsilon}")

    finite = np.isfinite(x).all(axis=1)
    if not finite.all():
        raise CalibrationDataError(f"non-finite probability in row {int(np.flatnonzero(~finite)[0])}")
    in_range = ((x >= -ROW_SUM_SLACK) & (x <= 1.0 + ROW_SUM_SLACK)).all(axis=1)
    if not in_range.all():
        raise CalibrationDataError(f"probability outside [0, 1] in row {int(np.flatnonzero(~in_range)[0])}")
    sums = x.sum(axis=1)
    bad = np.abs(sums - 1.0) > ROW_SUM_SLACK
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise CalibrationDataError(f"row {i} sums to {sums[i]:.6g}, not 1")

    low = x < epsilon / (1.0 + c * epsilon)
    touch = low.any(axis=1) | (np.abs(sums - 1.0) > 1e-15)
    if touch.any():
        rows = np.where(low[touch], epsilon, x[touch])
        x[touch] = rows / rows.sum(axis=1, keepdims=True)
    return ProbabilityMatrix(x, tuple(category_names) if category_names is not None else ())


def as_probabilities(x, epsilon=DEFAULT_EPSILON):
    """Return validated, floored probabilities as a plain array."""
    if isinstance(x, ProbabilityMatrix):
        return x.values
    return validate_and_floor(x, epsilon).values


def as_labels(y, n_classes):
    """Return labels as an int array checked against ``n_classes``."""
    if isinstance(y, LabelData):
        if y.n_classes != n_classes:
            raise CalibrationDataError(f"labels have {y.n_classes} classes, predictions have {n_classes}")
        return y.labels
    return LabelData(np.asarray(y), n_classes).labels


def as_logits(z):
    if isinstance(z, LogitMatrix):
        return z.values
    return LogitMatrix(np.asarray(z, dtype=float)).values


def check_same_n(*arrays):
    ns = {len(a) for a in arrays}
    if len(ns) > 1:
        raise CalibrationDataError(f"row count mismatch: {sorted(ns)}")


@dataclass(frozen=True)
class MclloParams:
    """Shift (``delta``) and scale (``gamma``) vectors of the log odds map.

    Both vectors have one entry per non-baseline category, in column order
    with the baseline column skipped.
    """

    delta: np.ndarray
    gamma: np.ndarray
    baseline: int = -1

    def __post_init__(self):
        delta = _frozen(np.atleast_1d(self.delta))
        gamma = _frozen(np.atleast_1d(self.gamma))
        if delta.ndim != 1 or delta.shape != gamma.shape:
            raise ValueError(f"delta and gamma must be vectors of equal length; got {delta.shape}, {gamma.shape}")
        if not np.all(np.isfinite(delta)) or np.any(delta <= 0):
            raise ValueError("delta must be strictly positive and finite")
        if not np.all(np.isfinite(gamma)):
            raise ValueError("gamma must be finite")
        c = delta.size + 1
        baseline = int(self.baseline)
        if baseline < 0:
            baseline += c
        if not 0 <= baseline < c:
            raise ValueError(f"baseline {self.baseline} outside [0, {c})")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "baseline", baseline)

    @classmethod
    def identity(cls, n_classes, baseline=-1):
        return cls(np.ones(n_classes - 1), np.ones(n_classes - 1), baseline)

    @classmethod
    def from_tau_gamma(cls, theta, baseline=-1):
        theta = np.asarray(theta, dtype=float)
        k = theta.size // 2
        return cls(np.exp(theta[:k]), theta[k:], baseline)

    @property
    def n_classes(self):
        return self.delta.size + 1

    def tau(self):
        return np.log(self.delta)

    def as_tau_gamma(self):
        return np.concatenate([self.tau(), self.gamma])

    def as_delta_gamma(self):
        return np.concatenate([self.delta, self.gamma])

    def is_identity(self):
        return bool(np.all(self.delta == 1.0) and np.all(self.gamma == 1.0))


@dataclass(frozen=True)
class FitResult:
    """Outcome of a maximum likelihood fit of the log odds map.

    ``std_errors`` are ordered like ``params.as_delta_gamma()`` and are NaN
    (never zero) when the Hessian could not be inverted.
    """

    params: MclloParams
    std_errors: np.ndarray
    loglik_mle: float
    loglik_null: float
    hessian: np.ndarray
    converged: bool
    iterations: int
    n: int
    grad_norm: float = float("nan")
    message: str = ""
    warnings: tuple = ()
    fingerprint: str = ""

    def __post_init__(self):
        object.__setattr__(self, "std_errors", _frozen(self.std_errors))
        object.__setattr__(self, "hessian", _frozen(self.hessian))


@dataclass(frozen=True)
class ReliabilityBins:
    """Equal-width confidence bins with per-bin accuracy and confidence.

    ``mean_confidence`` and ``accuracy`` are NaN for empty bins.
    """

    edges: np.ndarray
    counts: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray

    @property
    def n_bins(self):
        return self.counts.size

    def rows(self):
        """Tuples ``(bin_lo, bin_hi, count, mean_conf, accuracy)``."""
        return [
            (float(self.edges[b]), float(self.edges[b + 1]), int(self.counts[b]),
             float(self.mean_confidence[b]), float(self.accuracy[b]))
            for b in range(self.n_bins)
        ]

    def ece(self):
        n = self.counts.sum()
        nz = self.counts > 0
        gaps = np.abs(self.accuracy[nz] - self.mean_confidence[nz])
        return float(np.sum(self.counts[nz] / n * gaps))


@dataclass(frozen=True)
class CalibrationReport:
    """One row of a calibration comparison table."""

    lrt_stat: float
    df: int
    p_value: float
    ece: float
    mce: float
    ece_bins: int
    accuracy: float
    n: int
    label_change_rate: Optional[float] = None
    reliability: list = field(default_factory=list)
    name: str = ""
