"""Likelihood ratio test of calibration and the chi-square tail it needs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import CalibrationDataError
from .mcllo import data_fingerprint

DEFAULT_ALPHAS = (0.01, 0.05, 0.10)
_EPS = 1e-16
_MAX_ITER = 10_000


def _gamma_series(a, x):
    # lower regularized P(a, x), valid for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a, x):
    # upper regularized Q(a, x) by modified Lentz, valid for x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_q(a, x):
    """Upper regularized incomplete gamma function ``Q(a, x)``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return min(1.0, max(0.0, 1.0 - _gamma_series(a, x)))
    return min(1.0, max(0.0, _gamma_cf(a, x)))


def chi_sq_sf(x, df):
    """Upper tail ``P(chi2_df > x)``.

    >>> round(chi_sq_sf(2 * math.log(2), 2), 12)
    0.5
    """
    if df <= 0 or int(df) != df:
        raise ValueError(f"df must be a positive integer; got {df}")
    if not x >= 0:
        raise ValueError(f"x must be nonnegative; got {x}")
    return regularized_gamma_q(df / 2.0, x / 2.0)


def chi_sq_cdf(x, df):
    return 1.0 - chi_sq_sf(x, df)


@dataclass(frozen=True)
class TestResult:
    """Likelihood ratio test outcome.

    ``clamped`` records that a slightly negative statistic (optimizer
    round-off) was set to zero.
    """

    statistic: float
    df: int
    p_value: float
    reject_at: dict = field(default_factory=dict)
    clamped: bool = False
    note: str = ""

    __test__ = False


def lrt_from_logliks(loglik_mle, loglik_null, df, alphas=DEFAULT_ALPHAS):
    stat = 2.0 * (loglik_mle - loglik_null)
    clamped = stat < 0
    stat = max(stat, 0.0)
    p = chi_sq_sf(stat, df)
    return TestResult(
        statistic=stat,
        df=int(df),
        p_value=p,
        reject_at={a: p < a for a in alphas},
        clamped=clamped,
    )


def lrt(x, y, fit, alphas=DEFAULT_ALPHAS):
    """Test the null hypothesis that predictions ``x`` are calibrated for ``y``.

    The statistic is ``2 * (loglik_mle - loglik_null)`` with the null at the
    identity map, referred to chi-square on ``2(c-1)`` degrees of freedom.

    Parameters
    ----------
    x, y : predictions and labels the fit was computed on
    fit : FitResult
    alphas : iterable of float
        Significance levels for the ``reject_at`` map.

    Raises
    ------
    CalibrationDataError
        If ``fit`` was not produced from ``(x, y)`` with the same baseline.
    """
    if fit.fingerprint and fit.fingerprint != data_fingerprint(x, y, fit.params.baseline):
        raise CalibrationDataError("fit was computed on different data or baseline")
    df = 2 * (fit.params.n_classes - 1)
    res = lrt_from_logliks(fit.loglik_mle, fit.loglik_null, df, alphas)
    note = ""
    if fit.n < 10 * df:
        note = f"n={fit.n} is small for an asymptotic test on {df} df"
    if not fit.converged:
        note = (note + "; " if note else "") + "fit did not converge"
    if note:
        res = TestResult(res.statistic, res.df, res.p_value, res.reject_at, res.clamped, note)
    return res


def calibration_test(x, y, baseline=-1, options=None, alphas=DEFAULT_ALPHAS):
    """Fit the log odds map and run :func:`lrt` in one call."""
    from .mcllo import fit_mle

    fit = fit_mle(x, y, baseline, options)
    return lrt(x, y, fit, alphas), fit
