"""Multicategory linear log odds (MCLLO) recalibration.

Each non-baseline category ``j`` has its log odds against the baseline
shifted and scaled::

    log(g_j / g_b) = log(delta_j) + gamma_j * log(x_j / x_b)

so the recalibrated row is ``softmax(m)`` with ``m_j = tau_j + gamma_j * l_j``
(``tau = log delta``, ``l`` the input log odds) and ``m_b = 0``.  Everything
below is evaluated in that log-softmax form; nothing raises probabilities to
powers directly.

The negative log likelihood is convex in ``(tau, gamma)``, so fitting happens
there and results are reported in ``(delta, gamma)``.
"""
from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import (
    DEFAULT_EPSILON,
    CalibrationDataError,
    FitResult,
    MclloParams,
    as_labels,
    as_probabilities,
    check_same_n,
)

logger = logging.getLogger(__name__)

PARAMETERIZATIONS = ("tau_gamma", "delta_gamma")


class ConvergenceWarning(UserWarning):
    pass


class DataWarning(UserWarning):
    """Input is valid but thin: few rows per parameter or unseen categories."""


@dataclass(frozen=True)
class OptimizerOptions:
    """Stopping rules and safeguards for :func:`fit_mle`.

    ``gtol`` applies to the infinity norm of the gradient of the summed log
    likelihood.  ``max_iter`` bounds quasi-Newton and Newton iterations
    together.  The box ``|tau| <= tau_bound``, ``|gamma| <= gamma_bound``
    only matters for separable data, where the MLE runs off to infinity.
    """

    max_iter: int = 500
    gtol: float = 1e-8
    tau_bound: float = 30.0
    gamma_bound: float = 100.0
    newton_steps: int = 50
    compute_se: bool = True
    se_step: float = 1e-5


def nonbaseline(c, baseline):
    return np.array([j for j in range(c) if j != baseline], dtype=int)


def log_odds(x, baseline=-1):
    """Log odds of every non-baseline column against the baseline column.

    Returns an ``n x (c-1)`` array.
    """
    x = as_probabilities(x)
    c = x.shape[1]
    b = baseline % c
    logx = np.log(x)
    return logx[:, nonbaseline(c, b)] - logx[:, [b]]


def _check_params(x, params):
    if not isinstance(params, MclloParams):
        raise TypeError("params must be MclloParams")
    if params.n_classes != x.shape[1]:
        raise CalibrationDataError(
            f"parameters are for {params.n_classes} classes, predictions have {x.shape[1]}"
        )


def _scores(l, tau, gamma, c, b):
    m = np.zeros((l.shape[0], c))
    m[:, nonbaseline(c, b)] = tau + gamma * l
    return m


def _log_softmax(m):
    mmax = m.max(axis=1, keepdims=True)
    shifted = m - mmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def mcllo_map(x, params: MclloParams):
    """Recalibrate probability predictions with the log odds map.

    Parameters
    ----------
    x : ProbabilityMatrix or array-like, shape (n, c)
    params : MclloParams

    Returns
    -------
    ndarray, shape (n, c)
        Recalibrated probabilities.  Identity parameters return ``x``
        unchanged.
    """
    x = as_probabilities(x)
    _check_params(x, params)
    if params.is_identity():
        return x.copy()
    c, b = x.shape[1], params.baseline
    m = _scores(log_odds(x, b), params.tau(), params.gamma, c, b)
    g = np.exp(_log_softmax(m))
    # exp of a log-softmax is off by a few ulp; renormalize to keep rows exact
    g /= g.sum(axis=1, keepdims=True)
    return g


def _prepare(x, y, baseline):
    x = as_probabilities(x)
    labels = as_labels(y, x.shape[1])
    check_same_n(x, labels)
    return x, labels, baseline % x.shape[1]


class _Problem:
    """Cached log odds and one-hot labels for repeated likelihood evaluation."""

    def __init__(self, x, labels, baseline):
        self.n, self.c = x.shape
        self.b = baseline
        self.nb = nonbaseline(self.c, baseline)
        self.l = np.log(x[:, self.nb]) - np.log(x[:, [baseline]])
        self.labels = labels
        self.k = self.c - 1
        onehot = np.zeros((self.n, self.c))
        onehot[np.arange(self.n), labels] = 1.0
        self.y_nb = onehot[:, self.nb]
        self.rows = np.arange(self.n)

    def split(self, theta):
        return theta[: self.k], theta[self.k:]

    def logg(self, theta):
        tau, gamma = self.split(theta)
        return _log_softmax(_scores(self.l, tau, gamma, self.c, self.b))

    def loglik(self, theta):
        return float(self.logg(theta)[self.rows, self.labels].sum())

    def loglik_and_grad(self, theta):
        logg = self.logg(theta)
        r = self.y_nb - np.exp(logg[:, self.nb])
        grad = np.concatenate([r.sum(axis=0), (r * self.l).sum(axis=0)])
        return float(logg[self.rows, self.labels].sum()), grad

    def hessian_nll(self, theta):
        """Analytic Hessian of the negative log likelihood in ``(tau, gamma)``."""
        g = np.exp(self.logg(theta)[:, self.nb])
        gl = g * self.l
        h_tt = np.diag(g.sum(axis=0)) - g.T @ g
        h_tg = np.diag(gl.sum(axis=0)) - g.T @ gl
        h_gg = np.diag((gl * self.l).sum(axis=0)) - gl.T @ gl
        return np.block([[h_tt, h_tg], [h_tg.T, h_gg]])


def log_likelihood(x, y, params: MclloParams):
    """Multinomial log likelihood of labels ``y`` under recalibrated ``x``.

    Evaluated with a log-softmax, so it stays finite for extreme parameters.
    """
    x, labels, b = _prepare(x, y, params.baseline)
    _check_params(x, params)
    return _Problem(x, labels, b).loglik(params.as_tau_gamma())


def grad_log_likelihood(x, y, params: MclloParams, parameterization="tau_gamma"):
    """Gradient of :func:`log_likelihood`, ordered ``(shift..., scale...)``.

    With ``parameterization="tau_gamma"`` the shift block is the derivative
    with respect to ``log(delta)``; with ``"delta_gamma"`` it is with respect
    to ``delta`` itself.
    """
    if parameterization not in PARAMETERIZATIONS:
        raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
    x, labels, b = _prepare(x, y, params.baseline)
    _check_params(x, params)
    _, grad = _Problem(x, labels, b).loglik_and_grad(params.as_tau_gamma())
    if parameterization == "delta_gamma":
        k = params.delta.size
        grad[:k] /= params.delta
    return grad


def hessian_neg_log_likelihood(x, y, params: MclloParams):
    """Analytic Hessian of the negative log likelihood in ``(tau, gamma)``."""
    x, labels, b = _prepare(x, y, params.baseline)
    _check_params(x, params)
    return _Problem(x, labels, b).hessian_nll(params.as_tau_gamma())


def _fingerprint(x, labels, baseline):
    h = hashlib.blake2b(digest_size=16)
    h.update(np.ascontiguousarray(x, dtype=float).tobytes())
    h.update(np.ascontiguousarray(labels, dtype=np.int64).tobytes())
    h.update(str(int(baseline)).encode())
    return h.hexdigest()


def data_fingerprint(x, y, baseline=-1):
    """Digest of ``(x, y, baseline)`` used to tie a fit to its data."""
    x, labels, b = _prepare(x, y, baseline)
    return _fingerprint(x, labels, b)


def _project(theta, lo, hi):
    return np.minimum(np.maximum(theta, lo), hi)


def _projected_grad(theta, grad_nll, lo, hi):
    pg = grad_nll.copy()
    pg[(theta <= lo) & (grad_nll > 0)] = 0.0
    pg[(theta >= hi) & (grad_nll < 0)] = 0.0
    return pg


def _newton_polish(prob, theta, lo, hi, opts, budget):
    """Damped, projected Newton steps until the gradient tolerance is met."""
    steps = 0
    ll, grad = prob.loglik_and_grad(theta)
    for _ in range(budget):
        pg = _projected_grad(theta, -grad, lo, hi)
        if np.max(np.abs(pg)) <= opts.gtol:
            break
        free = pg != 0.0
        h = prob.hessian_nll(theta)[np.ix_(free, free)]
        try:
            step = -np.linalg.solve(h + 1e-12 * np.eye(h.shape[0]), -grad[free])
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, grad[free], rcond=None)[0]
        direction = np.zeros_like(theta)
        direction[free] = step
        t = 1.0
        while t > 1e-10:
            cand = _project(theta + t * direction, lo, hi)
            cand_ll, cand_grad = prob.loglik_and_grad(cand)
            if cand_ll >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            break
        moved = np.max(np.abs(cand - theta))
        theta, ll, grad = cand, cand_ll, cand_grad
        steps += 1
        if moved == 0.0:
            break
    return theta, ll, grad, steps


def _se_hessian(prob, params, step):
    """Negative log likelihood Hessian in ``(delta, gamma)`` by central differences."""
    k = prob.k
    point = params.as_delta_gamma()

    def grad_nll(p):
        theta = np.concatenate([np.log(p[:k]), p[k:]])
        _, g = prob.loglik_and_grad(theta)
        g = -g
        g[:k] /= p[:k]
        return g

    dim = point.size
    h = np.empty((dim, dim))
    for a in range(dim):
        hstep = step * max(1.0, abs(point[a]))
        if a < k:
            hstep = min(hstep, 0.5 * point[a])
        up, down = point.copy(), point.copy()
        up[a] += hstep
        down[a] -= hstep
        h[:, a] = (grad_nll(up) - grad_nll(down)) / (2.0 * hstep)
    return 0.5 * (h + h.T)


def standard_errors(hessian):
    """Square roots of the inverse-Hessian diagonal, NaN when singular.

    Returns
    -------
    se : ndarray
    message : str
        Empty on success, otherwise why the SEs are NaN.
    """
    dim = hessian.shape[0]
    nan = np.full(dim, np.nan)
    if not np.all(np.isfinite(hessian)):
        return nan, "Hessian has non-finite entries"
    eig = np.linalg.eigvalsh(hessian)
    # a finite-difference Hessian carries ~1e-8 relative noise; below that it is singular
    if eig[0] <= 1e-8 * eig[-1]:
        return nan, f"Hessian is singular or indefinite (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})"
    diag = np.diag(np.linalg.inv(hessian))
    if np.any(diag <= 0):
        return nan, "inverse Hessian has a non-positive diagonal"
    return np.sqrt(diag), ""


def fit_mle(x, y, baseline=-1, options: OptimizerOptions | None = None):
    """Maximum likelihood fit of the log odds map.

    Starts at the identity (``tau = 0``, ``gamma = 1``), runs L-BFGS-B in
    ``(tau, gamma)`` with the analytic gradient, and finishes with projected
    Newton steps if the gradient tolerance has not been reached.

    Parameters
    ----------
    x : ProbabilityMatrix or array-like, shape (n, c)
    y : LabelData or array-like of int, shape (n,)
    baseline : int
        Baseline column; negative values count from the end.
    options : OptimizerOptions, optional

    Returns
    -------
    FitResult
    """
    opts = options or OptimizerOptions()
    x, labels, b = _prepare(x, y, baseline)
    n, c = x.shape
    prob = _Problem(x, labels, b)
    k = prob.k
    notes = []
    if n < 10 * k:
        notes.append(f"only {n} observations for {2 * k} parameters")
    missing = np.flatnonzero(np.bincount(labels, minlength=c) == 0)
    if missing.size:
        notes.append(f"categories {missing.tolist()} never observed")
    for note in notes:
        warnings.warn(note, DataWarning, stacklevel=2)

    lo = np.concatenate([np.full(k, -opts.tau_bound), np.full(k, -opts.gamma_bound)])
    hi = -lo
    theta0 = np.concatenate([np.zeros(k), np.ones(k)])
    ll_null, grad0 = prob.loglik_and_grad(theta0)

    def objective(theta):
        ll, g = prob.loglik_and_grad(theta)
        return -ll / n, -g / n

    iterations = 0
    theta = theta0
    if np.max(np.abs(grad0)) > opts.gtol:
        res = optimize.minimize(
            objective,
            theta0,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": opts.max_iter, "gtol": opts.gtol / n, "ftol": 1e-15, "maxcor": 20},
        )
        theta = res.x
        iterations = int(res.nit)
    budget = min(opts.newton_steps, max(0, opts.max_iter - iterations))
    theta, ll, grad, newton = _newton_polish(prob, theta, lo, hi, opts, budget)
    iterations += newton
    if ll < ll_null:
        theta, ll, grad = theta0, ll_null, grad0
    pgrad = _projected_grad(theta, -grad, lo, hi)
    grad_norm = float(np.max(np.abs(pgrad)))
    converged = grad_norm <= opts.gtol
    message = "converged" if converged else f"gradient norm {grad_norm:.3g} above tolerance"
    at_bound = np.isclose(np.abs(theta), hi)
    if at_bound.any():
        message += "; parameters at safeguard bound (separable data?)"
        notes.append("parameters at safeguard bound")
    if not converged:
        warnings.warn(message, ConvergenceWarning, stacklevel=2)

    params = MclloParams.from_tau_gamma(theta, b)
    if opts.compute_se:
        hess = _se_hessian(prob, params, opts.se_step)
        se, se_msg = standard_errors(hess)
        if se_msg:
            notes.append(se_msg)
            logger.warning("standard errors unavailable: %s", se_msg)
    else:
        hess = np.full((2 * k, 2 * k), np.nan)
        se = np.full(2 * k, np.nan)
    return FitResult(
        params=params,
        std_errors=se,
        loglik_mle=float(ll),
        loglik_null=float(ll_null),
        hessian=hess,
        converged=bool(converged),
        iterations=iterations,
        n=n,
        grad_norm=grad_norm,
        message=message,
        warnings=tuple(notes),
        fingerprint=_fingerprint(x, labels, b),
    )


class MCLLOCalibrator(TransformerMixin, BaseEstimator):
    """Recalibrate probability predictions with the linear log odds map.

    Parameters
    ----------
    baseline : int, default=-1
        Reference column; ``-1`` is the last category.
    epsilon : float, default=1e-12
        Probability floor applied before taking logs.
    max_iter : int, default=500
    tol : float, default=1e-8
        Gradient infinity-norm tolerance on the summed log likelihood.
    compute_se : bool, default=True

    Attributes
    ----------
    fit_result_ : FitResult
    params_ : MclloParams
    delta_, gamma_ : ndarray of shape (n_classes - 1,)
    std_errors_ : ndarray of shape (2 * (n_classes - 1),)
    test_result_ : TestResult
        Likelihood ratio test of calibration on the training data.
    n_classes_ : int
    """

    def __init__(self, baseline=-1, epsilon=DEFAULT_EPSILON, max_iter=500, tol=1e-8, compute_se=True):
        self.baseline = baseline
        self.epsilon = epsilon
        self.max_iter = max_iter
        self.tol = tol
        self.compute_se = compute_se

    def fit(self, X, y):
        from .inference import lrt

        X = as_probabilities(X, self.epsilon)
        opts = OptimizerOptions(max_iter=self.max_iter, gtol=self.tol, compute_se=self.compute_se)
        self.fit_result_ = fit_mle(X, y, self.baseline, opts)
        self.params_ = self.fit_result_.params
        self.delta_ = np.array(self.params_.delta)
        self.gamma_ = np.array(self.params_.gamma)
        self.std_errors_ = np.array(self.fit_result_.std_errors)
        self.n_classes_ = X.shape[1]
        self.test_result_ = lrt(X, y, self.fit_result_)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        return mcllo_map(as_probabilities(X, self.epsilon), self.params_)

    def transform(self, X):
        return self.predict_proba(X)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def score(self, X, y):
        """Mean log likelihood of ``y`` under the recalibrated predictions."""
        check_is_fitted(self, "params_")
        X = as_probabilities(X, self.epsilon)
        return log_likelihood(X, y, self.params_) / X.shape[0]
