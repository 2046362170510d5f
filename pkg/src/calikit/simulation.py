"""Seeded Monte Carlo studies of the calibration test and recalibration.

Reported predictions are drawn from a symmetric Dirichlet; the true event
probabilities are those predictions pushed through the log odds map with
``delta = (delta_1, 1, ..., 1)`` and ``gamma = 1``, and labels are drawn from
the truth.  With ``delta_1 = 1`` the predictions are calibrated by
construction.

Every repetition gets its own generator seeded from
``(seed, n, delta_1, rep)``, so any subset of repetitions can be run in any
order, on any number of workers, with identical results.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .core import LabelData, MclloParams, validate_and_floor
from .inference import lrt
from .mcllo import OptimizerOptions, fit_mle, mcllo_map
from .metrics import ece, sqrt_bins

logger = logging.getLogger(__name__)

POWER_NS = (400, 450, 500, 600, 1000, 5000)
POWER_DELTAS = (1.0, 1.1, 1.2, 1.3, 1.4)
_SIM_FIT = OptimizerOptions(compute_se=False)


@dataclass(frozen=True)
class SimConfig:
    n: int
    c: int = 10
    delta_1: float = 1.0
    reps: int = 1000
    alpha: float = 0.05
    dirichlet_alpha: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.c < 2 or self.reps < 1:
            raise ValueError("n, reps must be positive and c >= 2")
        if not (self.delta_1 > 0 and self.dirichlet_alpha > 0 and 0 < self.alpha < 1):
            raise ValueError("delta_1 and dirichlet_alpha must be positive, alpha in (0, 1)")

    def true_params(self):
        delta = np.ones(self.c - 1)
        delta[0] = self.delta_1
        return MclloParams(delta, np.ones(self.c - 1))


@dataclass
class SimResult:
    config: SimConfig
    records: list = field(default_factory=list)

    @property
    def rejection_rate(self):
        p = np.array([r["p_value"] for r in self.records])
        return float(np.mean(p < self.config.alpha))

    @property
    def mean_ece_before(self):
        return float(np.mean([r["ece_x"] for r in self.records]))

    @property
    def mean_ece_after(self):
        return float(np.mean([r["ece_xstar"] for r in self.records]))


def rep_rng(seed, n, delta_1, rep):
    """Generator for one repetition, independent of every other one."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(n), int(round(float(delta_1) * 1_000_000)), int(rep)]
    return np.random.default_rng(np.random.SeedSequence(key))


def sample_dirichlet(rng, n, c, alpha):
    """Symmetric Dirichlet rows via normalized unit-scale gamma variates."""
    g = rng.standard_gamma(alpha, size=(n, c))
    return g / g.sum(axis=1, keepdims=True)


def sample_categorical(rng, probs):
    """One draw per row by inverting the row CDF."""
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def generate_dataset(config: SimConfig, rep=0, params: MclloParams | None = None):
    """Draw one simulated ``(X, Y)`` pair.

    Parameters
    ----------
    config : SimConfig
    rep : int
        Repetition index; selects the random stream.
    params : MclloParams, optional
        Truth to use instead of ``config.true_params()``.

    Returns
    -------
    X : ProbabilityMatrix
    Y : LabelData
    """
    rng = rep_rng(config.seed, config.n, config.delta_1, rep)
    x = validate_and_floor(sample_dirichlet(rng, config.n, config.c, config.dirichlet_alpha))
    truth = params if params is not None else config.true_params()
    g = mcllo_map(x, truth)
    y = sample_categorical(rng, g)
    return x, LabelData(y, config.c)


def run_rep(config: SimConfig, rep, with_ece=False, params=None):
    """Generate, fit and test one repetition; return a flat record."""
    x, y = generate_dataset(config, rep, params)
    fit = fit_mle(x, y, -1, _SIM_FIT)
    test = lrt(x, y, fit)
    rec = {
        "n": config.n,
        "delta_1": config.delta_1,
        "rep": rep,
        "statistic": test.statistic,
        "p_value": test.p_value,
        "reject": int(test.p_value < config.alpha),
        "converged": int(fit.converged),
    }
    if with_ece:
        bins = sqrt_bins(config.n)
        rec["ece_x"] = ece(x, y, bins)
        rec["ece_xstar"] = ece(mcllo_map(x, fit.params), y, bins)
    for j, v in enumerate(fit.params.delta):
        rec[f"delta_hat_{j + 1}"] = float(v)
    for j, v in enumerate(fit.params.gamma):
        rec[f"gamma_hat_{j + 1}"] = float(v)
    return rec


def _run_many(jobs, n_jobs):
    if n_jobs == 1:
        return [run_rep(*job) for job in jobs]
    return Parallel(n_jobs=n_jobs)(delayed(run_rep)(*job) for job in jobs)


def simulate(config: SimConfig, with_ece=False, n_jobs=1):
    """All repetitions of one cell."""
    jobs = [(config, r, with_ece) for r in range(config.reps)]
    return SimResult(config, _run_many(jobs, n_jobs))


def _grid_results(ns, deltas, reps, seed, with_ece, n_jobs, **kw):
    cells = [SimConfig(n=n, delta_1=d, reps=reps, seed=seed, **kw) for n in ns for d in deltas]
    jobs = [(cfg, r, with_ece) for cfg in cells for r in range(reps)]
    records = _run_many(jobs, n_jobs)
    out = []
    for i, cfg in enumerate(cells):
        out.append(SimResult(cfg, records[i * reps:(i + 1) * reps]))
    return out


def power_study(ns=POWER_NS, deltas=POWER_DELTAS, reps=1000, alpha=0.05, seed=0, n_jobs=1, **kw):
    """Rejection rate of the calibration test over an ``(n, delta_1)`` grid.

    Extra keyword arguments (``c``, ``dirichlet_alpha``) go to
    :class:`SimConfig`.

    Returns
    -------
    records : list of dict
        One per repetition, sorted by ``(n, delta_1, rep)``.
    summary : list of dict
        One per cell with ``rejection_rate`` and the non-converged count.
    """
    if not ns or not deltas:
        raise ValueError("empty grid")
    results = _grid_results(ns, deltas, reps, seed, False, n_jobs, alpha=alpha, **kw)
    records, summary = [], []
    for res in results:
        records.extend(res.records)
        summary.append({
            "n": res.config.n,
            "delta_1": res.config.delta_1,
            "reps": res.config.reps,
            "alpha": alpha,
            "rejection_rate": res.rejection_rate,
            "mean_statistic": float(np.mean([r["statistic"] for r in res.records])),
            "not_converged": int(sum(1 - r["converged"] for r in res.records)),
        })
    return records, summary


def ece_study(ns=(5000,), deltas=POWER_DELTAS, reps=1000, seed=0, n_jobs=1, **kw):
    """ECE of simulated predictions before and after in-sample recalibration.

    Returns per-repetition records and a per-cell summary with means and
    quartiles of both ECEs and the mean difference ``ECE(X) - ECE(X*)``.
    """
    if not ns or not deltas:
        raise ValueError("empty grid")
    results = _grid_results(ns, deltas, reps, seed, True, n_jobs, **kw)
    records, summary = [], []
    for res in results:
        records.extend(res.records)
        ex = np.array([r["ece_x"] for r in res.records])
        es = np.array([r["ece_xstar"] for r in res.records])
        q = lambda a, p: float(np.quantile(a, p))  # noqa: E731
        summary.append({
            "n": res.config.n,
            "delta_1": res.config.delta_1,
            "reps": res.config.reps,
            "mean_ece_x": float(ex.mean()),
            "mean_ece_xstar": float(es.mean()),
            "mean_diff": float((ex - es).mean()),
            "ece_x_q25": q(ex, 0.25), "ece_x_q75": q(ex, 0.75),
            "ece_xstar_q25": q(es, 0.25), "ece_xstar_q75": q(es, 0.75),
        })
    return records, summary


def _consistency_rep(cfg, rep, truth):
    x, y = generate_dataset(cfg, rep, truth)
    fit = fit_mle(x, y, -1, _SIM_FIT)
    err = float(np.linalg.norm(fit.params.as_delta_gamma() - truth.as_delta_gamma()))
    return {"n": cfg.n, "rep": rep, "error": err, "converged": int(fit.converged)}


def consistency_study(ns=(500, 2000, 8000), params: MclloParams | None = None, reps=100, seed=0,
                      c=4, dirichlet_alpha=1.0, n_jobs=1):
    """Estimation error of the MLE as the sample size grows.

    Returns
    -------
    records : list of dict
        ``(n, rep, error, converged)`` per repetition.
    summary : list of dict
        Per ``n``: median error and ``sqrt(n)`` times the median error.
    """
    truth = params if params is not None else MclloParams.identity(c)
    c = truth.n_classes
    cfgs = [SimConfig(n=n, c=c, reps=reps, seed=seed, dirichlet_alpha=dirichlet_alpha) for n in ns]
    jobs = [(cfg, r, truth) for cfg in cfgs for r in range(reps)]
    if n_jobs == 1:
        records = [_consistency_rep(*j) for j in jobs]
    else:
        records = Parallel(n_jobs=n_jobs)(delayed(_consistency_rep)(*j) for j in jobs)
    summary = []
    for cfg in cfgs:
        errs = np.array([r["error"] for r in records if r["n"] == cfg.n])
        med = float(np.median(errs))
        summary.append({"n": cfg.n, "reps": reps, "median_error": med,
                        "scaled_error": med * float(np.sqrt(cfg.n))})
    return records, summary


def config_dict(config: SimConfig):
    return asdict(config)
