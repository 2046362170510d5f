"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure
(non-convergence under ``--strict``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .comparators import HistogramBinning, TemperatureScaling, VectorScaling
from .core import DEFAULT_EPSILON, CalibrationDataError
from .inference import calibration_test
from .io import (
    load_model,
    model_to_dict,
    read_predictions,
    save_model,
    write_predictions,
    write_reliability,
    write_table,
)
from .mcllo import ConvergenceWarning, MCLLOCalibrator, OptimizerOptions
from .report import calibration_report, report_row

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "CALIKIT_SEED"

log = logging.getLogger("calikit")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bins(value):
    if value == "sqrt":
        return value
    try:
        b = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("bins must be 'sqrt' or a positive integer") from None
    if b < 1:
        raise argparse.ArgumentTypeError("bins must be positive")
    return b


def _add_input_opts(p):
    p.add_argument("--max-iter", type=int, default=500, help="optimizer iteration budget")
    p.add_argument("--label-column", default="label")
    p.add_argument("--prob-prefix", default="p_")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)


def _read(path, args, logits=None):
    return read_predictions(path, prob_prefix=args.prob_prefix, label_column=args.label_column,
                            logits_path=logits, epsilon=args.epsilon)


def _need_labels(data, path):
    if data.labels is None:
        raise CalibrationDataError(f"{path}: no label column")
    return data.labels


def _resolve_baseline(choice, names):
    if choice in (None, "last"):
        return len(names) - 1
    if choice in names:
        return names.index(choice)
    try:
        b = int(choice)
    except ValueError:
        raise CalibrationDataError(f"unknown baseline category {choice!r}") from None
    if not -len(names) <= b < len(names):
        raise CalibrationDataError(f"baseline index {b} out of range")
    return b % len(names)


def _check_converged(fit, strict):
    if not fit.converged:
        msg = f"optimizer did not converge: {fit.message}"
        if strict:
            raise NumericalFailure(msg)
        print(f"warning: {msg}", file=sys.stderr)


def _print_param_table(est, names, out=None):
    out = out or sys.stdout
    p, se = est.params_, est.std_errors_
    k = p.delta.size
    others = [names[j] for j in range(len(names)) if j != p.baseline]
    width = max(8, max(len(s) for s in others))
    print(f"baseline category: {names[p.baseline]}", file=out)
    print(f"{'category':<{width}}  {'delta (se)':>20}  {'gamma (se)':>20}", file=out)
    for j, name in enumerate(others):
        d = f"{p.delta[j]:.3f} ({se[j]:.3f})"
        g = f"{p.gamma[j]:.3f} ({se[k + j]:.3f})"
        print(f"{name:<{width}}  {d:>20}  {g:>20}", file=out)


def _print_test(test, out=None):
    out = out or sys.stdout
    print(f"lambda_LR = {test.statistic:.4f}  df = {test.df}  p = {test.p_value:.4g}", file=out)
    for a, r in sorted(test.reject_at.items()):
        print(f"  alpha={a:g}: {'reject' if r else 'do not reject'} calibration", file=out)
    if test.note:
        print(f"  note: {test.note}", file=out)


def cmd_fit(args):
    data = _read(args.input, args, args.logits)
    labels = _need_labels(data, args.input)
    names = list(data.category_names)
    if args.method == "mcllo":
        est = MCLLOCalibrator(baseline=_resolve_baseline(args.baseline, names), epsilon=args.epsilon,
                              max_iter=args.max_iter)
        est.fit(data.probs, labels)
        _check_converged(est.fit_result_, args.strict)
        _print_param_table(est, names)
        _print_test(est.test_result_)
    elif args.method in ("temperature", "vector"):
        if data.logits is None:
            raise UsageError(f"--method {args.method} needs --logits")
        est = TemperatureScaling() if args.method == "temperature" else VectorScaling()
        est.fit(data.logits, labels)
        if args.method == "temperature":
            print(f"temperature = {est.temperature_:.6g}")
        else:
            if not est.converged_ and args.strict:
                raise NumericalFailure("vector scaling did not converge")
            print("w = " + " ".join(f"{v:.4g}" for v in est.w_))
            print("b = " + " ".join(f"{v:.4g}" for v in est.b_))
    else:
        est = HistogramBinning(bins=args.bins, epsilon=args.epsilon).fit(data.probs, labels)
        print(f"histogram binning with {est.model_.n_bins} bins per class")
    save_model(args.out, model_to_dict(est, names, n=data.probs.n))
    return EXIT_OK


def _apply(est, doc, data):
    if doc["method"] in ("temperature", "vector"):
        if data.logits is None:
            raise UsageError(f"{doc['method']} model needs --logits")
        return est.predict_proba(data.logits)
    return est.predict_proba(data.probs)


def _check_model_classes(doc, data):
    if len(doc["category_names"]) != data.probs.c:
        raise CalibrationDataError(
            f"model has {len(doc['category_names'])} categories, data has {data.probs.c}"
        )


def cmd_test(args):
    data = _read(args.input, args, args.logits)
    labels = _need_labels(data, args.input)
    x = data.probs.values
    if args.model:
        est, doc = load_model(args.model)
        _check_model_classes(doc, data)
        x = _apply(est, doc, data)
        print(f"testing predictions recalibrated by {doc['method']} model {args.model}")
    baseline = _resolve_baseline(args.baseline, list(data.category_names))
    test, fit = calibration_test(x, labels, baseline, OptimizerOptions(max_iter=args.max_iter, compute_se=False))
    _check_converged(fit, args.strict)
    _print_test(test)
    return EXIT_OK


def cmd_apply(args):
    data = _read(args.input, args, args.logits)
    est, doc = load_model(args.model)
    _check_model_classes(doc, data)
    g = _apply(est, doc, data)
    names = list(data.category_names)
    label_names = names if data.labels is not None else None
    write_predictions(args.out, g, names, None if data.labels is None else data.labels.labels,
                      label_names, args.precision)
    return EXIT_OK


def _table(rows, out=None):
    out = out or sys.stdout
    cols = ["set", "n", "p_value", "ece", "mce", "accuracy", "label_change"]
    print("  ".join(f"{c:>12}" for c in cols), file=out)
    for r in rows:
        cells = []
        for c in cols:
            v = r.get(c, "")
            if isinstance(v, float):
                v = f"{v:.4g}" if c != "p_value" or v >= 1e-3 else "<0.001"
            cells.append(f"{v!s:>12}")
        print("  ".join(cells), file=out)


def cmd_metrics(args):
    data = _read(args.input, args)
    labels = _need_labels(data, args.input)
    before = None
    if args.before:
        before = _read(args.before, args).probs
        if before.values.shape != data.probs.values.shape:
            raise CalibrationDataError("--before file shape differs from --in")
    baseline = _resolve_baseline(args.baseline, list(data.category_names))
    rep = calibration_report(data.probs, labels, before, args.bins, args.diagram_bins, baseline,
                             OptimizerOptions(max_iter=args.max_iter, compute_se=False), name=args.input)
    row = report_row(rep)
    _table([row])
    if args.reliability_out:
        from .metrics import reliability
        write_reliability(args.reliability_out, reliability(data.probs, labels, args.diagram_bins), args.precision)
    if args.out:
        write_table(args.out, [row], args.precision)
    return EXIT_OK


def _load_sim_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise CalibrationDataError(f"{path}: invalid JSON: {exc}") from None


def _summary_path(out):
    root, ext = os.path.splitext(out)
    return f"{root}_summary{ext or '.csv'}"


def cmd_simulate(args):
    from . import simulation as sim

    cfg = _load_sim_config(args.config)
    seed = int(os.environ.get(SEED_ENV, cfg.get("seed", 0)))
    reps = int(cfg.get("reps", 1000 if args.study != "consistency" else 100))
    jobs = args.jobs if args.jobs is not None else int(cfg.get("jobs", 1))
    common = {k: cfg[k] for k in ("c", "dirichlet_alpha") if k in cfg}
    if args.study == "power":
        records, summary = sim.power_study(cfg.get("ns", sim.POWER_NS), cfg.get("deltas", sim.POWER_DELTAS),
                                           reps, float(cfg.get("alpha", 0.05)), seed, jobs, **common)
    elif args.study == "ece":
        records, summary = sim.ece_study(cfg.get("ns", (5000,)), cfg.get("deltas", sim.POWER_DELTAS),
                                         reps, seed, jobs, **common)
    else:
        from .core import MclloParams
        c = int(cfg.get("c", 4))
        params = None
        if "delta" in cfg or "gamma" in cfg:
            params = MclloParams(np.asarray(cfg.get("delta", [1.0] * (c - 1)), dtype=float),
                                 np.asarray(cfg.get("gamma", [1.0] * (c - 1)), dtype=float))
        records, summary = sim.consistency_study(cfg.get("ns", (500, 2000, 8000)), params, reps, seed, c,
                                                 float(cfg.get("dirichlet_alpha", 1.0)), jobs)
    write_table(args.out, records)
    write_table(_summary_path(args.out), summary)
    _table_generic(summary)
    return EXIT_OK


def _table_generic(rows, out=None):
    out = out or sys.stdout
    if not rows:
        return
    cols = list(rows[0])
    print("  ".join(f"{c:>14}" for c in cols), file=out)
    for r in rows:
        print("  ".join(f"{(f'{v:.4g}' if isinstance(v, float) else v)!s:>14}" for v in r.values()), file=out)


def cmd_compare(args):
    train = _read(args.train, args, args.logits_train)
    hold = _read(args.holdout, args, args.logits_holdout)
    yt, yh = _need_labels(train, args.train), _need_labels(hold, args.holdout)
    if train.category_names != hold.category_names:
        raise CalibrationDataError("train and holdout category columns differ")
    names = list(train.category_names)
    baseline = _resolve_baseline(args.baseline, names)
    xh = hold.probs.values

    def row(x, set_name, method, before=None):
        rep = calibration_report(x, yh if set_name != "train" else yt, before, args.bins, baseline=baseline,
                                 options=OptimizerOptions(max_iter=args.max_iter, compute_se=False), name=set_name)
        return report_row(rep, method)

    rows = [row(train.probs.values, "train", "none"), row(xh, "holdout", "none")]
    recal = [("mcllo", MCLLOCalibrator(baseline=baseline, epsilon=args.epsilon, max_iter=args.max_iter), False),
             ("binning", HistogramBinning(bins=args.binning_bins, epsilon=args.epsilon), False)]
    if train.logits is not None and hold.logits is not None:
        recal += [("temperature", TemperatureScaling(), True), ("vector", VectorScaling(), True)]
    else:
        print("notice: logits not supplied; temperature and vector scaling do not apply and were skipped",
              file=sys.stderr)
    for method, est, on_logits in recal:
        if on_logits:
            est.fit(train.logits, yt)
            g = est.predict_proba(hold.logits)
        else:
            est.fit(train.probs, yt)
            g = est.predict_proba(hold.probs)
            if method == "mcllo":
                _check_converged(est.fit_result_, args.strict)
        rows.append(row(g, f"holdout_{method}", method, before=xh))
    _table(rows)
    if args.out:
        write_table(args.out, rows, args.precision)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="calikit", description="Multiclass calibration testing and recalibration.")
    p.add_argument("--version", action="version", version=f"calikit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    f = sub.add_parser("fit", help="fit a recalibration model")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--method", choices=["mcllo", "temperature", "vector", "binning"], default="mcllo")
    f.add_argument("--baseline", default="last", help="category name, index, or 'last'")
    f.add_argument("--logits")
    f.add_argument("--bins", type=_bins, default="sqrt", help="histogram bins for --method binning")
    f.add_argument("--strict", action="store_true")
    _add_input_opts(f)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("test", help="likelihood ratio test of calibration")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--model", help="recalibrate with this model before testing")
    t.add_argument("--logits")
    t.add_argument("--baseline", default="last")
    t.add_argument("--strict", action="store_true")
    _add_input_opts(t)
    t.set_defaults(func=cmd_test)

    a = sub.add_parser("apply", help="apply a fitted model")
    a.add_argument("--in", dest="input", required=True)
    a.add_argument("--model", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--logits")
    a.add_argument("--precision", default="6", help="significant digits, or 'full'")
    _add_input_opts(a)
    a.set_defaults(func=cmd_apply)

    m = sub.add_parser("metrics", help="ECE, MCE, accuracy, label change and test p-value")
    m.add_argument("--in", dest="input", required=True)
    m.add_argument("--before")
    m.add_argument("--bins", type=_bins, default="sqrt")
    m.add_argument("--diagram-bins", type=int, default=10)
    m.add_argument("--baseline", default="last")
    m.add_argument("--reliability-out")
    m.add_argument("--out")
    m.add_argument("--precision", default="full")
    _add_input_opts(m)
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("simulate", help="Monte Carlo studies")
    s.add_argument("study", choices=["power", "ece", "consistency"])
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="fit on train, evaluate every method on holdout")
    c.add_argument("--train", required=True)
    c.add_argument("--holdout", required=True)
    c.add_argument("--logits-train")
    c.add_argument("--logits-holdout")
    c.add_argument("--baseline", default="last")
    c.add_argument("--bins", type=_bins, default="sqrt")
    c.add_argument("--binning-bins", type=_bins, default="sqrt")
    c.add_argument("--out")
    c.add_argument("--precision", default="full")
    c.add_argument("--strict", action="store_true")
    _add_input_opts(c)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            return args.func(args)
    except UsageError as exc:
        print(f"calikit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"calikit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CalibrationDataError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"calikit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
