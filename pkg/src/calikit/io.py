"""Prediction files, model files and result tables.

Prediction CSVs carry a header.  Probability columns are picked by name
prefix (``p_`` by default) or an explicit list, and category names are the
column names with the prefix removed.  The label column is optional.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    DEFAULT_EPSILON,
    CalibrationDataError,
    LabelData,
    LogitMatrix,
    ProbabilityMatrix,
    ROW_SUM_SLACK,
    encode_labels,
    validate_and_floor,
)

MODEL_METHODS = ("mcllo", "temperature", "vector", "binning")


@dataclass(frozen=True)
class PredictionData:
    probs: ProbabilityMatrix
    labels: Optional[LabelData] = None
    logits: Optional[LogitMatrix] = None

    @property
    def category_names(self):
        return self.probs.category_names


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CalibrationDataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    return header, body


def _parse_matrix(path, header, body, columns):
    idx = [header.index(c) for c in columns]
    out = np.empty((len(body), len(idx)))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise CalibrationDataError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        for k, j in enumerate(idx):
            try:
                out[i, k] = float(row[j])
            except ValueError:
                raise CalibrationDataError(f"{path}: line {line}: malformed number {row[j]!r}") from None
    return out


def _check_rows(path, x):
    for i, row in enumerate(x):
        s = row.sum()
        if not np.all(np.isfinite(row)):
            raise CalibrationDataError(f"{path}: line {i + 2}: non-finite probability")
        if np.any(row < -ROW_SUM_SLACK) or np.any(row > 1 + ROW_SUM_SLACK):
            raise CalibrationDataError(f"{path}: line {i + 2}: probability outside [0, 1]")
        if abs(s - 1.0) > ROW_SUM_SLACK:
            raise CalibrationDataError(f"{path}: line {i + 2}: probabilities sum to {s:.6g}, not 1")


def _pick_columns(header, columns, prefix, exclude):
    if columns:
        missing = [c for c in columns if c not in header]
        if missing:
            raise CalibrationDataError(f"columns not found: {missing}")
        return list(columns)
    picked = [h for h in header if h.startswith(prefix) and h not in exclude]
    if not picked:
        picked = [h for h in header if h not in exclude]
    return picked


def _labels_from(raw, names, fixed_names):
    stripped = [str(v).strip() for v in raw]
    if fixed_names or set(stripped) <= set(names):
        return encode_labels(stripped, names)[0]
    labels, _ = encode_labels(stripped, n_classes=len(names))
    return labels


def read_logits(path, n_expected=None, columns=None, prefix="z_", label_column="label"):
    """Read a logit CSV; columns default to those prefixed ``z_``, else all but the label."""
    header, body = _read_csv(path)
    cols = _pick_columns(header, columns, prefix, {label_column})
    z = _parse_matrix(path, header, body, cols)
    if n_expected is not None and z.shape[0] != n_expected:
        raise CalibrationDataError(f"{path}: {z.shape[0]} logit rows but {n_expected} prediction rows")
    try:
        return LogitMatrix(z)
    except CalibrationDataError as exc:
        raise CalibrationDataError(f"{path}: {exc}") from None


def read_predictions(path, fmt=None, prob_columns=None, prob_prefix="p_", label_column="label",
                     category_names=None, logits_path=None, epsilon=DEFAULT_EPSILON):
    """Read probability predictions, optional labels and optional logits.

    Parameters
    ----------
    path : str or Path
    fmt : {"csv", "json"}, optional
        Inferred from the extension when omitted.
    prob_columns : list of str, optional
        Explicit probability columns; otherwise every column starting with
        ``prob_prefix`` (or every non-label column if none does).
    label_column : str
        Name of the label column; absent columns mean no labels.
    category_names : list of str, optional
        Fixes the category names; unknown label values are then an error.
    logits_path : str or Path, optional
        Companion logit CSV with the same rows and column order.
    epsilon : float
        Probability floor.

    Returns
    -------
    PredictionData
    """
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt == "json":
        data = _read_json_predictions(path, category_names, epsilon)
    elif fmt == "csv":
        header, body = _read_csv(path)
        cols = _pick_columns(header, prob_columns, prob_prefix, {label_column})
        x = _parse_matrix(path, header, body, cols)
        if x.shape[0] == 0:
            raise CalibrationDataError(f"{path}: no data rows")
        _check_rows(path, x)
        names = list(category_names) if category_names else [
            c[len(prob_prefix):] if c.startswith(prob_prefix) and len(c) > len(prob_prefix) else c for c in cols
        ]
        if len(names) != x.shape[1]:
            raise CalibrationDataError(f"{len(names)} category names for {x.shape[1]} probability columns")
        probs = validate_and_floor(x, epsilon, names)
        labels = None
        if label_column in header:
            j = header.index(label_column)
            raw = [row[j] for row in body]
            try:
                labels = _labels_from(raw, probs.category_names, category_names is not None)
            except CalibrationDataError as exc:
                raise CalibrationDataError(f"{path}: {exc}") from None
        data = PredictionData(probs, labels)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if logits_path is not None:
        data = PredictionData(data.probs, data.labels, read_logits(logits_path, data.probs.n))
    return data


def _read_json_predictions(path, category_names, epsilon):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    x = np.asarray(doc["probabilities"], dtype=float)
    if x.ndim != 2:
        raise CalibrationDataError(f"{path}: probabilities must be a list of rows")
    _check_rows(path, x)
    names = category_names or doc.get("category_names") or None
    probs = validate_and_floor(x, epsilon, names)
    labels = None
    if doc.get("labels") is not None:
        labels = _labels_from(doc["labels"], probs.category_names, category_names is not None)
    logits = LogitMatrix(np.asarray(doc["logits"], dtype=float)) if doc.get("logits") is not None else None
    if logits is not None and logits.n != probs.n:
        raise CalibrationDataError(f"{path}: {logits.n} logit rows but {probs.n} prediction rows")
    return PredictionData(probs, labels, logits)


def format_float(v, precision="6"):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if precision == "full":
        return repr(float(v))
    return f"{float(v):.{int(precision)}g}"


def _rounded_row(row, precision):
    """Format a probability row so the written values still sum to one.

    Rounding each entry to a few digits can push the row sum past the
    reader's slack, so the largest entry is written as the complement of the
    other, already rounded, entries.
    """
    out = [format_float(v, precision) for v in row]
    if precision == "full":
        return out
    top = int(np.argmax(row))
    rest = sum(float(s) for j, s in enumerate(out) if j != top)
    out[top] = f"{1.0 - rest:.12g}"
    return out


def write_predictions(path, probs, category_names, labels=None, label_names=None, precision="6"):
    """Write probabilities (and labels, as names) in the CSV layout read above."""
    probs = np.asarray(probs)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = [f"p_{c}" for c in category_names]
        if labels is not None:
            head.append("label")
        w.writerow(head)
        for i, row in enumerate(probs):
            out = _rounded_row(row, precision)
            if labels is not None:
                out.append(label_names[labels[i]] if label_names else str(labels[i]))
            w.writerow(out)


def write_table(path, rows, precision="full"):
    """Write a list of flat dicts as CSV, columns in first-seen order."""
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(k, ""), precision) for k in cols])


def _cell(v, precision):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v, precision)
    return "" if v is None else str(v)


def read_table(path):
    """Read a CSV written by :func:`write_table` back into dicts of floats/strings."""
    header, body = _read_csv(path)
    out = []
    for row in body:
        rec = {}
        for k, v in zip(header, row):
            try:
                rec[k] = float(v)
            except ValueError:
                rec[k] = v
        out.append(rec)
    return out


def write_reliability(path, bins, precision="full"):
    rows = [
        {"bin_lo": lo, "bin_hi": hi, "count": cnt, "mean_conf": mc, "accuracy": acc}
        for lo, hi, cnt, mc, acc in bins.rows()
    ]
    write_table(path, rows, precision)


# -- model files -------------------------------------------------------------

def _num(v):
    v = float(v)
    return None if math.isnan(v) else v


def _nums(a):
    return [_num(v) for v in np.asarray(a, dtype=float).ravel()]


def _arr(values):
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def model_to_dict(estimator, category_names, method=None, n=None):
    """Serializable description of a fitted recalibrator."""
    from . import __version__
    from .comparators import HistogramBinning, TemperatureScaling, VectorScaling
    from .mcllo import MCLLOCalibrator

    names = [str(c) for c in category_names]
    doc = {"category_names": names, "toolkit_version": __version__}
    if isinstance(estimator, MCLLOCalibrator):
        p = estimator.params_
        k = p.delta.size
        doc.update(method="mcllo", baseline=int(p.baseline), baseline_name=names[p.baseline])
        doc["parameters"] = {"delta": _nums(p.delta), "gamma": _nums(p.gamma)}
        doc["std_errors"] = {"delta": _nums(estimator.std_errors_[:k]), "gamma": _nums(estimator.std_errors_[k:])}
        fr = getattr(estimator, "fit_result_", None)
        if fr is not None:
            doc["fit"] = {"n": int(fr.n), "loglik_mle": _num(fr.loglik_mle), "loglik_null": _num(fr.loglik_null),
                          "converged": bool(fr.converged), "iterations": int(fr.iterations)}
        elif getattr(estimator, "fit_meta_", None):
            doc["fit"] = dict(estimator.fit_meta_)
    elif isinstance(estimator, TemperatureScaling):
        doc.update(method="temperature", parameters={"temperature": float(estimator.temperature_)})
    elif isinstance(estimator, VectorScaling):
        doc.update(method="vector", parameters={"w": _nums(estimator.w_), "b": _nums(estimator.b_)},
                   fit={"converged": bool(estimator.converged_)})
    elif isinstance(estimator, HistogramBinning):
        m = estimator.model_
        doc.update(method="binning", parameters={
            "edges": _nums(m.edges), "values": [_nums(r) for r in m.values],
            "counts": np.asarray(m.counts).astype(int).tolist(), "epsilon": float(m.epsilon)})
    else:
        raise TypeError(f"cannot serialize {type(estimator).__name__}")
    if n is not None:
        doc.setdefault("fit", {})["n"] = int(n)
    return doc


def model_from_dict(doc):
    """Rebuild a fitted estimator from :func:`model_to_dict` output."""
    from .comparators import BinningModel, HistogramBinning, TemperatureScaling, VectorScaling
    from .core import MclloParams
    from .mcllo import MCLLOCalibrator

    method = doc.get("method")
    p = doc.get("parameters", {})
    if method == "mcllo":
        est = MCLLOCalibrator(baseline=int(doc["baseline"]))
        est.params_ = MclloParams(_arr(p["delta"]), _arr(p["gamma"]), int(doc["baseline"]))
        est.delta_, est.gamma_ = np.array(est.params_.delta), np.array(est.params_.gamma)
        se = doc.get("std_errors") or {}
        k = est.delta_.size
        est.std_errors_ = np.concatenate([_arr(se.get("delta", [None] * k)), _arr(se.get("gamma", [None] * k))])
        est.n_classes_ = k + 1
        est.fit_meta_ = dict(doc.get("fit") or {})
    elif method == "temperature":
        est = TemperatureScaling()
        est.temperature_ = float(p["temperature"])
        est.n_classes_ = len(doc["category_names"])
    elif method == "vector":
        est = VectorScaling()
        est.w_, est.b_ = _arr(p["w"]), _arr(p["b"])
        est.converged_ = bool(doc.get("fit", {}).get("converged", True))
        est.n_classes_ = est.w_.size
    elif method == "binning":
        est = HistogramBinning(bins=len(p["edges"]) - 1, epsilon=float(p["epsilon"]))
        est.model_ = BinningModel(edges=_arr(p["edges"]), values=np.array([_arr(r) for r in p["values"]]),
                                  counts=np.array(p["counts"], dtype=np.int64), epsilon=float(p["epsilon"]))
        est.n_classes_ = est.model_.values.shape[0]
    else:
        raise CalibrationDataError(f"unknown model method {method!r}; expected one of {MODEL_METHODS}")
    return est


def dumps_model(doc):
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def save_model(path, doc):
    Path(path).write_text(dumps_model(doc), encoding="utf-8")


def load_model(path):
    """Return ``(estimator, doc)`` from a model JSON file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CalibrationDataError(f"{path}: invalid model file: {exc}") from None
    return model_from_dict(doc), doc
