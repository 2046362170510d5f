"""Table rows combining the calibration test with binned metrics."""
from __future__ import annotations

from .core import CalibrationReport, as_labels, as_probabilities
from .inference import calibration_test
from .mcllo import OptimizerOptions
from .metrics import DIAGRAM_BINS, accuracy, ece, label_change_rate, mce, reliability, sqrt_bins


def calibration_report(x, y, before=None, bins="sqrt", diagram_bins=DIAGRAM_BINS, baseline=-1,
                       options=None, name=""):
    """Test, ECE/MCE, accuracy and (optionally) label change for one prediction set.

    ``bins`` drives ECE and MCE (square-root rule by default); the
    reliability rows use ``diagram_bins``.
    """
    x = as_probabilities(x)
    labels = as_labels(y, x.shape[1])
    test, _ = calibration_test(x, labels, baseline, options or OptimizerOptions(compute_se=False))
    b = sqrt_bins(x.shape[0]) if bins in (None, "sqrt") else int(bins)
    return CalibrationReport(
        lrt_stat=test.statistic,
        df=test.df,
        p_value=test.p_value,
        ece=ece(x, labels, b),
        mce=mce(x, labels, b),
        ece_bins=b,
        accuracy=accuracy(x, labels),
        n=x.shape[0],
        label_change_rate=None if before is None else label_change_rate(before, x),
        reliability=reliability(x, labels, diagram_bins).rows(),
        name=name,
    )


def report_row(rep: CalibrationReport, method=""):
    return {
        "set": rep.name,
        "method": method,
        "n": rep.n,
        "lrt_stat": rep.lrt_stat,
        "df": rep.df,
        "p_value": rep.p_value,
        "ece": rep.ece,
        "ece_bins": rep.ece_bins,
        "mce": rep.mce,
        "accuracy": rep.accuracy,
        "label_change": "" if rep.label_change_rate is None else rep.label_change_rate,
    }
