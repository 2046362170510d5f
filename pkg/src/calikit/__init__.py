"""Calibration testing and linear log odds recalibration for multiclass predictions."""
from .comparators import (
    HistogramBinning,
    TemperatureScaling,
    VectorScaling,
    apply_histogram_binning,
    apply_temperature,
    apply_vector_scaling,
    fit_histogram_binning,
    fit_temperature,
    fit_vector_scaling,
)
from .core import (
    CalibrationDataError,
    CalibrationReport,
    FitResult,
    LabelData,
    LogitMatrix,
    MclloParams,
    ProbabilityMatrix,
    ReliabilityBins,
    encode_labels,
    validate_and_floor,
)
from .inference import TestResult, calibration_test, chi_sq_sf, lrt
from .mcllo import (
    MCLLOCalibrator,
    OptimizerOptions,
    fit_mle,
    grad_log_likelihood,
    log_likelihood,
    mcllo_map,
)
from .metrics import accuracy, ece, label_change_rate, mce, reliability

__version__ = "0.1.0"
