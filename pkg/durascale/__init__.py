"""
Intertrade-duration analysis: session-aware duration extraction, scaling
collapse of normalized durations, Weibull and q-exponential calibration,
Mittag-Leffler survival and conditional-duration profiles.
"""
__version__ = "0.1.0"

from durascale.densities import (
    collapse_report,
    estimate_ccdf,
    estimate_density,
    normalize,
    pool,
)
from durascale.errors import DataError, DurascaleError, FitError, UsageError
from durascale.fitters import (
    Estimator,
    FitResult,
    Model,
    compare_models,
    fit_nlse,
    fit_qexp_mle,
    fit_weibull_mle,
)
from durascale.models import (
    MittagLefflerParams,
    QExpParams,
    WeibullParams,
    mittag_leffler_survival,
    qexp_ccdf,
    qexp_pdf,
    tail_exponent,
    weibull_ccdf,
    weibull_pdf,
)
from durascale.tape import (
    ClassFilter,
    DurationSeries,
    SessionCalendar,
    extract_durations,
    parse_tape,
    summarize,
)

__all__ = [
    "ClassFilter",
    "DataError",
    "DurascaleError",
    "DurationSeries",
    "Estimator",
    "FitError",
    "FitResult",
    "MittagLefflerParams",
    "Model",
    "QExpParams",
    "SessionCalendar",
    "UsageError",
    "WeibullParams",
    "collapse_report",
    "compare_models",
    "estimate_ccdf",
    "estimate_density",
    "extract_durations",
    "fit_nlse",
    "fit_qexp_mle",
    "fit_weibull_mle",
    "mittag_leffler_survival",
    "normalize",
    "parse_tape",
    "pool",
    "qexp_ccdf",
    "qexp_pdf",
    "summarize",
    "tail_exponent",
    "weibull_ccdf",
    "weibull_pdf",
]
