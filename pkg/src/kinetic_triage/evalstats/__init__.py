"""Prediction, confusion-matrix metrics, Welch t-tests, and report emission."""

from kinetic_triage.evalstats.metrics import (
    ConfusionMatrix,
    MetricsReport,
    PredictionResult,
    predict,
    score,
)
from kinetic_triage.evalstats.ttest import (
    TTestResult,
    student_t_two_tailed_p,
    welch_from_summary,
    welch_ttest,
)
from kinetic_triage.evalstats.report import (
    aggregate,
    emit_plot_data,
    emit_plot_svg,
    emit_report,
    render_table,
)

__all__ = [
    "ConfusionMatrix", "MetricsReport", "PredictionResult", "predict", "score",
    "TTestResult", "student_t_two_tailed_p", "welch_from_summary", "welch_ttest",
    "aggregate", "emit_plot_data", "emit_plot_svg", "emit_report", "render_table",
]
