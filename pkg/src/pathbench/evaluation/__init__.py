from .metrics import accuracy, auc_binary, auc_macro_ovr, selection_auc
from .mil import MILConfig, predict_proba, train_mil
from .probe import ProbeConfig, predict, train_linear_probe
from .report import EvalReport, ReportError, emit_report, load_report, render_report
from .splits import SLIDE_RATIOS, Split, holdout_val, split_dataset, split_sizes

__all__ = [
    "EvalReport", "MILConfig", "ProbeConfig", "ReportError", "SLIDE_RATIOS", "Split",
    "accuracy", "auc_binary", "auc_macro_ovr", "emit_report", "holdout_val", "load_report",
    "predict", "predict_proba", "render_report", "selection_auc", "split_dataset",
    "split_sizes", "train_linear_probe", "train_mil",
]
