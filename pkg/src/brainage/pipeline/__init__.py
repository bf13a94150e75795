"""Cohorts, training and evaluation built on the lower-level modules."""

from .cohort import generate_synthetic_cohort, preprocess_cohort, reference_from_manifest
from .evaluation import EvalReport, age_histogram, evaluate_mae, export_report, report_from_predictions
from .manifest import SubjectRecord, read_manifest, select, split_manifest, write_manifest
from .training import Checkpoint, TrainConfig, make_checkpoint, predict_records, train_model, write_log_csv

__all__ = [
    "Checkpoint",
    "EvalReport",
    "SubjectRecord",
    "TrainConfig",
    "age_histogram",
    "evaluate_mae",
    "export_report",
    "generate_synthetic_cohort",
    "make_checkpoint",
    "predict_records",
    "preprocess_cohort",
    "read_manifest",
    "reference_from_manifest",
    "report_from_predictions",
    "select",
    "split_manifest",
    "train_model",
    "write_log_csv",
    "write_manifest",
]
