"""Drift-aware incremental ensemble learning on chunked data streams."""

from .drift import AucWindow, DetectorConfig, DriftVerdict, commit, cut_points, epsilon_cut, epsilon_partition, evaluate
from .ensemble import (
    Ensemble,
    StepTrace,
    aggregate_infer,
    compute_weights,
    normalize_masked_weights,
    resolve_indicators,
)
from .harness import ExperimentConfig, RunReport, compare_runs, load_report, run_experiment
from .metrics import MetricSeries, auc, check_estimation_error_bound, logloss, windowed_metric
from .model import AdamState, ModelConfig, Strategy, adam_step, backward, forward, init_params
from .streams import Chunk, ConceptSpec, CsvSchema, StreamSpec, generate_synthetic, ingest_csv, split_chunk

__version__ = "0.1.0"
