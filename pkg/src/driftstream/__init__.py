"""Streaming anomaly detection with multi-source sequence prediction and
concept-drift adaptation."""

from .config import DriftControlConfig, PipelineConfig, PredictorConfig
from .detector import (
    AnomalyVerdict,
    DetectorConfig,
    LogisticCalibration,
    StreamScorer,
    anomaly_probability,
    calibrate,
    record_distance,
    sequence_inconsistency,
    weighted_sequence_distance,
)
from .drift import Condition, DriftConfig, DriftMonitor, OawStateMachine, trigger
from .engine import DriftAdaptiveDetector, StreamResult, run_pipeline
from .errors import (
    ConfigError,
    DataError,
    DriftStreamError,
    NumericError,
    WindowTooShortError,
)
from .metrics import RunReport, compute_auc
from .predictor import LstmHyperparams, LstmModel, forward, init_model, retrain, train
from .preprocess import (
    PcaModel,
    SeasonalDecomposition,
    StandardizationStats,
    StreamPreprocessor,
    apply_pca,
    build_feature_vector,
    clean,
    fit_pca,
    fit_standardize,
    pearson_matrix,
    seasonal_decompose,
)
from .synth import AnomalyInjection, DriftInjection, FeatureSpec, StreamSpec, synth_stream
from .tuner import GaSettings, SearchSpace, ga_optimize

__version__ = "0.1.0"
