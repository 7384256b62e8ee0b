"""Pipeline configuration: one versioned JSON document holds every tunable."""

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .validation import check_choice, check_in_range, check_positive_int

CONFIG_FORMAT = "driftstream-config/1"


@dataclass
class PredictorConfig:
    """Hyperparameters for the sequence predictor."""

    epochs: int = 60
    learning_rate: float = 0.001
    optimizer: str = "adam"
    activation: str = "relu"
    loss: str = "mse"
    batch_size: int = 32
    hidden_units: int = 32
    num_layers: int = 1
    weight_decay: float = 6e-6
    time_step: int | None = None  # defaults to the seasonal period

    def validate(self, strict_ranges=False):
        check_choice(self.optimizer, {"adam", "sgd"}, "optimizer")
        check_choice(self.activation, {"relu", "tanh"}, "activation")
        check_choice(self.loss, {"mse", "mae"}, "loss")
        check_positive_int(self.hidden_units, "hidden_units")
        check_positive_int(self.num_layers, "num_layers")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if strict_ranges:
            check_in_range(self.epochs, 20, 100, "epochs")
            check_in_range(self.learning_rate, 0.0001, 0.01, "learning_rate")
            check_in_range(self.batch_size, 10, 50, "batch_size")
        return self


@dataclass
class DriftControlConfig:
    """Window sizes and thresholds for the drift state machine."""

    a_th: float = 0.092
    d_th: float = 0.03
    sliding_window: int = 270
    adaptive_window_max: int = 2500
    semantics: str = "difference"
    adapt_union: bool = True  # retrain on adaptive window + sliding records
    retrain_mode: str = "warm"

    def validate(self, strict_ranges=False):
        if self.a_th <= 0 or self.d_th <= 0:
            raise ConfigError("a_th and d_th must be > 0")
        check_choice(self.semantics, {"difference", "ratio"}, "semantics")
        check_choice(self.retrain_mode, {"warm", "cold"}, "retrain_mode")
        check_positive_int(self.sliding_window, "sliding_window")
        check_positive_int(self.adaptive_window_max, "adaptive_window_max")
        if self.adaptive_window_max <= self.sliding_window:
            raise ConfigError("adaptive_window_max must exceed sliding_window")
        if strict_ranges:
            check_in_range(self.a_th, 0.0, 0.1, "a_th", open_lo=True, open_hi=True)
            check_in_range(self.d_th, 0.0, 0.08, "d_th", open_lo=True, open_hi=True)
            check_in_range(self.sliding_window, 100, 600, "sliding_window")
            check_in_range(self.adaptive_window_max, 400, 4000, "adaptive_window_max")
        return self


@dataclass
class PipelineConfig:
    """Every tunable of the detection pipeline, JSON round-trippable."""

    seed: int = 7
    threshold: float = 0.65
    horizon: int = 10
    reference_length: int = 200
    variance_target: float = 0.95
    seasonal_period: int = 24
    use_seasonal: bool = True
    use_pca: bool = True
    offline_fraction: float = 0.1
    calibration_tolerance: float = 1e-4
    calibration_max_iter: int = 100
    drift_adaptation: bool = True
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    drift: DriftControlConfig = field(default_factory=DriftControlConfig)

    @property
    def time_step(self):
        return self.predictor.time_step or self.seasonal_period

    def validate(self, strict_ranges=False):
        check_in_range(self.threshold, 0.0, 1.0, "threshold", open_lo=True, open_hi=True)
        check_positive_int(self.horizon, "horizon")
        check_positive_int(self.reference_length, "reference_length")
        if self.reference_length < self.horizon:
            raise ConfigError("reference_length must be >= horizon")
        check_in_range(self.variance_target, 0.0, 1.0, "variance_target", open_lo=True)
        check_positive_int(self.seasonal_period, "seasonal_period")
        check_in_range(self.offline_fraction, 0.0, 1.0, "offline_fraction",
                       open_lo=True, open_hi=True)
        if self.calibration_tolerance <= 0:
            raise ConfigError("calibration_tolerance must be > 0")
        check_positive_int(self.calibration_max_iter, "calibration_max_iter")
        self.predictor.validate(strict_ranges=strict_ranges)
        self.drift.validate(strict_ranges=strict_ranges)
        return self

    def to_dict(self):
        doc = dataclasses.asdict(self)
        doc["format"] = CONFIG_FORMAT
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        fmt = doc.pop("format", CONFIG_FORMAT)
        if fmt != CONFIG_FORMAT:
            raise ConfigError(f"unsupported config format {fmt!r}")
        try:
            predictor = PredictorConfig(**doc.pop("predictor", {}))
            drift = DriftControlConfig(**doc.pop("drift", {}))
            cfg = cls(predictor=predictor, drift=drift, **doc)
        except TypeError as exc:
            raise ConfigError(f"bad config document: {exc}") from exc
        return cfg.validate()

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def replace(self, **kwargs):
        """Copy with top-level, predictor or drift fields overridden."""
        pred_fields = {f.name for f in dataclasses.fields(PredictorConfig)}
        drift_fields = {f.name for f in dataclasses.fields(DriftControlConfig)}
        top = {}
        pred = {}
        drift = {}
        for key, value in kwargs.items():
            if key in {f.name for f in dataclasses.fields(PipelineConfig)}:
                top[key] = value
            elif key in pred_fields:
                pred[key] = value
            elif key in drift_fields:
                drift[key] = value
            else:
                raise ConfigError(f"unknown config field {key!r}")
        new = dataclasses.replace(self, **top)
        new.predictor = dataclasses.replace(new.predictor, **pred)
        new.drift = dataclasses.replace(new.drift, **drift)
        return new
