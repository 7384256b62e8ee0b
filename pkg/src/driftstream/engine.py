"""End-to-end detection engine.

fit() runs the offline phase on a historical batch: clean/standardize/PCA/
seasonal fitting, predictor training, and the logistic calibration over a
reference span at the end of the batch. run_stream() consumes records one
at a time: transform, score against buffered predictions, track the drift
state machine, retrain on the adaptive window when asked, and recalibrate
after every model swap. The engine retains only bounded state: the context
ring, the last sliding-window records, the prediction buffer and the
adaptive window.
"""

import copy
import time
from collections import deque
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import detector as det
from . import predictor as pred
from .config import PipelineConfig
from .drift import DriftConfig, DriftMonitor
from .errors import ConfigError, DataError, NumericError, WindowTooShortError
from .metrics import RunReport, compute_auc
from .preprocess import StreamPreprocessor
from .validation import check_matrix


class ModelSlot:
    """Holds the live model; retraining swaps a new snapshot in atomically."""

    def __init__(self, model):
        self._model = model

    @property
    def model(self):
        return self._model

    def snapshot(self):
        return self._model.copy()

    def swap(self, model):
        self._model = model


@dataclass
class StreamResult:
    verdicts: list
    events: list  # dicts ready for the drift event log
    retrain_indices: list
    retrain_ms_total: float
    timers_ns: dict
    elapsed_ns_total: int
    memory_high_water: int
    labels: np.ndarray | None = None
    final_model: object = None  # model in the slot when the stream ended

    def aps(self):
        return np.array([v.ap for v in self.verdicts])

    def flags(self):
        return np.array([v.is_anomalous for v in self.verdicts], dtype=bool)


class DriftAdaptiveDetector(BaseEstimator):
    """Streaming anomaly detector with drift adaptation, sklearn-style."""

    def __init__(self, threshold=0.65, horizon=10, reference_length=200,
                 time_step=None, variance_target=0.95, seasonal_period=24,
                 use_seasonal=True, use_pca=True, a_th=0.092, d_th=0.03,
                 sliding_window=270, adaptive_window_max=2500,
                 semantics="difference", adapt_union=True, retrain_mode="warm",
                 drift_adaptation=True, epochs=60, learning_rate=0.001,
                 optimizer="adam", activation="relu", loss="mse",
                 batch_size=32, hidden_units=32, num_layers=1,
                 weight_decay=6e-6, calibration_tolerance=1e-4,
                 calibration_max_iter=100, offline_fraction=0.1, seed=7):
        self.threshold = threshold
        self.horizon = horizon
        self.reference_length = reference_length
        self.time_step = time_step
        self.variance_target = variance_target
        self.seasonal_period = seasonal_period
        self.use_seasonal = use_seasonal
        self.use_pca = use_pca
        self.a_th = a_th
        self.d_th = d_th
        self.sliding_window = sliding_window
        self.adaptive_window_max = adaptive_window_max
        self.semantics = semantics
        self.adapt_union = adapt_union
        self.retrain_mode = retrain_mode
        self.drift_adaptation = drift_adaptation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.activation = activation
        self.loss = loss
        self.batch_size = batch_size
        self.hidden_units = hidden_units
        self.num_layers = num_layers
        self.weight_decay = weight_decay
        self.calibration_tolerance = calibration_tolerance
        self.calibration_max_iter = calibration_max_iter
        self.offline_fraction = offline_fraction
        self.seed = seed

    # -- config plumbing -----------------------------------------------------

    @classmethod
    def from_config(cls, cfg):
        p, d = cfg.predictor, cfg.drift
        return cls(
            threshold=cfg.threshold, horizon=cfg.horizon,
            reference_length=cfg.reference_length, time_step=p.time_step,
            variance_target=cfg.variance_target,
            seasonal_period=cfg.seasonal_period, use_seasonal=cfg.use_seasonal,
            use_pca=cfg.use_pca, a_th=d.a_th, d_th=d.d_th,
            sliding_window=d.sliding_window,
            adaptive_window_max=d.adaptive_window_max, semantics=d.semantics,
            adapt_union=d.adapt_union, retrain_mode=d.retrain_mode,
            drift_adaptation=cfg.drift_adaptation, epochs=p.epochs,
            learning_rate=p.learning_rate, optimizer=p.optimizer,
            activation=p.activation, loss=p.loss, batch_size=p.batch_size,
            hidden_units=p.hidden_units, num_layers=p.num_layers,
            weight_decay=p.weight_decay,
            calibration_tolerance=cfg.calibration_tolerance,
            calibration_max_iter=cfg.calibration_max_iter,
            offline_fraction=cfg.offline_fraction, seed=cfg.seed,
        )

    def _resolved_time_step(self):
        return self.time_step or self.seasonal_period

    def _hyperparams(self):
        return pred.LstmHyperparams(
            epochs=self.epochs, learning_rate=self.learning_rate,
            optimizer=self.optimizer, activation=self.activation,
            loss=self.loss, batch_size=self.batch_size,
            hidden_units=self.hidden_units, num_layers=self.num_layers,
            time_step=self._resolved_time_step(),
            weight_decay=self.weight_decay, seed=self.seed,
        )

    def _detector_config(self):
        return det.DetectorConfig(
            horizon=self.horizon, reference_length=self.reference_length,
            threshold=self.threshold,
            calibration_tolerance=self.calibration_tolerance,
            calibration_max_iter=self.calibration_max_iter,
        ).validate()

    def _drift_config(self):
        return DriftConfig(
            a_th=self.a_th, d_th=self.d_th,
            sliding_window=self.sliding_window,
            adaptive_window_max=self.adaptive_window_max,
            semantics=self.semantics,
        ).validate()

    # -- offline phase ---------------------------------------------------------

    def fit(self, X, y=None, start_index=0):
        """Offline phase: preprocessing, predictor training, calibration."""
        X = check_matrix(X, "X", min_rows=4)
        self._detector_config()
        self._drift_config()
        S = self._resolved_time_step()
        L = self.horizon
        S_ref = self.reference_length
        M = len(X)
        if M < S + L:
            raise DataError(
                f"offline split of {M} records too small: need at least "
                f"time_step+horizon = {S + L}"
            )
        if M < S + S_ref:
            raise DataError(
                f"offline split of {M} records cannot host the calibration "
                f"span: need time_step+reference_length = {S + S_ref}"
            )
        timers = {"preprocess": 0, "train_predict": 0, "detect": 0}

        t0 = time.perf_counter_ns()
        self.preprocessor_ = StreamPreprocessor(
            variance_target=self.variance_target,
            seasonal_period=self.seasonal_period,
            use_seasonal=self.use_seasonal, use_pca=self.use_pca,
        ).fit(X, start_index=start_index)
        normalized = self.preprocessor_.transform_normalized(X)
        features = self.preprocessor_.features_from_normalized(
            normalized, start_index=start_index
        )
        timers["preprocess"] += time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        hp = self._hyperparams()
        contexts, targets = pred.build_supervised_pairs(features, normalized, S, L)
        model = pred.init_model(hp, features.shape[1], L, normalized.shape[1])
        train_result = pred.train(model, contexts, targets, hp)
        self.model_ = train_result.model
        self.train_losses_ = train_result.epoch_losses
        timers["train_predict"] += time.perf_counter_ns() - t0

        # calibration over the last reference_length offline records
        t0 = time.perf_counter_ns()
        self._calibrate_and_prime(normalized, features, start_index)
        timers["detect"] += time.perf_counter_ns() - t0

        self.offline_timers_ns_ = timers
        self.offline_records_ = M
        tail_len = min(M, max(S + S_ref, self.sliding_window))
        self._tail_values = X[M - tail_len:].copy()
        self._tail_start = start_index + M - tail_len
        return self

    def _calibrate_and_prime(self, normalized, features, start_index):
        """Run the calibration fixed point over the trailing reference span
        and leave the scorer, context ring and record ring primed at the
        stream boundary. Deterministic, so reloading a saved engine rebuilds
        the exact same state.
        """
        S = self._resolved_time_step()
        L = self.horizon
        S_ref = self.reference_length
        M = len(normalized)
        span_start = M - S_ref
        scorer = det.StreamScorer(self._detector_config())
        context = deque(
            (features[i] for i in range(span_start - S, span_start)), maxlen=S
        )
        wsd_table = []
        for local in range(span_start, M):
            global_i = start_index + local
            _, wsd_pairs = scorer.score(global_i, normalized[local])
            wsd_table.append(wsd_pairs)
            context.append(features[local])
            scorer.push_prediction(
                global_i, pred.forward(self.model_, np.stack(context))
            )
        calibration, _, aps = det.calibrate(
            wsd_table, L, tolerance=self.calibration_tolerance,
            max_iter=self.calibration_max_iter,
        )
        scorer.calibration = calibration
        for local in range(max(S_ref - L, 0), S_ref):
            scorer.seed_ap(start_index + span_start + local, aps[local])
        self.calibration_ = calibration
        self._boundary_scorer = scorer
        self._boundary_context = context
        self._boundary_ring = deque(
            ((start_index + local, normalized[local])
             for local in range(max(M - self.sliding_window, 0), M)),
            maxlen=max(self.sliding_window, S),
        )
        self.next_index_ = start_index + M

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ConfigError("engine is not fitted; run fit() first")

    def to_config(self):
        cfg = PipelineConfig()
        return cfg.replace(
            seed=self.seed, threshold=self.threshold, horizon=self.horizon,
            reference_length=self.reference_length,
            variance_target=self.variance_target,
            seasonal_period=self.seasonal_period,
            use_seasonal=self.use_seasonal, use_pca=self.use_pca,
            offline_fraction=self.offline_fraction,
            calibration_tolerance=self.calibration_tolerance,
            calibration_max_iter=self.calibration_max_iter,
            drift_adaptation=self.drift_adaptation,
            epochs=self.epochs, learning_rate=self.learning_rate,
            optimizer=self.optimizer, activation=self.activation,
            loss=self.loss, batch_size=self.batch_size,
            hidden_units=self.hidden_units, num_layers=self.num_layers,
            weight_decay=self.weight_decay, time_step=self.time_step,
            a_th=self.a_th, d_th=self.d_th,
            sliding_window=self.sliding_window,
            adaptive_window_max=self.adaptive_window_max,
            semantics=self.semantics, adapt_union=self.adapt_union,
            retrain_mode=self.retrain_mode,
        )

    def save(self, directory):
        """Persist the fitted engine: config, preprocessor, model, the
        calibration, and the offline tail that re-primes the stream boundary.
        """
        self._check_fitted()
        import json
        import os

        os.makedirs(directory, exist_ok=True)
        self.to_config().save(os.path.join(directory, "config.json"))
        with open(os.path.join(directory, "preprocessor.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(self.preprocessor_.to_json())
        pred.save_model_npz(self.model_, os.path.join(directory, "model.npz"))
        with open(os.path.join(directory, "calibration.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({"mu": self.calibration_.mu, "c": self.calibration_.c,
                       "converged": self.calibration_.converged,
                       "iterations": self.calibration_.iterations,
                       "next_index": self.next_index_,
                       "offline_records": self.offline_records_},
                      fh, sort_keys=True)
        np.savez(os.path.join(directory, "tail.npz"),
                 values=self._tail_values, start=self._tail_start)

    @classmethod
    def load(cls, directory):
        """Rebuild a fitted engine; the boundary state is re-derived from the
        stored tail, reproducing the fit-time calibration exactly.
        """
        import json
        import os

        from .preprocess import StreamPreprocessor

        cfg = PipelineConfig.load(os.path.join(directory, "config.json"))
        engine = cls.from_config(cfg)
        with open(os.path.join(directory, "preprocessor.json"),
                  encoding="utf-8") as fh:
            engine.preprocessor_ = StreamPreprocessor.from_json(fh.read())
        engine.model_ = pred.load_model_npz(os.path.join(directory, "model.npz"))
        with open(os.path.join(directory, "calibration.json"),
                  encoding="utf-8") as fh:
            meta = json.load(fh)
        tail = np.load(os.path.join(directory, "tail.npz"))
        tail_values = tail["values"]
        tail_start = int(tail["start"])
        normalized = engine.preprocessor_.transform_normalized(tail_values)
        features = engine.preprocessor_.features_from_normalized(
            normalized, start_index=tail_start
        )
        engine._calibrate_and_prime(normalized, features, tail_start)
        engine.offline_timers_ns_ = {"preprocess": 0, "train_predict": 0,
                                     "detect": 0}
        engine.offline_records_ = int(meta["offline_records"])
        engine._tail_values = tail_values
        engine._tail_start = tail_start
        return engine

    # -- real-time phase -------------------------------------------------------

    def run_stream(self, X, labels=None, start_index=None, drift_config=None,
                   drift_adaptation=None, vectorized=True):
        """Score a stream record-by-record with drift adaptation.

        The fitted state is copied, so repeated runs from the same fit are
        independent and deterministic.
        """
        self._check_fitted()
        X = check_matrix(X, "X")
        if start_index is None:
            start_index = self.next_index_
        adapt = self.drift_adaptation if drift_adaptation is None else drift_adaptation
        drift_cfg = drift_config or self._drift_config()
        hp = self._hyperparams()
        S = self._resolved_time_step()
        L = self.horizon
        S_ref = self.reference_length

        scorer = copy.deepcopy(self._boundary_scorer)
        scorer.vectorized = vectorized
        context = deque(self._boundary_context, maxlen=S)
        ring = deque(self._boundary_ring,
                     maxlen=max(drift_cfg.sliding_window, S))
        slot = ModelSlot(self.model_.copy())
        monitor = DriftMonitor(drift_cfg, self.threshold) if adapt else None

        timers = {"preprocess": 0, "train_predict": 0, "detect": 0,
                  "drift_update": 0}
        verdicts = []
        events = []
        retrain_indices = []
        retrain_ms_total = 0.0
        recalib_table = None
        pending_retrain = False
        memory_high_water = 0

        def assemble_window(collected):
            by_index = {}
            if self.adapt_union:
                for idx, rec in ring:
                    by_index[idx] = rec
            for idx, rec in collected:
                by_index[idx] = rec
            indices = sorted(by_index)
            if not indices:
                raise WindowTooShortError("no records collected for retraining")
            # longest contiguous suffix; the state machine skips the record
            # at drift entry, so older alert-phase records may be detached
            end = len(indices)
            begin = end - 1
            while begin > 0 and indices[begin - 1] == indices[begin] - 1:
                begin -= 1
            idxs = indices[begin:end]
            records = np.stack([by_index[i] for i in idxs])
            return idxs[0], records

        def do_retrain(index, collected):
            nonlocal recalib_table, retrain_ms_total, pending_retrain
            try:
                first_idx, records = assemble_window(collected)
                feats = self.preprocessor_.features_from_normalized(
                    records, start_index=first_idx
                )
                result = pred.retrain(slot.snapshot(), feats, records, hp,
                                      mode=self.retrain_mode)
            except WindowTooShortError:
                if not pending_retrain:
                    events.append(_event_dict(index, "retrain_deferred",
                                              float("nan"), float("nan"),
                                              len(collected), None))
                pending_retrain = True
                return
            slot.swap(result.model)
            pending_retrain = False
            retrain_indices.append(index)
            retrain_ms = result.wall_seconds * 1000.0
            retrain_ms_total += retrain_ms
            recalib_table = []
            return retrain_ms

        for t in range(len(X)):
            global_i = start_index + t

            t0 = time.perf_counter_ns()
            normalized, feature = self.preprocessor_.transform_record(
                X[t], global_i
            )
            t1 = time.perf_counter_ns()
            verdict, wsd_pairs = scorer.score(global_i, normalized)
            t2 = time.perf_counter_ns()
            context.append(feature)
            scorer.push_prediction(
                global_i, pred.forward(slot.model, np.stack(context))
            )
            t3 = time.perf_counter_ns()

            if recalib_table is not None:
                recalib_table.append(wsd_pairs)
                if len(recalib_table) >= S_ref:
                    try:
                        calibration, _, _ = det.calibrate(
                            recalib_table, L,
                            tolerance=self.calibration_tolerance,
                            max_iter=self.calibration_max_iter,
                        )
                        scorer.calibration = calibration
                        events.append(_event_dict(global_i, "recalibrated",
                                                  float("nan"), float("nan"),
                                                  0, None))
                    except (NumericError, DataError):
                        events.append(_event_dict(global_i,
                                                  "recalibration_failed",
                                                  float("nan"), float("nan"),
                                                  0, None))
                    recalib_table = None

            ring.append((global_i, normalized))
            if monitor is not None:
                ap = verdict.ap if np.isfinite(verdict.ap) else 0.0
                event = monitor.step(global_i, ap, record=(global_i, normalized))
                if event is not None:
                    retrain_ms = None
                    if event.retrain:
                        retrain_ms = do_retrain(global_i, monitor.released_window)
                    events.append(_event_dict(
                        event.index, event.transition, event.ar_current,
                        event.ar_reference, event.adapt_len, retrain_ms,
                    ))
                elif pending_retrain:
                    retrain_ms = do_retrain(global_i, list(monitor.adapt_win))
                    if retrain_ms is not None:
                        events.append(_event_dict(
                            global_i, "retrain", float("nan"), float("nan"),
                            monitor.live_records(), retrain_ms,
                        ))
            t4 = time.perf_counter_ns()

            timers["preprocess"] += t1 - t0
            timers["detect"] += t2 - t1
            timers["train_predict"] += t3 - t2
            timers["drift_update"] += t4 - t3
            verdict.elapsed_ns = t4 - t0
            verdicts.append(verdict)

            live = max(len(ring), len(context)) + (
                monitor.live_records() if monitor is not None else 0
            )
            memory_high_water = max(memory_high_water, live)

        label_arr = None
        if labels is not None:
            label_arr = np.asarray(labels).ravel()
            if len(label_arr) != len(X):
                raise DataError("labels must align with the stream")
        return StreamResult(
            verdicts=verdicts, events=events, retrain_indices=retrain_indices,
            retrain_ms_total=retrain_ms_total, timers_ns=timers,
            elapsed_ns_total=sum(timers.values()),
            memory_high_water=memory_high_water, labels=label_arr,
            final_model=slot.model,
        )

    # -- sklearn-flavoured conveniences ---------------------------------------

    def score_samples(self, X, start_index=None):
        """Anomaly probabilities for a stream (NaN while unscored)."""
        return self.run_stream(X, start_index=start_index).aps()

    def predict(self, X, start_index=None):
        """Binary anomaly flags for a stream."""
        return self.run_stream(X, start_index=start_index).flags().astype(int)


def _event_dict(index, transition, ar_current, ar_reference, adapt_len,
                retrain_ms):
    return {
        "index": index, "transition": transition,
        "ar_current": float(ar_current), "ar_reference": float(ar_reference),
        "adapt_win_len": int(adapt_len), "retrain_ms": retrain_ms,
    }


# ---------------------------------------------------------------------------
# the full protocol: offline on the head of the data, real-time on the rest


def split_offline(config, n_records):
    n_off = int(round(n_records * config.offline_fraction))
    if n_off < 2 or n_off >= n_records:
        raise DataError(
            f"offline fraction {config.offline_fraction} leaves an unusable "
            f"split ({n_off} of {n_records})"
        )
    return n_off


def run_pipeline(config, values, labels=None):
    """Offline phase on the first fraction, real-time phase on the rest.

    Returns (RunReport, StreamResult, fitted engine).
    """
    if isinstance(config, dict):
        config = PipelineConfig.from_dict(config)
    config.validate()
    values = check_matrix(values, "values")
    n_off = split_offline(config, len(values))
    engine = DriftAdaptiveDetector.from_config(config)
    engine.fit(values[:n_off], start_index=0)
    rt_labels = None if labels is None else np.asarray(labels).ravel()[n_off:]
    result = engine.run_stream(values[n_off:], labels=rt_labels,
                               start_index=n_off)

    auc = None
    if rt_labels is not None:
        aps = result.aps()
        finite = np.isfinite(aps)
        pos = int((rt_labels[finite] == 1).sum())
        neg = int((rt_labels[finite] == 0).sum())
        if pos > 0 and neg > 0:
            auc = compute_auc(aps, rt_labels)

    n_rt = len(result.verdicts)
    total_ns = result.elapsed_ns_total
    avg_exec_ms = (total_ns / n_rt) / 1e6 if n_rt else 0.0
    proc_rate = n_rt / (total_ns / 1e9) if total_ns else 0.0
    report = RunReport(
        auc=auc, avg_exec_ms=avg_exec_ms, proc_rate=proc_rate,
        n_records=len(values), n_scored=sum(1 for v in result.verdicts
                                            if v.sources_used > 0),
        retrain_indices=list(result.retrain_indices),
        retrain_ms_total=result.retrain_ms_total,
        offline_latency={k: v / 1e6 for k, v in engine.offline_timers_ns_.items()},
        realtime_latency={k: v / 1e6 for k, v in result.timers_ns.items()},
        offline_records=n_off, realtime_records=n_rt,
        config=config.to_dict(),
    )
    return report, result, engine
