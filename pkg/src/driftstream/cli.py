"""Command-line harness.

Subcommands: synth (stream generation), fit (offline phase), run (full or
real-time phase), tune (GA search), sweep-dim, sweep-threshold, report.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import PipelineConfig
from .dataio import (
    load_csv,
    save_stream_csv,
    write_drift_events,
    write_verdicts,
)
from .engine import DriftAdaptiveDetector, run_pipeline, split_offline
from .errors import ConfigError, DataError, NumericError
from .metrics import RunReport
from .sweeps import dimension_sweep, threshold_horizon_sweep, write_rows_csv
from .synth import (
    AnomalyInjection,
    DriftInjection,
    FeatureSpec,
    StreamSpec,
    scattered_anomalies,
    synth_stream,
)
from .tuner import (
    GaSettings,
    decode_drift_genome,
    drift_search_space,
    evaluate_lstm_config,
    evaluate_realtimeoaw_config,
    ga_optimize,
    lstm_search_space,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _add_io_args(p, needs_input=True):
    if needs_input:
        p.add_argument("--input", required=True, help="input CSV path")
    p.add_argument("--label-col", default=None)
    p.add_argument("--timestamp-col", default=None)
    p.add_argument("--categorical", choices=("onehot", "drop"), default="onehot")


def _add_config_args(p):
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-drift-adapt", action="store_true")
    p.add_argument("--no-pca", action="store_true")
    p.add_argument("--no-seasonal", action="store_true")
    p.add_argument("--semantics", choices=("difference", "ratio"), default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--offline-fraction", type=float, default=None)


def _load_config(args):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "threshold", None) is not None:
        overrides["threshold"] = args.threshold
    if getattr(args, "horizon", None) is not None:
        overrides["horizon"] = args.horizon
    if getattr(args, "offline_fraction", None) is not None:
        overrides["offline_fraction"] = args.offline_fraction
    if getattr(args, "semantics", None):
        overrides["semantics"] = args.semantics
    if getattr(args, "no_drift_adapt", False):
        overrides["drift_adaptation"] = False
    if getattr(args, "no_pca", False):
        overrides["use_pca"] = False
    if getattr(args, "no_seasonal", False):
        overrides["use_seasonal"] = False
    return cfg.replace(**overrides).validate()


def _load_stream(args, require_labels=False):
    return load_csv(args.input, label_col=args.label_col,
                    timestamp_col=args.timestamp_col,
                    categorical=args.categorical,
                    require_labels=require_labels)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            doc = json.load(fh)
        spec = StreamSpec(
            length=doc["length"], dims=doc["dims"], seed=doc.get("seed", 0),
            features=[FeatureSpec(**f) for f in doc.get("features", [])],
            anomalies=[AnomalyInjection(**a) for a in doc.get("anomalies", [])],
            drifts=[DriftInjection(**d) for d in doc.get("drifts", [])],
        )
    else:
        spec = StreamSpec(length=args.length, dims=args.dims, seed=args.seed)
        sigma = spec.resolved_features()[0].std()
        for text in args.drift or []:
            kind, start, span, magnitude = text.split(":")
            spec.drifts.append(DriftInjection(
                kind=kind, start=int(start), span=int(span),
                magnitude=float(magnitude) * sigma,
            ))
        if args.anomaly_rate > 0:
            feats = tuple(range(max(1, spec.dims // 2)))
            spec.anomalies = scattered_anomalies(
                spec.length, args.anomaly_rate, features=feats,
                offset=args.anomaly_offset * sigma, seed=spec.seed + 1,
            )
    stream = synth_stream(spec)
    save_stream_csv(args.out, stream.values, stream.labels)
    truth = [
        {"kind": d.kind, "start": d.start, "span": d.span,
         "magnitude": d.magnitude} for d in stream.drift_truth
    ]
    with open(args.out + ".drift.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
    print(f"wrote {len(stream.values)} records to {args.out}")
    return EXIT_OK


def cmd_fit(args):
    cfg = _load_config(args)
    data = _load_stream(args)
    engine = DriftAdaptiveDetector.from_config(cfg)
    n_off = len(data.values) if args.all else split_offline(cfg, len(data.values))
    engine.fit(data.values[:n_off], start_index=0)
    engine.save(args.out)
    print(f"fitted on {n_off} records; artifacts in {args.out}")
    return EXIT_OK


def cmd_run(args):
    cfg = _load_config(args)
    data = _load_stream(args, require_labels=args.eval)
    os.makedirs(args.out, exist_ok=True)
    if args.model:
        engine = DriftAdaptiveDetector.load(args.model)
        if getattr(args, "no_drift_adapt", False):
            engine.drift_adaptation = False
        result = engine.run_stream(data.values, labels=data.labels)
        n_rt = len(result.verdicts)
        total_ns = result.elapsed_ns_total
        report = RunReport(
            auc=None, avg_exec_ms=(total_ns / n_rt) / 1e6 if n_rt else 0.0,
            proc_rate=n_rt / (total_ns / 1e9) if total_ns else 0.0,
            n_records=n_rt, n_scored=sum(1 for v in result.verdicts
                                         if v.sources_used > 0),
            retrain_indices=list(result.retrain_indices),
            retrain_ms_total=result.retrain_ms_total,
            realtime_latency={k: v / 1e6 for k, v in result.timers_ns.items()},
            realtime_records=n_rt, config=cfg.to_dict(),
        )
    else:
        report, result, _ = run_pipeline(cfg, data.values, data.labels)
    ext = "csv" if args.emit == "csv" else "jsonl"
    write_verdicts(os.path.join(args.out, f"verdicts.{ext}"),
                   result.verdicts, fmt=args.emit)
    write_drift_events(os.path.join(args.out, "drift_events.jsonl"),
                       result.events)
    with open(os.path.join(args.out, "report.json"), "w",
              encoding="utf-8") as fh:
        fh.write(report.to_json())
    print(f"scored {len(result.verdicts)} records; "
          f"auc={report.auc} avg_exec_ms={report.avg_exec_ms:.4f}")
    return EXIT_OK


def cmd_tune(args):
    cfg = _load_config(args)
    data = _load_stream(args)
    settings = GaSettings(population=args.population,
                          crossover_rate=args.crossover_rate,
                          mutation_rate=args.mutation_rate,
                          max_time=args.generations, seed=cfg.seed)
    if args.target == "oaw":
        engine = DriftAdaptiveDetector.from_config(cfg)
        n_off = split_offline(cfg, len(data.values))
        engine.fit(data.values[:n_off], start_index=0)
        stream = data.values[n_off:]

        def fitness(genome):
            return evaluate_realtimeoaw_config(genome, engine, stream, n_off)

        result = ga_optimize(drift_search_space(), fitness, settings)
        best_cfg = cfg.replace(**{
            k: v for k, v in decode_drift_genome(result.best_genome).__dict__.items()
            if k in ("a_th", "d_th", "sliding_window", "adaptive_window_max")
        })
    else:
        from .predictor import build_supervised_pairs

        engine = DriftAdaptiveDetector.from_config(cfg)
        n_off = split_offline(cfg, len(data.values))
        engine.fit(data.values[:n_off], start_index=0)
        pp = engine.preprocessor_
        normalized = pp.transform_normalized(data.values[:n_off])
        features = pp.features_from_normalized(normalized, start_index=0)
        S = engine._resolved_time_step()
        cut = int(len(features) * 0.8)
        train_pairs = build_supervised_pairs(features[:cut], normalized[:cut],
                                             S, cfg.horizon)
        val_pairs = build_supervised_pairs(features[cut:], normalized[cut:],
                                           S, cfg.horizon)

        def fitness(genome):
            return evaluate_lstm_config(genome, train_pairs, val_pairs,
                                        features.shape[1], cfg.horizon,
                                        normalized.shape[1])

        result = ga_optimize(lstm_search_space(), fitness, settings)
        best_cfg = cfg.replace(**{k: v for k, v in result.best_genome.items()})
    os.makedirs(args.out, exist_ok=True)
    rows = [(g, _fitness_str(b), m, json.dumps(genome, sort_keys=True))
            for g, b, m, genome in result.history]
    write_rows_csv(os.path.join(args.out, "tuning.csv"), rows,
                   ("generation", "best_fitness", "mean_fitness", "best_genome"))
    best_cfg.save(os.path.join(args.out, "best_config.json"))
    print(f"best genome {result.best_genome} fitness={result.best_fitness}")
    return EXIT_OK


def _fitness_str(fitness):
    if isinstance(fitness, tuple):
        return fitness[0]
    return fitness


def cmd_sweep_dim(args):
    cfg = _load_config(args)
    data = _load_stream(args)
    dims = [int(d) for d in args.dims.split(",")]
    rows = dimension_sweep(cfg, data.values, data.labels, dims=dims,
                           repeats=args.repeats)
    write_rows_csv(args.out, rows, ("dimensions", "avg_exec_ms"))
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_sweep_threshold(args):
    cfg = _load_config(args)
    data = _load_stream(args)
    thresholds = [float(t) for t in args.thresholds.split(",")]
    horizons = [int(h) for h in args.horizons.split(",")]
    rows = threshold_horizon_sweep(cfg, data.values, data.labels,
                                   thresholds=thresholds, horizons=horizons)
    write_rows_csv(args.out, rows,
                   ("threshold", "horizon", "auc", "avg_exec_ms", "retrains"))
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_report(args):
    path = os.path.join(args.run, "report.json")
    if not os.path.exists(path):
        raise DataError(f"no report.json under {args.run}")
    with open(path, encoding="utf-8") as fh:
        report = RunReport.from_json(fh.read())
    print(json.dumps(json.loads(report.to_json()), indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="driftstream",
        description="Streaming anomaly detection with drift adaptation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic stream")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", default=None, help="StreamSpec JSON document")
    p.add_argument("--length", type=int, default=10000)
    p.add_argument("--dims", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drift", action="append",
                   help="kind:start:span:magnitude_sigma (repeatable)")
    p.add_argument("--anomaly-rate", type=float, default=0.0)
    p.add_argument("--anomaly-offset", type=float, default=3.0,
                   help="offset in feature-sigma units")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="offline phase: fit and save artifacts")
    _add_io_args(p)
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--all", action="store_true",
                   help="fit on the whole input instead of the offline split")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("run", help="real-time phase (full pipeline by default)")
    _add_io_args(p)
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default=None,
                   help="fitted model directory (skip the offline phase)")
    p.add_argument("--emit", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--eval", action="store_true",
                   help="require labels and report AUC")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tune", help="GA hyperparameter search")
    _add_io_args(p)
    _add_config_args(p)
    p.add_argument("--target", choices=("oaw", "lstm"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--generations", type=int, default=10)
    p.add_argument("--population", type=int, default=70)
    p.add_argument("--crossover-rate", type=float, default=0.7)
    p.add_argument("--mutation-rate", type=float, default=0.15)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("sweep-dim", help="execution time vs dimensions")
    _add_io_args(p)
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", default="6,12,18,24,30")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_sweep_dim)

    p = sub.add_parser("sweep-threshold", help="AUC/time vs threshold and horizon")
    _add_io_args(p)
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", default="0.55,0.60,0.65,0.70,0.75")
    p.add_argument("--horizons", default="10,15,20,30")
    p.set_defaults(func=cmd_sweep_threshold)

    p = sub.add_parser("report", help="print a saved run report")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
