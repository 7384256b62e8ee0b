"""Grid evaluations: dimension scaling and threshold/horizon trade-offs."""

import csv

import numpy as np

from .engine import run_pipeline
from .errors import DataError


def dimension_sweep(config, values, labels=None, dims=(6, 12, 18, 24, 30),
                    repeats=3):
    """Average per-record execution time for prefixes of the feature space.

    Each cell runs the full pipeline on the first D columns; the reported
    time is the median over ``repeats`` runs. Rows: (D, avg_exec_ms).
    """
    values = np.asarray(values, dtype=np.float64)
    for d in dims:
        if d > values.shape[1]:
            raise DataError(f"dimension {d} exceeds stream width {values.shape[1]}")
    rows = []
    for d in dims:
        times = []
        for _ in range(repeats):
            report, _, _ = run_pipeline(config, values[:, :d], labels)
            times.append(report.avg_exec_ms)
        rows.append((int(d), float(np.median(times))))
    return rows


def threshold_horizon_sweep(config, values, labels=None,
                            thresholds=(0.55, 0.60, 0.65, 0.70, 0.75),
                            horizons=(10, 15, 20, 30)):
    """AUC and execution time over the (threshold, horizon) grid.

    Rows: (T, L, auc, avg_exec_ms, retrains).
    """
    rows = []
    for T in thresholds:
        for L in horizons:
            cell = config.replace(threshold=T, horizon=L)
            report, result, _ = run_pipeline(cell, values, labels)
            rows.append((float(T), int(L), report.auc, report.avg_exec_ms,
                         len(result.retrain_indices)))
    return rows


def write_rows_csv(path, rows, header):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
