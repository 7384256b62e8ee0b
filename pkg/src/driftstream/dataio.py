"""CSV ingestion and artifact emission.

The loader parses numbers itself (locale-independent ``float``), reports
the exact row/column of any unparseable cell, and either one-hot encodes or
drops categorical columns. Verdicts and drift events emit as CSV or JSONL.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

ONE_HOT_MAX_LEVELS = 20  # rarer levels pool into a single bucket


@dataclass
class LoadedStream:
    values: np.ndarray  # (M, D) float64
    labels: np.ndarray | None  # (M,) 0/1 or None
    feature_names: list
    anomaly_fraction: float | None = None
    timestamp_col: str | None = None


def _parse_cell(text):
    text = text.strip()
    if text == "" or text.lower() in ("nan", "na", "null", "none", "?"):
        return float("nan")
    return float(text)


def load_csv(path, label_col=None, timestamp_col=None, categorical="onehot",
             require_labels=False):
    """Read a header CSV into a numeric record stream.

    label_col values must be 0/1; timestamp_col is dropped from the feature
    matrix (records are indexed by arrival order). Columns that fail numeric
    parsing everywhere are treated as categorical and one-hot encoded
    (capped at ONE_HOT_MAX_LEVELS) or dropped, per ``categorical``.
    """
    if categorical not in ("onehot", "drop"):
        raise ConfigError(f"categorical={categorical!r} not in (onehot, drop)")
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    header = [h.strip() for h in header]
    if label_col is not None and label_col not in header:
        raise DataError(f"{path}: label column {label_col!r} not in header")
    if require_labels and label_col is None:
        raise DataError("evaluation requested but no label column given")
    if timestamp_col is not None and timestamp_col not in header:
        raise DataError(f"{path}: timestamp column {timestamp_col!r} not in header")

    width = len(header)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {r + 2} has {len(row)} cells, "
                            f"expected {width}")

    drop = {header.index(c) for c in (label_col, timestamp_col) if c is not None}
    feature_idx = [i for i in range(width) if i not in drop]

    # first pass: decide which feature columns are numeric; a column with a
    # mix of parseable and unparseable cells is an input error, not a
    # categorical column
    numeric = {}
    for i in feature_idx:
        parsed = []
        bad_row = None
        ok_count = 0
        for r, row in enumerate(rows):
            try:
                parsed.append(_parse_cell(row[i]))
                ok_count += 1
            except ValueError:
                if bad_row is None:
                    bad_row = r
                parsed.append(float("nan"))
        if bad_row is None:
            numeric[i] = parsed
        elif ok_count > 0:
            raise DataError(
                f"{path}: row {bad_row + 2}, column {header[i]!r}: "
                f"unparseable numeric cell {rows[bad_row][i]!r}"
            )
        else:
            numeric[i] = None

    columns = []
    names = []
    for i in feature_idx:
        if numeric[i] is not None:
            columns.append(np.asarray(numeric[i], dtype=np.float64))
            names.append(header[i])
            continue
        if categorical == "drop":
            continue
        raw = [row[i].strip() for row in rows]
        counts = {}
        for v in raw:
            counts[v] = counts.get(v, 0) + 1
        levels = sorted(counts, key=lambda v: (-counts[v], v))[:ONE_HOT_MAX_LEVELS]
        level_set = set(levels)
        pooled = any(v not in level_set for v in raw)
        for level in levels:
            columns.append(np.asarray([1.0 if v == level else 0.0 for v in raw]))
            names.append(f"{header[i]}={level}")
        if pooled:
            columns.append(np.asarray([0.0 if v in level_set else 1.0 for v in raw]))
            names.append(f"{header[i]}=<other>")

    if not columns:
        raise DataError(f"{path}: no usable feature columns")
    values = np.column_stack(columns)

    labels = None
    fraction = None
    if label_col is not None:
        li = header.index(label_col)
        labels = np.empty(len(rows), dtype=np.int64)
        for r, row in enumerate(rows):
            cell = row[li].strip()
            if cell not in ("0", "1"):
                raise DataError(
                    f"{path}: row {r + 2}, column {label_col!r}: "
                    f"label must be 0 or 1, got {cell!r}"
                )
            labels[r] = int(cell)
        fraction = float(labels.mean())

    return LoadedStream(values=values, labels=labels, feature_names=names,
                        anomaly_fraction=fraction, timestamp_col=timestamp_col)


def save_stream_csv(path, values, labels=None, feature_names=None):
    values = np.asarray(values)
    n, d = values.shape
    names = feature_names or [f"f{i}" for i in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["t"] + list(names) + (["label"] if labels is not None else [])
        writer.writerow(header)
        for i in range(n):
            row = [i] + [repr(float(v)) for v in values[i]]
            if labels is not None:
                row.append(int(labels[i]))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# verdict / event emission


VERDICT_FIELDS = ("index", "sid", "ap", "flag", "sources_used", "elapsed_ns")


def write_verdicts(path, verdicts, fmt="csv"):
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(VERDICT_FIELDS)
            for v in verdicts:
                writer.writerow([v.index, repr(v.sid), repr(v.ap),
                                 int(v.is_anomalous), v.sources_used,
                                 v.elapsed_ns])
    elif fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for v in verdicts:
                fh.write(json.dumps({
                    "index": v.index, "sid": v.sid, "ap": v.ap,
                    "flag": bool(v.is_anomalous),
                    "sources_used": v.sources_used,
                    "elapsed_ns": v.elapsed_ns,
                }, sort_keys=True))
                fh.write("\n")
    else:
        raise ConfigError(f"unknown verdict format {fmt!r}")


def write_drift_events(path, events):
    """JSON lines: index, transition, window ARs, adapt length, retrain ms."""

    def _num(x):
        if x is None or not np.isfinite(x):
            return None
        return float(x)

    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps({
                "index": e["index"],
                "transition": e["transition"],
                "ar_current": _num(e["ar_current"]),
                "ar_reference": _num(e["ar_reference"]),
                "adapt_win_len": e["adapt_win_len"],
                "retrain_ms": _num(e.get("retrain_ms")),
            }, sort_keys=True))
            fh.write("\n")
