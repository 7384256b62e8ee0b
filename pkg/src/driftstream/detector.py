"""Per-record anomaly scoring from multiple prediction sources.

Every arriving record is compared against up to L independent predictions of
itself (made 1..L steps earlier). Record distances roll up into recency
weighted sequence distances, which aggregate into a single inconsistency
value weighted by how normal each prediction's origin looked; a calibrated
logistic map turns that value into an anomaly probability.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .validation import check_in_range, check_positive_int

# exponent clamp keeps exp() finite; inert below the 1e-12 tolerance
_EXP_CLAMP = 700.0


@dataclass
class DetectorConfig:
    horizon: int = 10
    reference_length: int = 200
    threshold: float = 0.65
    calibration_tolerance: float = 1e-4
    calibration_max_iter: int = 100

    def validate(self):
        check_positive_int(self.horizon, "horizon")
        check_positive_int(self.reference_length, "reference_length")
        if self.reference_length < self.horizon:
            raise ConfigError("reference_length must be >= horizon")
        check_in_range(self.threshold, 0.0, 1.0, "threshold",
                       open_lo=True, open_hi=True)
        return self


@dataclass
class LogisticCalibration:
    mu: float
    c: float
    converged: bool = False
    iterations: int = 0

    @classmethod
    def initial(cls):
        return cls(mu=0.5, c=1.0)


@dataclass
class AnomalyVerdict:
    index: int
    sid: float  # NaN while no prediction source is available
    ap: float
    is_anomalous: bool
    sources_used: int
    elapsed_ns: int = 0

    @property
    def scored(self):
        return self.sources_used > 0


# ---------------------------------------------------------------------------
# the four scoring operations


def record_distance(r_i, r_j):
    """Mean squared per-dimension difference between two records."""
    r_i = np.asarray(r_i, dtype=np.float64)
    r_j = np.asarray(r_j, dtype=np.float64)
    if r_i.shape != r_j.shape:
        raise DataError(f"record shapes differ: {r_i.shape} vs {r_j.shape}")
    d = r_i - r_j
    return float((d * d).mean())


def sequence_weights(n):
    """Recency weights e^(N-m), m=1 newest; returned oldest-first."""
    return np.exp(np.arange(n, dtype=np.float64))


def weighted_sequence_distance(actual, predicted):
    """Exponentially recency-weighted mean of record distances.

    Rows are ordered oldest first; the newest pair carries weight e^(N-1).
    """
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape:
        raise DataError(f"sequence shapes differ: {actual.shape} vs {predicted.shape}")
    if actual.ndim == 1:
        actual = actual[:, None]
        predicted = predicted[:, None]
    n = actual.shape[0]
    if n < 1:
        raise DataError("sequences must contain at least one record")
    rds = ((actual - predicted) ** 2).mean(axis=1)
    w = sequence_weights(n)
    return float((w * rds).sum() / w.sum())


def sequence_inconsistency(wsds, origin_aps):
    """Aggregate per-source WSDs, weighting each source by how normal its
    origin record looked (weight 1 - AP). All-zero weights fall back to the
    unweighted mean.
    """
    wsds = np.asarray(wsds, dtype=np.float64)
    origin_aps = np.asarray(origin_aps, dtype=np.float64)
    if wsds.shape != origin_aps.shape:
        raise DataError("wsds and origin_aps must align")
    if wsds.size == 0:
        raise DataError("no prediction sources available")
    weights = 1.0 - origin_aps
    denom = weights.sum()
    if denom == 0.0:
        return float(wsds.mean())
    return float((weights * wsds).sum() / denom)


def anomaly_probability(sid, calibration):
    """Logistic map of the inconsistency value onto [0, 1]."""
    z = calibration.c * (sid - calibration.mu)
    z = min(max(z, -_EXP_CLAMP), _EXP_CLAMP)
    return 1.0 / (1.0 + math.exp(-z))


# ---------------------------------------------------------------------------
# calibration fixed point


def calibrate(wsd_table, horizon, tolerance=1e-4, max_iter=100):
    """Iterate the (mu, C) fixed point over a reference span.

    ``wsd_table[i]`` lists the (k, wsd) pairs available for span record i.
    Starting from mu=0.5, C=1 and all-zero APs, each pass recomputes SID and
    AP for records [L, S) in order, then sets mu to the SID mean and C to
    the inverse SID variance, until both move by less than ``tolerance``
    (relative) or ``max_iter`` passes elapse.

    Returns (calibration, sids, aps) for the span; records below L keep
    AP 0 and SID NaN.
    """
    span = len(wsd_table)
    if span <= horizon:
        raise DataError(f"reference span {span} must exceed horizon {horizon}")
    aps = np.zeros(span)
    sids = np.full(span, np.nan)
    mu, c = LogisticCalibration.initial().mu, LogisticCalibration.initial().c
    converged = False
    iterations = 0
    eps = 1e-12
    for iterations in range(1, max_iter + 1):
        cal = LogisticCalibration(mu=mu, c=c)
        for i in range(horizon, span):
            pairs = wsd_table[i]
            if not pairs:
                raise DataError(f"span record {i} has no prediction sources")
            ks = np.array([k for k, _ in pairs])
            ws = np.array([w for _, w in pairs])
            lag_aps = aps[i - ks]
            sids[i] = sequence_inconsistency(ws, lag_aps)
            aps[i] = anomaly_probability(sids[i], cal)
        ref = sids[horizon:]
        new_mu = float(ref.mean())
        sigma = float(ref.std())
        if sigma == 0.0:
            raise NumericError("degenerate reference segment: zero SID variance")
        new_c = 1.0 / (sigma * sigma)
        d_mu = abs(new_mu - mu) / max(abs(new_mu), eps)
        d_c = abs(new_c - c) / max(abs(new_c), eps)
        mu, c = new_mu, new_c
        if max(d_mu, d_c) < tolerance:
            converged = True
            break
    calibration = LogisticCalibration(mu=mu, c=c, converged=converged,
                                      iterations=iterations)
    # final pass so emitted APs reflect the converged parameters
    for i in range(horizon, span):
        pairs = wsd_table[i]
        ks = np.array([k for k, _ in pairs])
        ws = np.array([w for _, w in pairs])
        sids[i] = sequence_inconsistency(ws, aps[i - ks])
        aps[i] = anomaly_probability(sids[i], calibration)
    return calibration, sids, aps


# ---------------------------------------------------------------------------
# streaming scorer


class PredictionBuffer:
    """Ring of the last L predicted sequences, keyed by origin index."""

    def __init__(self, horizon):
        self.horizon = horizon
        self._by_origin = {}

    def push(self, origin, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != self.horizon:
            raise DataError(
                f"prediction holds {values.shape[0]} records, expected {self.horizon}"
            )
        self._by_origin[origin] = values

    def evict_before(self, origin):
        for key in [o for o in self._by_origin if o < origin]:
            del self._by_origin[key]

    def get(self, origin):
        return self._by_origin.get(origin)

    def origins(self):
        return sorted(self._by_origin)

    def __len__(self):
        return len(self._by_origin)


class StreamScorer:
    """One-pass scorer: keeps only the prediction buffer, a ring of record
    distances for the last L targets, and the last L anomaly probabilities.

    Per-source evaluation is a fixed-shape gather/reduce, so the work per
    record is O(L^2 + L*D) in a handful of array operations; a plain-loop
    mode (vectorized=False) computes the same values serially.
    """

    def __init__(self, config, calibration=None, vectorized=True):
        config.validate()
        self.config = config
        self.calibration = calibration
        self.vectorized = vectorized
        L = config.horizon
        self.buffer = PredictionBuffer(L)
        self._rd = np.full((L, L), np.nan)  # [target % L, k-1]
        self._rd_target = np.full(L, -1, dtype=np.int64)
        self._ap = np.zeros(L)  # [index % L]
        self._ap_target = np.full(L, -1, dtype=np.int64)
        # weight matrix: row k-1 holds the normalized recency weights of the
        # k-term sequence, column m-1 = weight for the record m-1 steps back
        w = np.zeros((L, L))
        cols = np.zeros((L, L), dtype=np.int64)
        for k in range(1, L + 1):
            raw = np.exp(k - np.arange(1, k + 1, dtype=np.float64))
            w[k - 1, :k] = raw / raw.sum()
            cols[k - 1, :k] = k - np.arange(1, k + 1)
        self._wsd_weights = w
        self._gather_cols = cols
        self._mask = np.tril(np.ones((L, L), dtype=bool))

    # -- state seeding (used when continuing from an offline span) ----------

    def seed_ap(self, index, ap):
        L = self.config.horizon
        self._ap[index % L] = ap
        self._ap_target[index % L] = index

    # -- scoring -------------------------------------------------------------

    def _rd_row(self, index, record):
        """Distances between record ``index`` and each origin's prediction."""
        L = self.config.horizon
        row = np.full(L, np.nan)
        for k in range(1, L + 1):
            pred = self.buffer.get(index - k)
            if pred is not None:
                row[k - 1] = record_distance(record, pred[k - 1])
        return row

    def _wsds_vectorized(self, index):
        L = self.config.horizon
        rows = (index - np.arange(L)) % L
        targets_ok = self._rd_target[rows] == index - np.arange(L)
        G = self._rd[rows[None, :], self._gather_cols]
        valid = self._mask & targets_ok[None, :] & np.isfinite(
            np.where(self._mask, G, 0.0)
        )
        k_valid = valid.sum(axis=1) == np.arange(1, L + 1)
        G = np.where(valid, G, 0.0)
        wsds = (self._wsd_weights * G).sum(axis=1)
        return wsds, k_valid

    def _wsds_serial(self, index):
        L = self.config.horizon
        wsds = np.zeros(L)
        k_valid = np.zeros(L, dtype=bool)
        for k in range(1, L + 1):
            num = 0.0
            den = 0.0
            ok = True
            for m in range(1, k + 1):
                t = index - m + 1
                row = t % L
                if self._rd_target[row] != t:
                    ok = False
                    break
                rd = self._rd[row, k - m]
                if not np.isfinite(rd):
                    ok = False
                    break
                w = math.exp(k - m)
                num += w * rd
                den += w
            if ok:
                wsds[k - 1] = num / den
                k_valid[k - 1] = True
        return wsds, k_valid

    def score(self, index, record):
        """Score one arriving record against the available predictions.

        Returns (verdict, wsd_pairs); wsd_pairs lists the (k, wsd) values
        that went into the verdict, which calibration collectors reuse.
        """
        L = self.config.horizon
        record = np.asarray(record, dtype=np.float64)
        row = self._rd_row(index, record)
        self._rd[index % L] = row
        self._rd_target[index % L] = index
        if self.vectorized:
            wsds, k_valid = self._wsds_vectorized(index)
        else:
            wsds, k_valid = self._wsds_serial(index)
        ks = np.nonzero(k_valid)[0] + 1
        sources = int(len(ks))
        if sources == 0:
            verdict = AnomalyVerdict(index=index, sid=float("nan"),
                                     ap=float("nan"), is_anomalous=False,
                                     sources_used=0)
            self._ap[index % L] = 0.0
            self._ap_target[index % L] = index
            return verdict, []
        lag_rows = (index - ks) % L
        lag_ok = self._ap_target[lag_rows] == index - ks
        lag_aps = np.where(lag_ok, self._ap[lag_rows], 0.0)
        sid = sequence_inconsistency(wsds[ks - 1], lag_aps)
        if self.calibration is None:
            ap = float("nan")
            flagged = False
        else:
            ap = anomaly_probability(sid, self.calibration)
            flagged = ap > self.config.threshold
        verdict = AnomalyVerdict(index=index, sid=sid, ap=ap,
                                 is_anomalous=flagged, sources_used=sources)
        self._ap[index % L] = 0.0 if math.isnan(ap) else ap
        self._ap_target[index % L] = index
        return verdict, list(zip(ks.tolist(), wsds[ks - 1].tolist()))

    def push_prediction(self, origin, values):
        """Store the prediction made at ``origin`` and drop expired ones."""
        self.buffer.push(origin, values)
        self.buffer.evict_before(origin - self.config.horizon + 1)
