"""Offline feature pipeline: cleaning, standardization, correlation, PCA
reduction and classical additive seasonal decomposition.

Fit operations run once on the historical batch; the fitted transformer is
immutable afterwards and safe to apply from concurrent readers.
"""

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ConfigError, DataError, NotFittedError
from .validation import check_matrix, check_vector

PREPROCESSOR_FORMAT = "driftstream-preprocessor/1"


# ---------------------------------------------------------------------------
# cleaning


def clean(X, clip_sigma=4.0):
    """Fill missing values and clip outliers, preserving order and length.

    Missing entries are forward-filled per feature; leading gaps take the
    feature mean of the observed values. Afterwards each feature is clipped
    to mean +- clip_sigma * std (computed on the filled column).
    """
    X = check_matrix(X, "stream")
    out = X.copy()
    for col in range(out.shape[1]):
        column = out[:, col]
        missing = ~np.isfinite(column)
        if missing.all():
            raise DataError(f"feature column {col} has no observed values")
        if missing.any():
            idx = np.where(~missing, np.arange(len(column)), -1)
            np.maximum.accumulate(idx, out=idx)
            filled = np.where(idx >= 0, column[np.maximum(idx, 0)], np.nan)
            lead = ~np.isfinite(filled)
            if lead.any():
                filled[lead] = column[~missing].mean()
            column = filled
        m = column.mean()
        s = column.std()
        out[:, col] = np.clip(column, m - clip_sigma * s, m + clip_sigma * s)
    return out


# ---------------------------------------------------------------------------
# standardization


@dataclass
class StandardizationStats:
    """Per-feature location/scale; constant features carry std 1."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # bool mask of degenerate features

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean) / self.std

    def invert(self, X):
        return np.asarray(X, dtype=np.float64) * self.std + self.mean


def fit_standardize(X):
    """Fit per-feature mean/std (population) and return the scaled stream.

    Constant features pass through as zeros with std recorded as 1.
    """
    X = check_matrix(X, "stream", min_rows=2)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = std == 0.0
    std = np.where(constant, 1.0, std)
    stats = StandardizationStats(mean=mean, std=std, constant=constant)
    return stats, stats.apply(X)


# ---------------------------------------------------------------------------
# correlation


def pearson_matrix(X):
    """Pairwise Pearson correlation; zero-variance features correlate 0."""
    X = check_matrix(X, "stream", min_rows=2)
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / X.shape[0]
    sigma = np.sqrt(np.diag(cov))
    ok = sigma > 0
    denom = np.outer(np.where(ok, sigma, 1.0), np.where(ok, sigma, 1.0))
    corr = cov / denom
    corr[~ok, :] = 0.0
    corr[:, ~ok] = 0.0
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaModel:
    """Orthonormal basis of the retained subspace, eigenvalues descending."""

    components: np.ndarray  # (B, D) rows are eigenvectors
    eigenvalues: np.ndarray  # (B,) non-negative, non-increasing
    variance_target: float
    fitted_dim: int
    all_eigenvalues: np.ndarray  # full spectrum, used for reporting

    @property
    def n_components(self):
        return self.components.shape[0]

    def transform(self, record):
        record = np.asarray(record, dtype=np.float64)
        if record.shape[-1] != self.fitted_dim:
            raise DataError(
                f"record dimension {record.shape[-1]} != fitted {self.fitted_dim}"
            )
        return record @ self.components.T

    def inverse_transform(self, reduced):
        return np.asarray(reduced, dtype=np.float64) @ self.components


def fit_pca(X, variance_target=0.95):
    """Eigendecompose the 1/(M-1)-normalized covariance and keep the smallest
    component count whose cumulative eigenvalue fraction reaches the target.

    Eigenvector signs are fixed so the largest-magnitude entry of every
    component is positive.
    """
    if not 0.0 < variance_target <= 1.0:
        raise ConfigError(f"variance_target={variance_target} outside (0, 1]")
    X = check_matrix(X, "stream")
    M, D = X.shape
    if M < D + 1:
        raise DataError(f"need at least D+1={D + 1} records to fit PCA, got {M}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (M - 1)
    cov = (cov + cov.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    for j in range(D):
        pivot = np.argmax(np.abs(eigvecs[:, j]))
        if eigvecs[pivot, j] < 0:
            eigvecs[:, j] = -eigvecs[:, j]
    total = eigvals.sum()
    if total <= 0:
        raise DataError("covariance has no variance to explain")
    fractions = np.cumsum(eigvals) / total
    B = int(np.searchsorted(fractions, variance_target - 1e-12) + 1)
    B = min(B, D)
    return PcaModel(
        components=eigvecs[:, :B].T.copy(),
        eigenvalues=eigvals[:B].copy(),
        variance_target=variance_target,
        fitted_dim=D,
        all_eigenvalues=eigvals,
    )


def apply_pca(model, record):
    """Project one record (or a batch) onto the retained components."""
    return model.transform(record)


# ---------------------------------------------------------------------------
# seasonal decomposition


@dataclass
class SeasonalDecomposition:
    period: int
    trend: np.ndarray  # centered moving average, NaN at the edges
    seasonal: np.ndarray  # exactly periodic, sums to ~0 over one period
    residual: np.ndarray

    @property
    def pattern(self):
        """One period of the seasonal component, phase 0 first."""
        return self.seasonal[: self.period].copy()


def _centered_moving_average(series, period):
    n = len(series)
    if period % 2 == 0:
        # 2 x period weighted average: half weight on both end points
        weights = np.full(period + 1, 1.0 / period)
        weights[0] = weights[-1] = 0.5 / period
        half = period // 2
    else:
        weights = np.full(period, 1.0 / period)
        half = period // 2
    trend = np.full(n, np.nan)
    valid = np.convolve(series, weights[::-1], mode="valid")
    trend[half : half + len(valid)] = valid
    return trend


def seasonal_decompose(series, period):
    """Classical additive decomposition into trend + seasonal + residual."""
    series = check_vector(series, "series")
    if period < 2:
        raise ConfigError(f"period must be >= 2, got {period}")
    if len(series) < 2 * period:
        raise DataError(
            f"series length {len(series)} shorter than 2*period={2 * period}"
        )
    trend = _centered_moving_average(series, period)
    detrended = series - trend
    phase_means = np.empty(period)
    for phase in range(period):
        values = detrended[phase::period]
        phase_means[phase] = np.nanmean(values)
    phase_means -= phase_means.mean()
    reps = int(np.ceil(len(series) / period))
    seasonal = np.tile(phase_means, reps)[: len(series)]
    residual = series - trend - seasonal
    return SeasonalDecomposition(
        period=period, trend=trend, seasonal=seasonal, residual=residual
    )


# ---------------------------------------------------------------------------
# feature assembly


def build_feature_vector(reduced, seasonal):
    """Concatenate the reduced record with the current seasonal values."""
    reduced = np.asarray(reduced, dtype=np.float64).ravel()
    if seasonal is None or len(seasonal) == 0:
        return reduced
    return np.concatenate([reduced, np.asarray(seasonal, dtype=np.float64).ravel()])


# ---------------------------------------------------------------------------
# fitted transformer


class StreamPreprocessor(BaseEstimator, TransformerMixin):
    """Turns raw records into predictor-ready feature vectors.

    fit() learns cleaning statistics, standardization, the PCA basis and the
    per-feature seasonal patterns from a historical batch. transform() maps
    records into feature space; the companion normalized records (targets for
    the predictor) come from transform_normalized().
    """

    def __init__(self, variance_target=0.95, seasonal_period=24,
                 use_seasonal=True, use_pca=True, clip_sigma=4.0):
        self.variance_target = variance_target
        self.seasonal_period = seasonal_period
        self.use_seasonal = use_seasonal
        self.use_pca = use_pca
        self.clip_sigma = clip_sigma

    # -- fitting ------------------------------------------------------------

    def fit(self, X, y=None, start_index=0):
        X = check_matrix(X, "X", min_rows=2)
        cleaned = clean(X, clip_sigma=self.clip_sigma)
        self.clean_mean_ = cleaned.mean(axis=0)
        self.clean_std_ = cleaned.std(axis=0)
        self.stats_, standardized = fit_standardize(cleaned)
        self.correlation_ = pearson_matrix(standardized)
        self.raw_dim_ = X.shape[1]
        if self.use_pca:
            self.pca_ = fit_pca(standardized, self.variance_target)
        else:
            self.pca_ = None
        if self.use_seasonal:
            if len(standardized) < 2 * self.seasonal_period:
                raise DataError(
                    "not enough history for seasonal decomposition: "
                    f"{len(standardized)} < {2 * self.seasonal_period}"
                )
            patterns = np.empty((self.seasonal_period, self.raw_dim_))
            for col in range(self.raw_dim_):
                decomp = seasonal_decompose(standardized[:, col], self.seasonal_period)
                patterns[:, col] = decomp.pattern
            # pattern[p] is the seasonal value at slots congruent to
            # (start_index + p) mod period
            self.seasonal_patterns_ = np.roll(patterns, start_index % self.seasonal_period, axis=0)
        else:
            self.seasonal_patterns_ = None
        return self

    def _check_fitted(self):
        if not hasattr(self, "stats_"):
            raise NotFittedError("StreamPreprocessor is not fitted")

    # -- application --------------------------------------------------------

    @property
    def feature_dim_(self):
        self._check_fitted()
        base = self.pca_.n_components if self.pca_ is not None else self.raw_dim_
        seasonal = self.raw_dim_ if self.seasonal_patterns_ is not None else 0
        return base + seasonal

    def seasonal_at(self, index):
        """Seasonal feature values for global slot ``index`` (empty if off)."""
        self._check_fitted()
        if self.seasonal_patterns_ is None:
            return np.empty(0)
        return self.seasonal_patterns_[index % self.seasonal_period]

    def transform_normalized(self, X):
        """Fill missing values with fitted means and standardize.

        Streaming records are not clipped: outlier clipping is a fit-time
        cleaning rule, and flattening large excursions here would erase the
        very drifts and anomalies the detector must see.
        """
        self._check_fitted()
        X = check_matrix(X, "X")
        if X.shape[1] != self.raw_dim_:
            raise DataError(f"expected {self.raw_dim_} features, got {X.shape[1]}")
        out = X.copy()
        missing = ~np.isfinite(out)
        if missing.any():
            out[missing] = np.broadcast_to(self.clean_mean_, out.shape)[missing]
        return self.stats_.apply(out)

    def features_from_normalized(self, normalized, start_index=0):
        """Feature matrix for already-normalized records at consecutive slots."""
        self._check_fitted()
        normalized = check_matrix(normalized, "normalized")
        if self.pca_ is not None:
            base = self.pca_.transform(normalized)
        else:
            base = normalized
        if self.seasonal_patterns_ is None:
            return base
        idx = (start_index + np.arange(len(normalized))) % self.seasonal_period
        return np.hstack([base, self.seasonal_patterns_[idx]])

    def transform(self, X, start_index=0):
        """Raw records -> feature vectors (PCA output + seasonal values)."""
        normalized = self.transform_normalized(X)
        return self.features_from_normalized(normalized, start_index=start_index)

    def transform_record(self, record, index):
        """One raw record -> (normalized record, feature vector)."""
        normalized = self.transform_normalized(np.asarray(record)[None, :])[0]
        feature = self.features_from_normalized(normalized[None, :], start_index=index)[0]
        return normalized, feature

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        self._check_fitted()
        doc = {
            "format": PREPROCESSOR_FORMAT,
            "params": {
                "variance_target": self.variance_target,
                "seasonal_period": self.seasonal_period,
                "use_seasonal": self.use_seasonal,
                "use_pca": self.use_pca,
                "clip_sigma": self.clip_sigma,
            },
            "raw_dim": self.raw_dim_,
            "clean_mean": self.clean_mean_.tolist(),
            "clean_std": self.clean_std_.tolist(),
            "mean": self.stats_.mean.tolist(),
            "std": self.stats_.std.tolist(),
            "constant": self.stats_.constant.astype(int).tolist(),
            "correlation": self.correlation_.tolist(),
            "pca": None,
            "seasonal_patterns": None,
        }
        if self.pca_ is not None:
            doc["pca"] = {
                "components": self.pca_.components.tolist(),
                "eigenvalues": self.pca_.eigenvalues.tolist(),
                "all_eigenvalues": self.pca_.all_eigenvalues.tolist(),
                "variance_target": self.pca_.variance_target,
                "fitted_dim": self.pca_.fitted_dim,
            }
        if self.seasonal_patterns_ is not None:
            doc["seasonal_patterns"] = self.seasonal_patterns_.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != PREPROCESSOR_FORMAT:
            raise ConfigError(f"unsupported preprocessor format {doc.get('format')!r}")
        obj = cls(**doc["params"])
        obj.raw_dim_ = int(doc["raw_dim"])
        obj.clean_mean_ = np.asarray(doc["clean_mean"], dtype=np.float64)
        obj.clean_std_ = np.asarray(doc["clean_std"], dtype=np.float64)
        obj.stats_ = StandardizationStats(
            mean=np.asarray(doc["mean"], dtype=np.float64),
            std=np.asarray(doc["std"], dtype=np.float64),
            constant=np.asarray(doc["constant"], dtype=bool),
        )
        obj.correlation_ = np.asarray(doc["correlation"], dtype=np.float64)
        obj.pca_ = None
        if doc["pca"] is not None:
            p = doc["pca"]
            obj.pca_ = PcaModel(
                components=np.asarray(p["components"], dtype=np.float64),
                eigenvalues=np.asarray(p["eigenvalues"], dtype=np.float64),
                variance_target=p["variance_target"],
                fitted_dim=int(p["fitted_dim"]),
                all_eigenvalues=np.asarray(p["all_eigenvalues"], dtype=np.float64),
            )
        obj.seasonal_patterns_ = None
        if doc["seasonal_patterns"] is not None:
            obj.seasonal_patterns_ = np.asarray(doc["seasonal_patterns"], dtype=np.float64)
        return obj

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))
