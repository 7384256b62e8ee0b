import numpy as np
import pytest

from driftstream.errors import ConfigError, DataError
from driftstream.preprocess import (
    StreamPreprocessor,
    apply_pca,
    build_feature_vector,
    clean,
    fit_pca,
    fit_standardize,
    pearson_matrix,
    seasonal_decompose,
)


def charpoly_eigenvalues(A):
    """Brute-force eigenvalues via the characteristic polynomial
    (Faddeev-LeVerrier coefficients + root finding)."""
    n = len(A)
    Mk = np.eye(n)
    coeffs = [1.0]
    for k in range(1, n + 1):
        AM = A @ Mk
        ck = -np.trace(AM) / k
        coeffs.append(ck)
        Mk = AM + ck * np.eye(n)
    return np.sort(np.roots(coeffs).real)[::-1]


class TestClean:
    def test_forward_fill(self):
        col = np.array([[5.0], [np.nan], [7.0]])
        assert clean(col)[:, 0].tolist() == [5.0, 5.0, 7.0]

    def test_leading_gap_takes_mean(self):
        col = np.array([[np.nan], [3.0]])
        assert clean(col)[:, 0].tolist() == [3.0, 3.0]

    def test_clip_rule(self):
        # hand-built column with a spike; the bound is mean + 4*std of the
        # filled column, evaluated directly here as the oracle
        col = np.concatenate([np.zeros(99), [9.0]])[:, None]
        m, s = col.mean(), col.std()
        out = clean(col)
        assert out.max() == pytest.approx(m + 4 * s)
        assert out[:99, 0].tolist() == [0.0] * 99

    def test_all_missing_column_errors(self):
        X = np.column_stack([np.ones(5), np.full(5, np.nan)])
        with pytest.raises(DataError, match="column 1"):
            clean(X)

    def test_order_and_length_preserved(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 3))
        X[7, 1] = np.nan
        out = clean(X)
        assert out.shape == X.shape
        assert np.array_equal(out[:, 0], X[:, 0])


class TestStandardize:
    def test_hand_computed(self):
        # oracle: population mean/std computed longhand
        stats, out = fit_standardize(np.array([[2.0], [4.0], [6.0]]))
        sigma = np.sqrt(((2 - 4) ** 2 + 0 + (6 - 4) ** 2) / 3)
        assert stats.mean[0] == pytest.approx(4.0)
        assert stats.std[0] == pytest.approx(sigma)
        np.testing.assert_allclose(out[:, 0], [-2 / sigma, 0.0, 2 / sigma])

    def test_constant_feature_passes_through_as_zero(self):
        stats, out = fit_standardize(np.full((3, 1), 5.0))
        assert out[:, 0].tolist() == [0.0, 0.0, 0.0]
        assert stats.std[0] == 1.0
        assert stats.constant[0]

    def test_idempotent_on_standardized_data(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(200, 2))
        _, once = fit_standardize(X)
        _, twice = fit_standardize(once)
        np.testing.assert_allclose(twice, once, atol=1e-9)

    def test_fit_data_has_zero_mean_unit_std(self):
        rng = np.random.default_rng(2)
        X = rng.normal(3.0, 2.5, size=(300, 4))
        _, out = fit_standardize(X)
        assert np.abs(out.mean(axis=0)).max() < 1e-9
        assert np.abs(out.std(axis=0) - 1).max() < 1e-9


class TestPearson:
    def test_self_correlation_is_one(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=100)
        corr = pearson_matrix(np.column_stack([x, x * 2 + 1]))
        assert corr[0, 0] == 1.0
        assert corr[0, 1] == pytest.approx(1.0)

    def test_perfect_anticorrelation(self):
        x = np.linspace(0, 1, 50)
        corr = pearson_matrix(np.column_stack([x, -x]))
        assert corr[0, 1] == pytest.approx(-1.0)

    def test_hand_computed_value(self):
        # cov([1,2,3],[1,3,2]) = 1/3, stds sqrt(2/3) -> rho = 0.5
        corr = pearson_matrix(np.array([[1.0, 1.0], [2.0, 3.0], [3.0, 2.0]]))
        assert corr[0, 1] == pytest.approx(0.5)

    def test_zero_variance_feature(self):
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        corr = pearson_matrix(X)
        assert corr[0, 0] == 1.0
        assert corr[0, 1] == 0.0

    def test_positive_semidefinite(self):
        rng = np.random.default_rng(4)
        corr = pearson_matrix(rng.normal(size=(80, 6)))
        assert np.linalg.eigvalsh(corr).min() >= -1e-10


class TestPca:
    def test_isotropic_keeps_all(self):
        # exact identity sample covariance: +/- scaled basis vectors
        D, a = 3, 2.0
        X = np.vstack([np.eye(D) * a, -np.eye(D) * a])
        model = fit_pca(X, variance_target=1.0)
        assert model.n_components == D
        np.testing.assert_allclose(model.eigenvalues,
                                   model.eigenvalues[0] * np.ones(D))

    def test_rank_one_data(self):
        x = np.linspace(-1, 1, 40)
        model = fit_pca(np.column_stack([x, x]), variance_target=0.95)
        assert model.n_components == 1
        frac = model.eigenvalues[0] / model.all_eigenvalues.sum()
        assert frac == pytest.approx(1.0)

    @pytest.mark.parametrize("dim", [3, 4])
    def test_eigenvalues_match_charpoly_roots(self, dim):
        rng = np.random.default_rng(10 + dim)
        X = rng.normal(size=(60, dim)) @ rng.normal(size=(dim, dim))
        model = fit_pca(X, variance_target=1.0)
        centered = X - X.mean(axis=0)
        cov = centered.T @ centered / (len(X) - 1)
        expected = charpoly_eigenvalues(cov)
        np.testing.assert_allclose(model.all_eigenvalues, expected, atol=1e-8)

    def test_variance_target_validation(self):
        X = np.random.default_rng(0).normal(size=(20, 2))
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(ConfigError):
                fit_pca(X, variance_target=bad)

    def test_sign_convention(self):
        rng = np.random.default_rng(5)
        model = fit_pca(rng.normal(size=(50, 4)), variance_target=1.0)
        for row in model.components:
            assert row[np.argmax(np.abs(row))] > 0

    def test_components_orthonormal(self):
        rng = np.random.default_rng(6)
        model = fit_pca(rng.normal(size=(100, 5)), variance_target=1.0)
        gram = model.components @ model.components.T
        np.testing.assert_allclose(gram, np.eye(model.n_components), atol=1e-8)

    def test_round_trip_full_rank(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(80, 4))
        model = fit_pca(X, variance_target=1.0)
        centered = X - X.mean(axis=0)
        reduced = model.transform(centered)
        np.testing.assert_allclose(model.inverse_transform(reduced), centered,
                                   atol=1e-8)


class TestApplyPca:
    def _model(self, dim=4, comps=2, seed=8):
        rng = np.random.default_rng(seed)
        return fit_pca(rng.normal(size=(50, dim)), variance_target=1.0), rng

    def test_aligned_record(self):
        model, _ = self._model()
        v = model.components[0]
        out = apply_pca(model, v)
        assert out[0] == pytest.approx(1.0)
        np.testing.assert_allclose(out[1:], 0.0, atol=1e-10)

    def test_zero_vector(self):
        model, _ = self._model()
        np.testing.assert_array_equal(apply_pca(model, np.zeros(4)), np.zeros(4))

    def test_matches_explicit_dot_products(self):
        model, rng = self._model()
        record = rng.normal(size=4)
        expected = [float(model.components[k] @ record)
                    for k in range(model.n_components)]
        np.testing.assert_allclose(apply_pca(model, record)[: len(expected)],
                                   expected, atol=1e-12)

    def test_dimension_mismatch(self):
        model, _ = self._model()
        with pytest.raises(DataError):
            apply_pca(model, np.zeros(5))

    def test_linearity(self):
        model, rng = self._model()
        x, y = rng.normal(size=4), rng.normal(size=4)
        a, b = 1.7, -0.3
        lhs = apply_pca(model, a * x + b * y)
        rhs = a * apply_pca(model, x) + b * apply_pca(model, y)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def reference_decompose(series, period):
    """Independent straightforward implementation of the additive rules."""
    n = len(series)
    trend = np.full(n, np.nan)
    half = period // 2
    if period % 2 == 0:
        for t in range(half, n - half):
            window = series[t - half : t + half + 1].copy()
            window[0] *= 0.5
            window[-1] *= 0.5
            trend[t] = window.sum() / period
    else:
        for t in range(half, n - half):
            trend[t] = series[t - half : t + half + 1].mean()
    detrended = series - trend
    phase = np.zeros(period)
    for p in range(period):
        vals = [detrended[i] for i in range(p, n, period)
                if np.isfinite(detrended[i])]
        phase[p] = np.mean(vals)
    phase -= phase.mean()
    seasonal = np.array([phase[i % period] for i in range(n)])
    residual = series - trend - seasonal
    return trend, seasonal, residual


class TestSeasonalDecompose:
    def test_pure_sine(self):
        t = np.arange(96)
        series = np.sin(2 * np.pi * t / 24)
        d = seasonal_decompose(series, 24)
        np.testing.assert_allclose(d.seasonal, series, atol=1e-6)
        ok = np.isfinite(d.trend)
        np.testing.assert_allclose(d.residual[ok], 0.0, atol=1e-6)

    def test_constant_series(self):
        d = seasonal_decompose(np.full(50, 3.0), 4)
        ok = np.isfinite(d.trend)
        np.testing.assert_allclose(d.trend[ok], 3.0)
        np.testing.assert_allclose(d.seasonal, 0.0, atol=1e-12)
        np.testing.assert_allclose(d.residual[ok], 0.0, atol=1e-12)

    def test_ramp_plus_square_wave(self):
        t = np.arange(64)
        square = np.array([1.0, 1.0, -1.0, -1.0])[t % 4]
        series = 0.05 * t + square
        d = seasonal_decompose(series, 4)
        ok = np.isfinite(d.trend)
        np.testing.assert_allclose(d.seasonal[ok], square[ok], atol=1e-6)

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(11)
        series = rng.normal(size=120) + np.tile(rng.normal(size=6), 20)
        d = seasonal_decompose(series, 6)
        trend, seasonal, residual = reference_decompose(series, 6)
        np.testing.assert_allclose(d.trend, trend, atol=1e-9, equal_nan=True)
        np.testing.assert_allclose(d.seasonal, seasonal, atol=1e-9)
        np.testing.assert_allclose(d.residual, residual, atol=1e-9, equal_nan=True)

    def test_additivity(self):
        rng = np.random.default_rng(12)
        series = rng.normal(size=100)
        d = seasonal_decompose(series, 10)
        ok = np.isfinite(d.trend)
        recon = d.trend[ok] + d.seasonal[ok] + d.residual[ok]
        np.testing.assert_allclose(recon, series[ok], atol=1e-9)

    def test_exact_periodicity_and_zero_sum(self):
        rng = np.random.default_rng(13)
        d = seasonal_decompose(rng.normal(size=80), 8)
        np.testing.assert_allclose(d.seasonal[:8].sum(), 0.0, atol=1e-9)
        for i in range(len(d.seasonal)):
            assert d.seasonal[i] == d.seasonal[i % 8]

    def test_too_short_errors(self):
        with pytest.raises(DataError):
            seasonal_decompose(np.arange(7.0), 4)


class TestBuildFeatureVector:
    def test_concatenation(self):
        out = build_feature_vector(np.array([1.0, 2.0]), np.array([0.5]))
        assert out.tolist() == [1.0, 2.0, 0.5]

    def test_seasonal_disabled(self):
        out = build_feature_vector(np.array([1.0, 2.0]), None)
        assert out.tolist() == [1.0, 2.0]
        out = build_feature_vector(np.array([1.0]), np.empty(0))
        assert out.tolist() == [1.0]

    def test_lengths(self):
        out = build_feature_vector(np.zeros(3), np.zeros(2))
        assert out.shape == (5,)


class TestStreamPreprocessor:
    def _fit(self, seed=20, n=200, d=4, **kwargs):
        rng = np.random.default_rng(seed)
        t = np.arange(n)
        X = np.column_stack([
            np.sin(2 * np.pi * (t + 3 * j) / 24) + rng.normal(0, 0.2, n) + j
            for j in range(d)
        ])
        pp = StreamPreprocessor(seasonal_period=24, **kwargs).fit(X)
        return pp, X

    def test_feature_dim(self):
        pp, _ = self._fit()
        base = pp.pca_.n_components
        assert pp.feature_dim_ == base + 4

    def test_transform_shapes(self):
        pp, X = self._fit()
        feats = pp.transform(X)
        assert feats.shape == (len(X), pp.feature_dim_)

    def test_transform_record_matches_batch(self):
        pp, X = self._fit()
        batch = pp.transform(X, start_index=0)
        norm, feat = pp.transform_record(X[7], 7)
        np.testing.assert_allclose(feat, batch[7], atol=1e-12)
        np.testing.assert_allclose(norm, pp.transform_normalized(X)[7])

    def test_seasonal_lookup_is_periodic(self):
        pp, _ = self._fit()
        np.testing.assert_array_equal(pp.seasonal_at(3), pp.seasonal_at(3 + 24))

    def test_json_round_trip(self):
        pp, X = self._fit()
        clone = StreamPreprocessor.from_json(pp.to_json())
        np.testing.assert_array_equal(clone.transform(X, 5), pp.transform(X, 5))
        np.testing.assert_array_equal(clone.stats_.mean, pp.stats_.mean)
        np.testing.assert_array_equal(clone.pca_.components, pp.pca_.components)

    def test_no_pca_mode(self):
        pp, X = self._fit(use_pca=False)
        assert pp.pca_ is None
        assert pp.feature_dim_ == 8

    def test_dimension_guard(self):
        pp, _ = self._fit()
        with pytest.raises(DataError):
            pp.transform_normalized(np.zeros((3, 5)))

    def test_concurrent_transform_is_consistent(self):
        import threading

        pp, X = self._fit()
        expected = pp.transform(X, 0)
        results = [None] * 4

        def worker(slot):
            results[slot] = pp.transform(X, 0)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        for got in results:
            np.testing.assert_array_equal(got, expected)
