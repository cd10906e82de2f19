import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import multivariate_normal, norm

from conftest import make_dataset
from ttc.dataset import DataError, LabeledDataset, TimeSeries
from ttc.dpgmm import DpgmmModel, dpgmm_loglik, fit_dpgmm
from ttc.encode import (
    DPGMM_MULTI,
    DPGMM_UNI,
    ZNORM_ALL,
    ZNORM_SELF,
    DpgmmConfig,
    EncoderModel,
    encode,
    fit_encoder,
)


def _random_model(rng, K=5, D=3, full=False):
    w = rng.dirichlet(np.ones(K))
    mu = rng.normal(0, 3, (K, D))
    if full:
        A = rng.normal(size=(K, D, D))
        cov = A @ np.transpose(A, (0, 2, 1)) + 0.5 * np.eye(D)
        return DpgmmModel(w, mu, cov, "full")
    return DpgmmModel(w, mu, rng.uniform(0.3, 2.0, (K, D)), "diag")


def _direct_density(model, x):
    total = 0.0
    for k in range(model.n_components):
        if model.covariance_type == "diag":
            dens = np.prod(norm.pdf(x, model.means[k], np.sqrt(model.covariances[k])))
        else:
            dens = multivariate_normal(model.means[k], model.covariances[k]).pdf(x)
        total += model.weights[k] * dens
    return math.log(total)


class TestLoglik:
    def test_standard_normal(self):
        m = DpgmmModel([1.0], [[0.0]], [[1.0]])
        assert dpgmm_loglik(m, [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
        assert dpgmm_loglik(m, [0.0]) == pytest.approx(-0.9189385332, abs=1e-9)

    def test_symmetric_components(self):
        m = DpgmmModel([0.5, 0.5], [[-10.0], [10.0]], [[1.0], [1.0]])
        assert dpgmm_loglik(m, [-10.0]) == pytest.approx(dpgmm_loglik(m, [10.0]), abs=1e-12)

    @pytest.mark.parametrize("full", [False, True])
    def test_matches_direct_summation(self, full):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(100):
            m = _random_model(rng, full=full)
            x = m.means[rng.integers(5)] + rng.normal(size=3)
            worst = max(worst, abs(dpgmm_loglik(m, x) - _direct_density(m, x)))
        assert worst <= 1e-10

    def test_dimension_mismatch(self):
        m = DpgmmModel([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
        with pytest.raises(ValueError):
            dpgmm_loglik(m, [0.0])

    def test_weights_on_simplex(self):
        with pytest.raises(ValueError):
            DpgmmModel([0.5, 0.6], [[0.0], [1.0]], [[1.0], [1.0]])

    def test_positive_variances(self):
        with pytest.raises(ValueError):
            DpgmmModel([1.0], [[0.0]], [[0.0]])

    def test_mode_beats_three_sigma(self):
        m = DpgmmModel([0.3, 0.7], [[0.0], [20.0]], [[4.0], [1.0]])
        assert dpgmm_loglik(m, [0.0]) >= dpgmm_loglik(m, [6.0])
        assert np.argmax(m.responsibilities([[0.0]])) == np.argmax(m.responsibilities([[6.0]]))


@pytest.fixture(scope="module")
def bimodal():
    rng = np.random.default_rng(0)
    return np.concatenate([rng.normal(-5, 1, 500), rng.normal(5, 1, 500)])


class TestFit:
    def test_recovers_two_components(self, bimodal):
        from sklearn.mixture import GaussianMixture

        m = fit_dpgmm(bimodal, n_components=10, seed=0)
        big = np.flatnonzero(m.weights > 0.05)
        assert len(big) == 2
        ours = np.sort(m.means[big, 0])
        oracle = np.sort(GaussianMixture(2, random_state=0).fit(bimodal[:, None]).means_[:, 0])
        assert np.all(np.abs(ours - np.array([-5, 5])) < 0.3)
        assert np.all(np.abs(ours - oracle) < 0.3)

    def test_elbo_non_decreasing(self, bimodal):
        m = fit_dpgmm(bimodal, n_components=10, seed=1)
        h = np.array(m.elbo_history)
        assert len(h) >= 2
        assert np.all(np.diff(h) >= -1e-6 * np.maximum(1.0, np.abs(h[:-1])))

    def test_elbo_non_decreasing_full(self):
        rng = np.random.default_rng(3)
        X = np.vstack([rng.multivariate_normal([0, 0], [[1, 0.8], [0.8, 1]], 300), rng.normal(4, 0.5, (300, 2))])
        m = fit_dpgmm(X, n_components=8, covariance_type="full", seed=2)
        h = np.array(m.elbo_history)
        assert np.all(np.diff(h) >= -1e-6 * np.maximum(1.0, np.abs(h[:-1])))
        assert np.all(np.linalg.eigvalsh(m.covariances) > 0)

    def test_responsibilities_sum_to_one(self, bimodal):
        m = fit_dpgmm(bimodal, n_components=10, seed=0)
        r = m.responsibilities(bimodal[:, None])
        assert np.max(np.abs(r.sum(axis=1) - 1)) < 1e-9

    def test_deterministic(self, bimodal):
        a = fit_dpgmm(bimodal, n_components=6, seed=4)
        b = fit_dpgmm(bimodal, n_components=6, seed=4)
        assert np.array_equal(a.means, b.means) and np.array_equal(a.weights, b.weights)

    def test_constant_dimension_rejected(self):
        with pytest.raises(ValueError):
            fit_dpgmm(np.ones(50))

    def test_serialization_round_trip(self, bimodal):
        m = fit_dpgmm(bimodal, n_components=4, seed=0)
        back = DpgmmModel.from_dict(m.to_dict())
        x = np.linspace(-8, 8, 17)[:, None]
        assert np.array_equal(m.loglik(x), back.loglik(x))


class TestEncoder:
    def test_znorm_all_hand_arithmetic(self):
        a = TimeSeries("a", [[0.0], [2.0]], ("s",))
        b = TimeSeries("b", [[4.0], [6.0]], ("s",))
        enc = fit_encoder(LabeledDataset((a, b), [0, 1]), ZNORM_ALL)
        assert enc.means[0] == pytest.approx(3.0)
        assert enc.stds[0] ** 2 == pytest.approx(5.0)

    def test_znorm_all_zero_variance_names_sensor(self):
        a = TimeSeries("a", [[1.0, 0.0], [1.0, 1.0]], ("flat", "ok"))
        with pytest.raises(DataError, match="flat"):
            fit_encoder(LabeledDataset((a,), [0]), ZNORM_ALL)

    def test_znorm_self_moments(self, toy):
        enc = fit_encoder(toy, ZNORM_SELF)
        for s in toy.series:
            z = encode(enc, s).channels
            assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
            assert np.all(np.abs(z.var(axis=0) - 1) < 1e-9)

    def test_znorm_self_constant_channel_zero(self):
        s = TimeSeries("a", np.column_stack([np.ones(5), np.arange(5.0)]), ("c", "v"))
        enc = fit_encoder(LabeledDataset((s,), [0]), ZNORM_SELF)
        assert np.all(encode(enc, s).channels[:, 0] == 0)

    @given(
        arrays(np.float64, (12, 2), elements=st.floats(-100, 100)),
        st.floats(0.1, 10),
        st.floats(-50, 50),
    )
    def test_znorm_all_affine_equivariance(self, X, a, b):
        X = X + np.arange(24).reshape(12, 2) * 0.37  # keep both columns non-constant
        ds = LabeledDataset((TimeSeries("u", X, ("p", "q")),), [0])
        moved = LabeledDataset((TimeSeries("u", a * X + b, ("p", "q")),), [0])
        z0 = encode(fit_encoder(ds, ZNORM_ALL), ds.series[0]).channels
        z1 = encode(fit_encoder(moved, ZNORM_ALL), moved.series[0]).channels
        assert np.allclose(z0, z1, atol=1e-8)

    @pytest.mark.parametrize("kind", [ZNORM_SELF, ZNORM_ALL, DPGMM_UNI, DPGMM_MULTI])
    def test_row_permutation_equivariance(self, kind):
        ds = make_dataset(n_per_class=3, T=40, M=2)
        enc = fit_encoder(ds, kind, DpgmmConfig(n_components=5, max_iter=100))
        s = ds.series[0]
        perm = np.random.default_rng(0).permutation(s.length)
        shuffled = TimeSeries(s.unit_id, s.values[perm], s.sensor_names)
        assert np.allclose(encode(enc, s).channels[perm], encode(enc, shuffled).channels, atol=1e-12)

    def test_channel_counts(self):
        ds = make_dataset(n_per_class=3, T=40, M=3)
        cfg = DpgmmConfig(n_components=4, max_iter=100)
        assert encode(fit_encoder(ds, DPGMM_UNI, cfg), ds.series[0]).channels.shape == (40, 3)
        assert encode(fit_encoder(ds, DPGMM_MULTI, cfg), ds.series[0]).channels.shape == (40, 1)

    def test_multivariate_with_one_sensor_equals_univariate(self):
        ds = make_dataset(n_per_class=4, T=50, M=1)
        cfg = DpgmmConfig(n_components=6, max_iter=200)
        u = fit_encoder(ds, DPGMM_UNI, cfg)
        m = fit_encoder(ds, DPGMM_MULTI, cfg)
        for s in ds.series:
            assert np.max(np.abs(encode(u, s).channels - encode(m, s).channels)) < 1e-6

    def test_healthy_only_fits_on_label_zero(self):
        ds = make_dataset(n_per_class=4, T=50, M=1, shift=8.0)
        enc = fit_encoder(ds, DPGMM_UNI, DpgmmConfig(n_components=5, healthy_only=True))
        mix = enc.mixtures[0]
        assert np.all(mix.means[mix.weights > 0.05, 0] < 3)

    def test_mismatched_sensors(self, toy):
        enc = fit_encoder(toy, ZNORM_ALL)
        other = TimeSeries("x", np.zeros((3, 2)), ("a", "b"))
        with pytest.raises(DataError):
            encode(enc, other)

    @pytest.mark.parametrize("kind", [ZNORM_SELF, ZNORM_ALL, DPGMM_UNI, DPGMM_MULTI])
    def test_round_trip_and_determinism(self, kind):
        ds = make_dataset(n_per_class=3, T=30, M=2)
        enc = fit_encoder(ds, kind, DpgmmConfig(n_components=4, max_iter=100))
        back = EncoderModel.from_dict(enc.to_dict())
        for s in ds.series:
            a = encode(enc, s).channels
            assert np.array_equal(a, encode(back, s).channels)
            assert np.array_equal(a, encode(enc, s).channels)

    def test_kind_fields_populated(self, toy):
        assert fit_encoder(toy, "S").means is None
        assert fit_encoder(toy, "A").mixtures == ()
        with pytest.raises(ValueError):
            EncoderModel(ZNORM_ALL, ("a",))
