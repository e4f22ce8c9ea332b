import numpy as np
import pytest

from cappool.pmf import N_BINS, bin_index, gaussian_pmf
from cappool.pool import (
    AdaptivePool,
    AdaptivePrior,
    EqualPool,
    StaticPool,
    em_pool_weights,
    fit_adaptive_weights,
    fit_static_weights,
    truth_bin_masses,
)

from conftest import point_mass, random_pmf


def _stack(pmf_lists):
    """Stack per-observation lists of (pmf | None) into a NaN-padded array."""
    n_obs = len(pmf_lists)
    n_models = len(pmf_lists[0])
    out = np.full((n_obs, n_models, N_BINS), np.nan)
    for j, row in enumerate(pmf_lists):
        for c, pmf in enumerate(row):
            if pmf is not None:
                out[j, c] = pmf
    return out


def _dominant_fixture():
    """Model A puts all mass on every truth bin; model B puts none."""
    truths = [1.0, 2.0, 3.0, 4.0]
    rows = []
    for t in truths:
        a = point_mass(bin_index(t))
        b = point_mass(bin_index(t) + 5)
        rows.append([a, b])
    return _stack(rows), np.array(truths)


class TestEmCore:
    def test_dominant_model_takes_all_weight(self):
        F, y = _dominant_fixture()
        fit = em_pool_weights(truth_bin_masses(F, y))
        assert fit.weights[0] >= 0.999
        assert fit.converged and fit.n_iter <= 10_000

    def test_identical_models_stay_at_equal_start(self):
        pmf = gaussian_pmf(2.0, 0.5)
        F = _stack([[pmf, pmf]] * 6)
        y = np.full(6, 2.0)
        fit = em_pool_weights(truth_bin_masses(F, y))
        assert np.allclose(fit.weights, [0.5, 0.5], atol=1e-12)

    def test_simplex_output(self, rng):
        f = rng.uniform(0.0, 1.0, size=(25, 6))
        fit = em_pool_weights(f)
        assert np.all(fit.weights >= 0.0)
        assert abs(fit.weights.sum() - 1.0) < 1e-9

    def test_objective_nondecreasing_path(self, rng):
        # run EM manually and track the objective at every iterate
        f = rng.uniform(0.0, 1.0, size=(40, 5))
        pi = np.full(5, 0.2)
        prev = float(np.log(f @ pi).sum())
        for _ in range(200):
            resp = (f * pi) / (f @ pi)[:, None]
            pi = resp.sum(axis=0) / resp.sum()
            obj = float(np.log(f @ pi).sum())
            assert obj >= prev - 1e-9
            prev = obj
        fit = em_pool_weights(f)
        assert fit.log_posterior >= prev - 1e-6

    def test_degenerate_all_zero(self):
        fit = em_pool_weights(np.zeros((10, 4)))
        assert fit.degenerate
        assert np.allclose(fit.weights, 0.25)

    def test_flat_prior_matches_mle(self):
        F, y = _dominant_fixture()
        f = truth_bin_masses(F, y)
        assert np.allclose(
            em_pool_weights(f, alpha=1.0).weights, em_pool_weights(f).weights
        )

    def test_huge_concentration_forces_uniform(self, rng):
        f = rng.uniform(0.0, 1.0, size=(30, 4))
        fit = em_pool_weights(f, alpha=1e9)
        assert np.allclose(fit.weights, 0.25, atol=1e-6)

    def test_interior_requirement(self, rng):
        f = rng.uniform(0.0, 1.0, size=(10, 3))
        with pytest.raises(ValueError):
            em_pool_weights(f, init=np.array([1.0, 0.0, 0.0]))
        with pytest.raises(ValueError):
            em_pool_weights(f, alpha=0.5)


class TestAdaptivePrior:
    def test_schedule_decays_to_flat(self):
        early = AdaptivePrior(week_index=1, season_weeks=33)
        late = AdaptivePrior(week_index=33, season_weeks=33)
        assert early.concentration == pytest.approx(1.0 + 5.0 * 32 / 33)
        assert late.concentration == 1.0

    def test_always_at_least_one(self):
        for t in range(1, 40):
            assert AdaptivePrior(week_index=t, season_weeks=33).concentration >= 1.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            AdaptivePrior(week_index=0, season_weeks=33)
        with pytest.raises(ValueError):
            AdaptivePrior(week_index=1, season_weeks=33, delta=-1.0)


class TestFitFunctions:
    def test_static_no_data_equal_weights(self):
        fit = fit_static_weights(np.empty((0, 7, N_BINS)), np.empty(0))
        assert fit.degenerate
        assert np.allclose(fit.weights, 1.0 / 7)

    def test_static_dominant(self):
        F, y = _dominant_fixture()
        assert fit_static_weights(F, y).weights[0] >= 0.999

    def test_adaptive_week_one_equal(self):
        F, y = _dominant_fixture()
        prior = AdaptivePrior(week_index=1, season_weeks=33)
        assert np.allclose(fit_adaptive_weights(F, y, prior).weights, 0.5)

    def test_adaptive_flat_prior_matches_static(self):
        F, y = _dominant_fixture()
        prior = AdaptivePrior(week_index=33, season_weeks=33)
        assert np.allclose(
            fit_adaptive_weights(F, y, prior).weights, fit_static_weights(F, y).weights
        )

    def test_single_model(self):
        F = _stack([[point_mass(10)]] * 3)
        fit = fit_static_weights(F, np.full(3, 1.0))
        assert fit.weights[0] == 1.0


class TestEstimators:
    def test_get_set_params_roundtrip(self):
        est = AdaptivePool(concentration=2.5, tol=1e-6, max_iter=500)
        params = est.get_params()
        assert params == {"concentration": 2.5, "tol": 1e-6, "max_iter": 500}
        clone = AdaptivePool(**params)
        assert clone.get_params() == params
        est.set_params(concentration=3.0)
        assert est.concentration == 3.0
        with pytest.raises(ValueError):
            est.set_params(bogus=1)

    def test_equal_pool_predicts_mean(self, rng):
        pmfs = [random_pmf(rng) for _ in range(3)]
        F = _stack([pmfs])
        out = EqualPool().fit(F).predict(F)
        assert np.allclose(out[0], np.mean(pmfs, axis=0), atol=1e-15)

    def test_missing_handled_by_renormalizing(self, rng):
        pmfs = [random_pmf(rng) for _ in range(3)]
        F = _stack([[pmfs[0], None, pmfs[2]]])
        out = EqualPool().fit(_stack([pmfs])).predict(F)
        assert np.allclose(out[0], 0.5 * pmfs[0] + 0.5 * pmfs[2], atol=1e-15)

    def test_static_pool_fit_predict(self):
        F, y = _dominant_fixture()
        est = StaticPool().fit(F, y)
        assert est.weights_[0] >= 0.999
        preds = est.predict(F)
        assert preds.shape == (4, N_BINS)
        assert np.allclose(preds.sum(axis=1), 1.0, atol=1e-9)

    def test_static_pool_model_count_checked(self):
        F, y = _dominant_fixture()
        est = StaticPool().fit(F, y)
        with pytest.raises(ValueError):
            est.predict(np.full((1, 3, N_BINS), np.nan))

    def test_adaptive_pool_tempering(self):
        F, y = _dominant_fixture()
        sharp = AdaptivePool(concentration=1.0).fit(F, y)
        tempered = AdaptivePool(concentration=50.0).fit(F, y)
        assert sharp.weights_[0] > tempered.weights_[0]
        assert tempered.weights_[0] > 0.5  # still favors the dominant model

    def test_no_available_forecast_gives_nan_row(self, rng):
        pmfs = [random_pmf(rng), random_pmf(rng)]
        est = EqualPool().fit(_stack([pmfs]))
        out = est.predict(_stack([[None, None]]))
        assert np.all(np.isnan(out[0]))

    def test_partial_nan_slice_rejected(self, rng):
        F = _stack([[random_pmf(rng)]])
        F[0, 0, 3] = np.nan
        with pytest.raises(ValueError):
            EqualPool().fit(F)
