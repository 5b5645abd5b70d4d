import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp
from scipy.stats import norm

from guidecast import forecaster as fc
from guidecast import lowrank_gauss as lg
from guidecast.cvae import CvaeModel
from guidecast.errors import ConfigError, StateError

from oracles import dense_gauss_logpdf, order_stat_quantile


def unit_mixture(means):
    """1-D mixture of N(m, 1) components: the dictionary part is switched off."""
    means = np.asarray(means, dtype=float).reshape(-1, 1)
    return fc.ForecastMixture(means, np.zeros((len(means), 1)), np.ones((1, 1)), 1.0)


def random_mixture(rng, S=5, T=4, V=3):
    return fc.ForecastMixture(
        rng.normal(size=(S, T)), rng.uniform(0.2, 1.0, size=(S, V)), rng.normal(size=(T, V)), 0.1
    )


def small_model(seed=0):
    return CvaeModel.create(4, 3, latent_dim=2, dict_size=3, hidden=(5,), jitter=0.05,
                            rng=np.random.default_rng(seed))


def test_single_component_equals_gaussian():
    rng = np.random.default_rng(0)
    m = random_mixture(rng, S=1)
    x = rng.normal(size=4)
    g = m.component(0)
    assert fc.mixture_log_density(m, x) == pytest.approx(dense_gauss_logpdf(x, g.mu, g.covariance()), abs=1e-10)


def test_identical_components_collapse():
    rng = np.random.default_rng(1)
    one = random_mixture(rng, S=1)
    many = fc.ForecastMixture(np.repeat(one.means, 7, 0), np.repeat(one.aux_std, 7, 0), one.dict, one.jitter)
    x = rng.normal(size=4)
    assert fc.mixture_log_density(many, x) == pytest.approx(fc.mixture_log_density(one, x), abs=1e-12)


def test_two_component_midpoint():
    m = unit_mixture([0.0, 2.0])
    assert fc.mixture_log_density(m, [1.0]) == pytest.approx(norm.logpdf(1.0), abs=1e-12)


def test_matches_naive_sum():
    rng = np.random.default_rng(2)
    m = random_mixture(rng, S=6)
    x = rng.normal(size=4)
    naive = np.log(np.mean([np.exp(dense_gauss_logpdf(x, g.mu, g.covariance())) for g in m.components]))
    assert fc.mixture_log_density(m, x) == pytest.approx(naive, abs=1e-10)


def test_far_tail_stays_finite():
    m = unit_mixture([0.0, 1.0])
    val = fc.mixture_log_density(m, [60.0])
    assert np.isfinite(val)
    assert val == pytest.approx(logsumexp(norm.logpdf(60.0, [0.0, 1.0])) - np.log(2), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_mixture_between_component_bounds(seed):
    rng = np.random.default_rng(seed)
    m = random_mixture(rng)
    x = rng.normal(size=4)
    comp = m.component_log_densities(x)
    val = fc.mixture_log_density(m, x)
    assert comp.max() - np.log(m.n_components) - 1e-12 <= val <= comp.max() + 1e-12


def test_component_weights_equal():
    m = unit_mixture([-10.0, 10.0])
    ens = fc.sample_ensemble(m, np.random.default_rng(0), 10_000)
    assert abs(np.mean(ens.samples[:, 0] > 0) - 0.5) < 0.02
    np.testing.assert_array_equal(ens.samples[:, 0] > 0, ens.components == 1)


def test_ensemble_mean():
    rng = np.random.default_rng(3)
    m = random_mixture(rng, S=4)
    ens = fc.sample_ensemble(m, np.random.default_rng(4), 40_000)
    sd = np.sqrt(np.diag(m.component(0).covariance())).max() + np.abs(m.means).max()
    assert np.max(np.abs(ens.samples.mean(0) - m.mean())) < 4 * sd / np.sqrt(40_000)


def test_default_ensemble_one_per_component():
    m = random_mixture(np.random.default_rng(5), S=9)
    ens = fc.sample_ensemble(m, np.random.default_rng(0))
    np.testing.assert_array_equal(ens.components, np.arange(9))


def test_ensemble_covariance_matches_component():
    m = random_mixture(np.random.default_rng(6), S=1)
    ens = fc.sample_ensemble(m, np.random.default_rng(0), 50_000)
    np.testing.assert_allclose(np.cov(ens.samples.T), m.component(0).covariance(), atol=0.06)


def test_quantiles_small_set():
    ens = np.array([[3.0], [1.0], [4.0], [2.0]])
    fan = fc.empirical_quantiles(ens, [0.25, 0.5, 0.75, 0.76])
    np.testing.assert_array_equal(fan.values[:, 0], [1.0, 2.0, 3.0, 4.0])


def test_quantiles_against_brute_force():
    rng = np.random.default_rng(7)
    levels = np.array([0.05, 0.1, 0.25, 0.3, 0.5, 0.7, 0.75, 0.9, 0.95])
    for _ in range(1000):
        S = int(rng.integers(1, 40))
        vals = rng.normal(size=(S, 1))
        if rng.random() < 0.3:
            vals = np.round(vals)  # ties
        fan = fc.empirical_quantiles(vals, levels)
        for q, got in zip(levels, fan.values[:, 0]):
            assert got == order_stat_quantile(vals[:, 0], q)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), S=st.integers(1, 50))
def test_fan_monotone(seed, S):
    rng = np.random.default_rng(seed)
    levels = np.sort(rng.uniform(0.01, 0.99, size=7))
    fan = fc.empirical_quantiles(rng.normal(size=(S, 3)), levels)
    assert np.all(np.diff(fan.values, axis=0) >= 0)


def test_quantiles_reject_bad_levels():
    with pytest.raises(ConfigError):
        fc.empirical_quantiles(np.zeros((3, 1)), [0.5, 0.2])
    with pytest.raises(ConfigError):
        fc.empirical_quantiles(np.zeros((3, 1)), [0.0, 0.5])
    with pytest.raises(ConfigError):
        fc.empirical_quantiles(np.zeros((0, 1)), [0.5])


def test_fan_calibration():
    m = unit_mixture([0.0])
    ens = fc.sample_ensemble(m, np.random.default_rng(8), 10_000)
    levels = np.array([0.05, 0.25, 0.5, 0.75, 0.95])
    fan = fc.empirical_quantiles(ens, levels)
    np.testing.assert_allclose(norm.cdf(fan.values[:, 0]), levels, atol=0.02)


def test_best_trace_nearest():
    ens = fc.Ensemble(np.array([[-1.0], [0.5], [3.0]]), np.arange(3))
    i, row = fc.best_trace(ens, [0.0])
    assert i == 1 and row[0] == 0.5


def test_best_trace_tie_lowest_index():
    ens = fc.Ensemble(np.array([[-1.0], [1.0]]), np.arange(2))
    assert fc.best_trace(ens, [0.0])[0] == 0


def test_best_component_highest_density():
    m = unit_mixture([0.0, 5.0])
    i, g = fc.best_component(m, [0.1])
    assert i == 0 and g.mu[0] == 0.0


def test_sigma_fan_unit_variance():
    g = lg.LowRankGaussian(np.array([1.0, -2.0]), np.zeros((2, 1)), np.ones(1), 1.0)
    out = fc.sigma_fan(g, [0.5, 1.0, 2.0])
    np.testing.assert_allclose(out, [[1.5, -1.5], [2.0, -1.0], [3.0, 0.0]])


def test_sigma_fan_zero_alpha_is_mean():
    g = random_mixture(np.random.default_rng(9), S=1).component(0)
    np.testing.assert_array_equal(fc.sigma_fan(g, [0.0])[0], g.mu)


def test_sigma_fan_uses_marginal_std():
    g = random_mixture(np.random.default_rng(10), S=1).component(0)
    np.testing.assert_allclose(fc.sigma_fan(g, [1.0])[0] - g.mu, np.sqrt(np.diag(g.covariance())), rtol=1e-12)


def test_build_mixture_checks_inputs():
    m = small_model()
    with pytest.raises(StateError):
        fc.build_mixture(None, np.zeros(3), 5, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        fc.build_mixture(m, np.zeros(4), 5, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        fc.build_mixture(m, np.zeros(3), 0, np.random.default_rng(0))


def test_forecast_day_deterministic():
    m = small_model()
    c = np.array([0.1, -0.2, 0.3])
    a = fc.forecast_day(m, c, [0.1, 0.5, 0.9], 20, np.random.default_rng(11))
    b = fc.forecast_day(m, c, [0.1, 0.5, 0.9], 20, np.random.default_rng(11))
    np.testing.assert_array_equal(a.ensemble.samples, b.ensemble.samples)
    np.testing.assert_array_equal(a.fan.values, b.fan.values)


def test_forecast_ignores_truth():
    m = small_model()
    c = np.array([0.1, -0.2, 0.3])
    levels = [0.1, 0.5, 0.9]
    plain = fc.forecast_day(m, c, levels, 20, np.random.default_rng(12))
    for truth in (np.zeros(4), np.full(4, 100.0)):
        with_truth = fc.forecast_day(m, c, levels, 20, np.random.default_rng(12), truth=truth)
        np.testing.assert_array_equal(plain.mixture.means, with_truth.mixture.means)
        np.testing.assert_array_equal(plain.ensemble.samples, with_truth.ensemble.samples)
        np.testing.assert_array_equal(plain.fan.values, with_truth.fan.values)


def test_forecast_day_views():
    m = small_model()
    truth = np.array([0.0, 1.0, 0.5, -0.5])
    out = fc.forecast_day(m, np.zeros(3), [0.25, 0.5, 0.75], 30, np.random.default_rng(13), truth=truth)
    assert out.fan.values.shape == (3, 4)
    assert out.sigma_fan.shape == (len(fc.DEFAULT_ALPHAS), 4)
    assert out.band.shape == (7, 4)
    d = np.sum((out.ensemble.samples - truth) ** 2, axis=1)
    assert np.sum((out.best_trace - truth) ** 2) == d.min()


def test_mixture_roundtrip():
    m = random_mixture(np.random.default_rng(14))
    back = fc.ForecastMixture.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.means, m.means)
    np.testing.assert_array_equal(back.aux_std, m.aux_std)
    np.testing.assert_array_equal(back.dict, m.dict)
