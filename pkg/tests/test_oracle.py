import math

import numpy as np
import pytest
from scipy.stats import norm

from pnpula import oracle
from pnpula.errors import ConfigError, SupportError, TailUnderflowError
from pnpula.operators import make_box_blur


def _gauss(mean=0.0, var=1.0):
    return lambda p: np.exp(-(p[:, 0] - mean) ** 2 / (2 * var))


def test_grid_density_normalization_and_point_mass():
    g = oracle.GridDensity.from_function(_gauss(), (-10, 10), 2001)
    assert g.mass() == pytest.approx(1.0, abs=1e-12)
    assert g.values.max() == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-6)
    assert g.boundary_ratio() < 1e-20
    d = oracle.point_mass((-1, 1), 101, at=0.3)
    assert d.mass() == pytest.approx(1.0)


def test_smoothed_gaussian_prior_is_wider_gaussian():
    g = oracle.GridDensity.from_function(_gauss(0.0, 1.0), (-12, 12), 4097)
    s = oracle.grid_smoothed_prior(g, 0.5)
    x = g.axes[0]
    expect = norm.pdf(x, 0, math.sqrt(1.5))
    assert np.max(np.abs(s.values - expect)) < 1e-6
    x_pts = np.array([-2.0, 0.0, 1.5])
    assert np.allclose(oracle.log_smoothed_density(g, 0.5, x_pts), norm.logpdf(x_pts, 0, math.sqrt(1.5)), atol=1e-8)


def test_smoothing_on_narrow_support_is_refused():
    g = oracle.GridDensity.from_function(_gauss(0.0, 1.0), (-3, 3), 601)
    with pytest.raises(SupportError):
        oracle.grid_smoothed_prior(g, 1.0)


def test_denoising_posterior_for_gaussian_prior():
    s2, eps = 0.7, 0.2
    g = oracle.GridDensity.from_function(_gauss(0.3, s2), (-10, 10), 8193)
    x = np.linspace(-2, 2, 9)
    assert np.allclose(oracle.grid_mmse_denoiser(g, eps, x), (s2 * x + eps * 0.3) / (s2 + eps), atol=1e-9)
    assert np.allclose(oracle.grid_denoising_posterior_variance(g, eps, x), s2 * eps / (s2 + eps), atol=1e-9)


def test_tweedie_residual_and_guards():
    g = oracle.GridDensity.from_function(_gauss(0.0, 1.0), (-10, 10), 8193)
    assert oracle.tweedie_residual(g, 0.1, np.linspace(-3, 3, 20), 1e-4) < 1e-6
    with pytest.raises(ConfigError):
        oracle.tweedie_residual(g, 0.1, [0.0], 1.0)
    with pytest.raises(TailUnderflowError):
        oracle.log_smoothed_density(g, 0.01, [200.0])


def test_closed_form_posteriors_agree():
    rng = np.random.default_rng(0)
    op = make_box_blur(3, 6, 6)
    y = rng.standard_normal((6, 6))
    post = oracle.gaussian_posterior(op, y, 0.2, 0.1, 1.0, 0.05)
    mean_f, var_f = oracle.gaussian_posterior_fourier(op, y, 0.2, 0.1, 1.0, 0.05)
    assert np.allclose(post.mean, mean_f, atol=1e-12)
    assert np.allclose(post.marginal_variances(), var_f, atol=1e-12)
    assert np.isfinite(post.logpdf(post.mean))


def test_grid_posterior_gaussian_conjugate_1d():
    s2, eps, y, sigma = 1.0, 0.25, 0.8, 0.5
    g = oracle.GridDensity.from_function(_gauss(0.0, s2), (-12, 12), 8193)
    post = oracle.grid_posterior(oracle.grid_smoothed_prior(g, eps), oracle.gaussian_log_likelihood(y, sigma))
    v = 1 / (1 / (s2 + eps) + 1 / sigma ** 2)
    m = v * y / sigma ** 2
    x = post.axes[0]
    assert np.max(np.abs(post.values - norm.pdf(x, m, math.sqrt(v)))) < 1e-6
    assert oracle.local_maxima_count(post) == 1


def test_tv_distances():
    expect = 2 * norm.cdf(0.5) - 1
    assert oracle.gaussian_tv_1d(0, 1, 1, 1) == pytest.approx(expect, abs=1e-9)
    a = oracle.GridDensity.from_function(_gauss(0, 1), (-15, 15), 30001)
    b = oracle.GridDensity.from_function(_gauss(1, 1), (-15, 15), 30001)
    assert oracle.tv_distance(a, b) == pytest.approx(expect, abs=1e-6)
    rng = np.random.default_rng(1)
    s = oracle.sample_from_grid(a, 200_000, rng)
    assert abs(s.mean()) < 0.01 and abs(s.var() - 1) < 0.01
    assert oracle.histogram_tv(s, a, 50) < 0.02
    assert oracle.empirical_tv(s, s, 20, [(-5, 5)]) == 0.0


def test_bimodal_posterior_and_epsilon_curve_guards():
    p = oracle.GridDensity.from_function(lambda q: _gauss(-1.5, 0.5)(q) + _gauss(1.5, 0.5)(q), (-12, 12), 4097)
    post = oracle.grid_posterior(oracle.grid_smoothed_prior(p, 0.05), oracle.gaussian_log_likelihood(0.5, 3.0))
    assert oracle.local_maxima_count(post) == 2
    with pytest.raises(ConfigError):
        oracle.epsilon_convergence_curve(p, oracle.gaussian_log_likelihood(0.0, 1.0), [0.05, 0.1])
    eps, tv = oracle.epsilon_convergence_curve(p, oracle.gaussian_log_likelihood(0.0, 1.0), [0.1, 0.05])
    assert eps[-1] == 0.0 and tv[-1] == 0.0 and tv[0] > tv[1] > 0
