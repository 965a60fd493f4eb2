import warnings

import numpy as np
import pytest

from pnpula import oracle
from pnpula.denoisers import GaussianDenoiser, GMMDenoiser
from pnpula.diagnostics import RunningMoments, SampleRecorder
from pnpula.errors import ConfigError, DivergenceError
from pnpula.fields import GaussianStream
from pnpula.operators import GaussianLikelihood, Identity, make_box_blur, make_mask
from pnpula.samplers import (DEFAULT_EPS, ChainState, ProblemSpec, SamplerConfig, drift_pnp,
                             inpainting_reduced_drift, load_checkpoint, run_chain, run_dense_chain,
                             save_checkpoint, step, validate_config)
from pnpula.verify import tuned_config


def test_config_validation_and_recording_grid():
    with pytest.raises(ConfigError):
        SamplerConfig(delta=0.0, lam=1.0)
    with pytest.raises(ConfigError):
        SamplerConfig(delta=1.0, lam=1.0, c_lo=2, c_hi=-1)
    with pytest.raises(ConfigError):
        SamplerConfig(delta=1.0, lam=1.0, n_iter=10, burn_in=10)
    with pytest.raises(ConfigError):
        SamplerConfig(delta=1.0, lam=1.0, variant="mala")
    cfg = SamplerConfig(delta=1.0, lam=1.0, n_iter=100, burn_in=10, thinning=3)
    rec = [k for k in range(1, 101) if cfg.is_recorded(k)]
    assert rec[0] == 11 and np.all(np.diff(rec) == 3) and len(rec) == 30


def test_config_hash_ignores_horizon_only():
    a = SamplerConfig(delta=1e-3, lam=1.0, n_iter=100)
    assert a.config_hash() == SamplerConfig(delta=1e-3, lam=1.0, n_iter=500).config_hash()
    assert a.config_hash() != SamplerConfig(delta=1e-3, lam=1.0, n_iter=100, seed=1).config_hash()


def test_parameter_rules_standard_deblur_constants():
    cfg = SamplerConfig(delta=1e-7, lam=1 / 265302, eps=DEFAULT_EPS)
    rep = validate_config(cfg, 1.0, 255.0 ** 2)
    assert rep.lambda_max == pytest.approx(1 / 265302, rel=1e-12)
    assert rep.lip == pytest.approx(332928, rel=1e-12)
    assert rep.delta_th == pytest.approx(1 / 998784, rel=1e-12)
    assert rep.passed and rep.ppnp_ok
    # inpainting drops the likelihood constant
    inp = validate_config(cfg, 1.0, 255.0 ** 2, inpainting=True)
    assert inp.lambda_max == pytest.approx(DEFAULT_EPS / 2)


def test_strongly_concave_step_rule():
    rep = validate_config(SamplerConfig(delta=1e-3, lam=1.0, eps=0.5), 0.2, 4.0, m=4.0)
    assert rep.delta_strong == pytest.approx(4.0 * (4.0 + 0.4) ** -2 / 2)
    assert validate_config(SamplerConfig(delta=1e-3, lam=1.0), 0.2, 4.0, m=-1.0).delta_strong is None


def test_strict_mode_rejects_and_ppnp_only_warns():
    lik = GaussianLikelihood(Identity((4,)), np.zeros(4), 1.0)
    prob = ProblemSpec("denoise", GaussianDenoiser(0.0, 1.0), likelihood=lik)
    with pytest.raises(ConfigError):
        run_chain(prob, SamplerConfig(delta=1.0, lam=0.1, eps=0.1, n_iter=5))
    with pytest.warns(UserWarning):
        run_chain(prob, SamplerConfig(delta=1.0, lam=0.1, eps=0.1, n_iter=5, strict=False))
    with pytest.warns(UserWarning):
        run_chain(prob, SamplerConfig(delta=2.0, lam=0.1, eps=0.1, n_iter=5, variant="ppnp-ula"))


def test_single_step_matches_hand_computation():
    y = np.array([0.3, -0.2, 2.5])
    lik = GaussianLikelihood(Identity((3,)), y, 0.5)
    den = GaussianDenoiser(0.1, 0.4)
    prob = ProblemSpec("denoise", den, likelihood=lik)
    cfg = SamplerConfig(delta=0.01, lam=0.3, eps=0.2, alpha=0.7, c_lo=-1.0, c_hi=2.0)
    x = np.array([0.5, -3.0, 4.0])
    z = np.array([0.1, -0.4, 1.2])
    d = (0.4 * x + 0.2 * 0.1) / 0.6
    drift = (y - x) / 0.25 + 0.7 * (d - x) / 0.2 + (np.clip(x, -1, 2) - x) / 0.3
    assert np.allclose(drift_pnp(x, prob, cfg), drift)
    out = step(ChainState(x, 4, None), prob, cfg, z=z)
    assert out.k == 5 and np.allclose(out.x, x + 0.01 * drift + np.sqrt(0.02) * z)
    # projected variant: no tail term, then clip
    pcfg = SamplerConfig(delta=0.01, lam=0.3, eps=0.2, alpha=0.7, variant="ppnp-ula")
    drift_p = (y - x) / 0.25 + 0.7 * (d - x) / 0.2
    out = step(ChainState(x, 0, None), prob, pcfg, z=z)
    assert np.allclose(out.x, np.clip(x + 0.01 * drift_p + np.sqrt(0.02) * z, -1, 2))


def test_inpainting_chain_leaves_observed_pixels_untouched():
    truth = np.random.default_rng(0).uniform(0, 1, (8, 8))
    mask = make_mask(8, 8, 0.8, seed=1)
    den = GMMDenoiser([0.5, 0.5], [0.2, 0.8], [0.01, 0.01])
    prob = ProblemSpec.inpaint(mask, mask.apply(truth), den, truth)
    cfg = tuned_config(den.lipschitz(DEFAULT_EPS), 0.0, DEFAULT_EPS, inpainting=True, n_iter=300, burn_in=10)
    rec = SampleRecorder()
    m = RunningMoments((8, 8))
    run_chain(prob, cfg, [rec, m])
    for _, x in rec.samples:
        assert np.array_equal(x.ravel()[mask.indices], truth.ravel()[mask.indices])
    assert np.all(m.std_map().ravel()[mask.indices] == 0.0)
    assert np.all(m.std_map().ravel()[mask.hidden] > 0.0)
    # reduced drift is the hidden part of the full-image prior drift
    xt = np.random.default_rng(2).uniform(0, 1, mask.hidden.size)
    full = mask.embed(xt, prob.y)
    expect = mask.restrict_hidden(den.denoise(full, cfg.eps) - full) / cfg.eps
    assert np.allclose(inpainting_reduced_drift(xt, prob.y, mask, den, cfg), expect)


def _small_problem():
    rng = np.random.default_rng(3)
    op = make_box_blur(3, 6, 6)
    y = op.apply(rng.uniform(size=(6, 6))) + 0.1 * rng.standard_normal((6, 6))
    lik = GaussianLikelihood(op, y, 0.1)
    return ProblemSpec.deblur(lik, GaussianDenoiser(0.5, 1.0))


def test_run_chain_is_deterministic_and_counts_iterates():
    prob = _small_problem()
    cfg = tuned_config(prob.denoiser.lipschitz(0.01), prob.likelihood_lipschitz, 0.01,
                       n_iter=200, burn_in=20, thinning=4, seed=9)
    a, b = SampleRecorder(), SampleRecorder()
    s1 = run_chain(prob, cfg, [a])
    run_chain(prob, cfg, [b])
    assert s1.iterations == 200 and not s1.partial
    assert [k for k, _ in a.samples] == list(range(21, 201, 4))
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a.samples, b.samples))


def test_observer_failure_returns_partial_summary():
    class Boom:
        def observe(self, k, x):
            if k >= 5:
                raise RuntimeError("disk full")

    prob = _small_problem()
    cfg = tuned_config(prob.denoiser.lipschitz(0.01), prob.likelihood_lipschitz, 0.01, n_iter=50)
    s = run_chain(prob, cfg, [Boom()])
    assert s.partial and s.state.k == 5 and isinstance(s.error, RuntimeError)


def test_divergence_is_reported_with_iteration():
    lik = GaussianLikelihood(Identity((2,)), np.zeros(2), 0.1)
    prob = ProblemSpec("denoise", GaussianDenoiser(0.0, 1.0), likelihood=lik)
    cfg = SamplerConfig(delta=1.0, lam=1.0, eps=0.1, n_iter=10_000, strict=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(DivergenceError) as exc:
            run_chain(prob, cfg)
    assert 1 < exc.value.iteration < 10_000


def test_checkpoint_resume_reproduces_uninterrupted_run(tmp_path):
    prob = _small_problem()
    kw = dict(burn_in=0, seed=4)
    L, Ly = prob.denoiser.lipschitz(0.01), prob.likelihood_lipschitz
    full = run_chain(prob, tuned_config(L, Ly, 0.01, n_iter=120, **kw)).state
    half_cfg = tuned_config(L, Ly, 0.01, n_iter=60, **kw)
    half = run_chain(prob, half_cfg).state
    save_checkpoint(tmp_path / "ck", half, half_cfg)
    state = load_checkpoint(tmp_path / "ck", tuned_config(L, Ly, 0.01, n_iter=120, **kw))
    assert state.k == 60
    resumed = run_chain(prob, tuned_config(L, Ly, 0.01, n_iter=120, **kw), state=state).state
    assert np.array_equal(resumed.x, full.x)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "ck", tuned_config(L, Ly, 0.01, n_iter=120, burn_in=0, seed=5))


def test_dense_chain_reproduces_image_chain():
    y = np.array([0.4, -0.1])
    lik = GaussianLikelihood(Identity((2,)), y, 0.5)
    den = GaussianDenoiser(np.array([0.0, 1.0]), 0.5)
    prob = ProblemSpec("denoise", den, likelihood=lik)
    cfg = tuned_config(den.lipschitz(0.1), lik.lipschitz, 0.1, n_iter=500, burn_in=0, seed=11)
    rec = SampleRecorder()
    run_chain(prob, cfg, [rec], x0=np.zeros(2))
    dense = run_dense_chain(cfg, den, np.zeros(2), likelihood=lik, chunk=64)
    assert np.allclose(dense.samples, np.array([x for _, x in rec.samples]), atol=1e-12)


def test_ppnp_dense_chain_stays_in_box():
    den = GMMDenoiser([0.5, 0.5], [[-1.5], [1.5]], [0.5, 0.5])
    cfg = SamplerConfig(delta=0.2, lam=1.0, eps=0.05, c_lo=-1.0, c_hi=1.0, n_iter=5000, variant="ppnp-ula")
    out = run_dense_chain(cfg, den, [0.0])
    assert out.samples.min() >= -1.0 and out.samples.max() <= 1.0


def test_gaussian_conjugate_mean_error_matches_mcse():
    """Sample-mean error of the conjugate chain, normalized per DFT mode by the
    AR(1) Monte Carlo variance, must look like a unit chi-square average."""
    rng = np.random.default_rng(0)
    h = w = 16
    op = make_box_blur(3, h, w)
    sigma, eps = 0.1, 0.01
    y = op.apply(rng.uniform(0, 1, (h, w))) + sigma * rng.standard_normal((h, w))
    lik = GaussianLikelihood(op, y, sigma)
    den = GaussianDenoiser(0.0, 1.0)
    n = 60_000
    cfg = tuned_config(den.lipschitz(eps), lik.lipschitz, eps, c_lo=-1e3, c_hi=1e3,
                       n_iter=n + 10_000, burn_in=10_000, seed=12)
    m = RunningMoments((h, w))
    run_chain(ProblemSpec.deblur(lik, den), cfg, [m])
    post = oracle.gaussian_posterior(op, y, sigma, 0.0, 1.0, eps)
    mean_f, _ = oracle.gaussian_posterior_fourier(op, y, sigma, 0.0, 1.0, eps)
    assert np.allclose(mean_f, post.mean, atol=1e-10)
    err = np.fft.fft2(m.mean - post.mean) / np.sqrt(h * w)
    v = oracle.ula_mean_error_variance(op, sigma, 1.0, eps, cfg.delta, n)
    stat = float(np.mean(np.abs(err) ** 2 / v))
    # E = 1, sd ~ sqrt(2 / d); 5 sd band
    assert abs(stat - 1.0) < 5 * np.sqrt(2.0 / (h * w)), stat


def test_ula_mode_variance_formula_one_dimensional():
    op = make_box_blur(1, 4, 4)
    delta, sigma, s2, eps, n = 0.05, 1.0, 1.0, 0.5, 1000
    P = 1 / sigma ** 2 + 1 / (s2 + eps)
    phi = 1 - delta * P
    expect = 1 / (P * (1 - delta * P / 2)) / n * (1 + phi) / (1 - phi)
    assert np.allclose(oracle.ula_mean_error_variance(op, sigma, s2, eps, delta, n), expect)
    with pytest.raises(ConfigError):
        oracle.ula_mean_error_variance(op, sigma, s2, eps, 10.0, n)
