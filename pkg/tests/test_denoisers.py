import io
import sys

import numpy as np
import pytest

from pnpula import oracle
from pnpula.denoisers import (GaussianDenoiser, GMMDenoiser, IdentityDenoiser, residual_lipschitz_probe)
from pnpula.errors import ConfigError, TransportError
from pnpula.external import ExternalDenoiser, encode_request, encode_response, read_request


def test_gaussian_denoiser_closed_form_and_score():
    d = GaussianDenoiser(0.5, 2.0)
    x = np.array([-1.0, 0.0, 3.0])
    assert np.allclose(d.denoise(x, 0.5), (2.0 * x + 0.5 * 0.5) / 2.5)
    # score of N(0.5, 2.5)
    assert np.allclose(d.score(x, 0.5), -(x - 0.5) / 2.5)
    assert d.lipschitz(0.5) == pytest.approx(0.2)
    with pytest.raises(ConfigError):
        d.denoise(x, 0.0)


def test_identity_denoiser():
    d = IdentityDenoiser()
    x = np.arange(4.0)
    assert np.array_equal(d.denoise(x, 0.1), x) and d.lipschitz(0.1) == 0.0


def _gmm_reference(x, w, mu, s2, eps):
    v = s2 + eps
    lr = np.log(w)[:, None] - 0.5 * (x[None] - mu[:, None]) ** 2 / v[:, None] - 0.5 * np.log(v)[:, None]
    r = np.exp(lr - lr.max(0))
    r /= r.sum(0)
    return (r * (s2[:, None] * x[None] + eps * mu[:, None]) / v[:, None]).sum(0)


def test_gmm_separable_matches_reference_and_joint_1d():
    w, mu, s2 = np.array([0.3, 0.7]), np.array([-1.0, 2.0]), np.array([0.5, 0.2])
    x = np.linspace(-5, 5, 41)
    sep = GMMDenoiser(w, mu, s2, lipschitz=1.0)
    joint = GMMDenoiser(w, mu[:, None], s2, lipschitz=1.0)
    ref = _gmm_reference(x, w, mu, s2, 0.1)
    assert np.allclose(sep.denoise(x, 0.1), ref, atol=1e-14)
    assert np.allclose([joint.denoise(np.array([t]), 0.1)[0] for t in x], ref, atol=1e-14)
    assert np.allclose(sep.responsibilities(x, 0.1).sum(0), 1.0)


def test_gmm_far_tails_are_finite():
    d = GMMDenoiser([0.5, 0.5], [0.0, 1.0], [1e-3, 1e-3])
    out = d.denoise(np.array([-1e4, 1e4]), 1e-3)
    assert np.all(np.isfinite(out))
    assert np.allclose(out, [-1e4 / 2 + 0.0, 1e4 / 2 + 0.5])


def test_gmm_validation():
    with pytest.raises(ConfigError):
        GMMDenoiser([0.5, 0.6], [0, 1], [1, 1])
    with pytest.raises(ConfigError):
        GMMDenoiser([0.5, 0.5], [0, 1], [1, 2]).lipschitz(0.1)
    assert GMMDenoiser([0.5, 0.5], [0, 1], [1, 2], lipschitz=0.7).lipschitz(0.1) == 0.7


def test_gmm_declared_lipschitz_bounds_probe():
    d = GMMDenoiser([0.5, 0.5], [-1.5, 1.5], [0.5, 0.5])
    for eps in (0.05, 0.25, 1.0):
        probe = residual_lipschitz_probe(d, eps, n_pairs=2000, box=(-4, 4))
        assert probe <= d.lipschitz(eps) + 1e-12
    v = 0.55
    assert d.lipschitz(0.05) == pytest.approx(0.05 * (9.0 / (4 * v * v) - 1.0 / v))


def test_gmm_denoiser_matches_grid_oracle():
    w, mu, s2, eps = [0.3, 0.7], [-1.0, 2.0], [0.5, 0.5], 0.25
    prior = oracle.GridDensity.from_function(
        lambda p: sum(a * np.exp(-(p[:, 0] - m) ** 2 / (2 * v)) / np.sqrt(2 * np.pi * v)
                      for a, m, v in zip(w, mu, s2)), (-8, 8), 2 ** 14 + 1)
    x = np.linspace(-3, 4, 30)
    ref = oracle.grid_mmse_denoiser(prior, eps, x).ravel()
    assert np.allclose(GMMDenoiser(w, mu, s2).denoise(x, eps), ref, atol=1e-8)


# --- external protocol ------------------------------------------------------------------

def test_protocol_encoding():
    x = np.arange(6.0).reshape(2, 3)
    req = encode_request(x, 0.25)
    assert req[:4] == b"PNPD" and req[4] == 1
    got, eps = read_request(io.BytesIO(req).read)
    assert eps == 0.25 and np.array_equal(got, x)
    assert encode_response(x)[:5] == b"PNPR\x00"
    assert read_request(io.BytesIO(b"").read) is None


def _server(*extra):
    return [sys.executable, "-m", "pnpula.external", *extra]


def test_external_echo_and_gaussian_servers():
    x = np.random.default_rng(0).standard_normal((4, 5))
    with ExternalDenoiser(command=_server("--kind", "echo"), lipschitz=0.0) as d:
        assert np.array_equal(d.denoise(x, 0.1), x)
        assert np.array_equal(d.denoise(2 * x, 0.1), 2 * x)
    with ExternalDenoiser(command=_server("--kind", "gaussian", "--mean", "0.5", "--variance", "2")) as d:
        assert np.allclose(d.denoise(x, 0.3), GaussianDenoiser(0.5, 2.0).denoise(x, 0.3), atol=0, rtol=0)
        assert d.lipschitz(0.3) == 1.0


def test_external_truncated_response_raises():
    with ExternalDenoiser(command=_server("--fault", "truncate"), timeout=10) as d:
        with pytest.raises(TransportError):
            d.denoise(np.zeros((3, 3)), 0.1)


def test_external_requires_one_endpoint():
    with pytest.raises(ValueError):
        ExternalDenoiser()
