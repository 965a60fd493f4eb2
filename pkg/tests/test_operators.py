import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnpula.errors import ConfigError, DimensionError
from pnpula.operators import (GaussianLikelihood, Identity, Mask, PeriodicConvolution, make_box_blur,
                              make_mask, operator_norm_sq)


@settings(max_examples=25, deadline=None)
@given(size=st.sampled_from([1, 3, 5, 9]), h=st.integers(9, 20), w=st.integers(9, 20), seed=st.integers(0, 2**16))
def test_blur_adjoint_identity(size, h, w, seed):
    rng = np.random.default_rng(seed)
    op = make_box_blur(size, h, w)
    x, y = rng.standard_normal((h, w)), rng.standard_normal((h, w))
    lhs, rhs = np.vdot(op.apply(x), y), np.vdot(x, op.adjoint(y))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_blur_matches_direct_circular_convolution():
    rng = np.random.default_rng(0)
    k = rng.uniform(size=(3, 3))
    x = rng.standard_normal((7, 8))
    op = PeriodicConvolution(k, (7, 8))
    direct = np.zeros_like(x)
    for a in range(3):
        for b in range(3):
            direct += k[a, b] * np.roll(x, (a - 1, b - 1), axis=(0, 1))
    assert np.allclose(op.apply(x), direct)
    assert np.allclose(op.normal(x), op.adjoint(op.apply(x)))


def test_box_blur_preserves_constants_and_size_one_is_identity():
    op = make_box_blur(9, 16, 16)
    assert np.allclose(op.apply(np.full((16, 16), 0.3)), 0.3)
    x = np.random.default_rng(1).standard_normal((5, 5))
    assert np.allclose(make_box_blur(1, 5, 5).apply(x), x)
    with pytest.raises(ConfigError):
        make_box_blur(4, 16, 16)
    with pytest.raises(ConfigError):
        make_box_blur(9, 8, 8)


def test_mask_keeps_twenty_percent():
    m = make_mask(64, 64, 0.8, seed=3)
    assert m.indices.size == round(0.2 * 64 * 64)
    assert m.hidden.size + m.indices.size == 64 * 64
    assert np.all(np.diff(m.indices) > 0)
    with pytest.raises(ConfigError):
        make_mask(8, 8, 1.0)


def test_mask_adjoint_embed_restrict():
    rng = np.random.default_rng(4)
    m = make_mask(6, 5, 0.5, seed=0)
    x = rng.standard_normal((6, 5))
    y = rng.standard_normal(m.indices.size)
    assert np.isclose(np.vdot(m.apply(x), y), np.vdot(x, m.adjoint(y)))
    full = m.embed(m.restrict_hidden(x), m.apply(x))
    assert np.array_equal(full, x)
    with pytest.raises(ConfigError):
        Mask([3, 1], (2, 2))
    with pytest.raises(DimensionError):
        m.apply(np.zeros((5, 5)))


def test_operator_norm():
    est = operator_norm_sq(make_box_blur(9, 32, 32))
    assert est.converged and abs(est.value - 1.0) < 1e-8
    k = np.array([[0.0, 0.5, 0.0], [0.5, 1.0, 0.5], [0.0, 0.5, 0.0]])
    op = PeriodicConvolution(k, (16, 16))
    est = operator_norm_sq(op, max_iters=5000)
    assert abs(est.value - np.max(np.abs(op.transfer)) ** 2) < 1e-6 * est.value
    assert operator_norm_sq(Identity((3, 3))).value == pytest.approx(1.0)


def test_likelihood_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    op = make_box_blur(3, 8, 8)
    y = rng.standard_normal((8, 8))
    lik = GaussianLikelihood(op, y, 0.3)
    x = rng.standard_normal((8, 8))
    g = lik.grad(x)
    h = 1e-6
    for idx in [(0, 0), (3, 5), (7, 7)]:
        e = np.zeros((8, 8))
        e[idx] = h
        fd = (lik.log_likelihood(x + e) - lik.log_likelihood(x - e)) / (2 * h)
        assert abs(fd - g[idx]) < 1e-5 * max(1, abs(g[idx]))
    assert lik.lipschitz == pytest.approx(1.0 / 0.09, rel=1e-8)
    assert lik.concavity == 0.0


def test_likelihood_constants_identity_and_errors():
    lik = GaussianLikelihood(Identity((4, 4)), np.zeros((4, 4)), 1 / 255)
    assert lik.lipschitz == pytest.approx(255.0 ** 2)
    assert lik.concavity == pytest.approx(255.0 ** 2)
    with pytest.raises(ConfigError):
        GaussianLikelihood(Identity((2, 2)), np.zeros((2, 2)), 0.0)
    with pytest.raises(DimensionError):
        GaussianLikelihood(Identity((2, 2)), np.zeros((3, 2)), 1.0)
