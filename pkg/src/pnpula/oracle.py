"""Ground truth for verification: closed-form Gaussian posteriors and 1D/2D
grid densities for the smoothed prior, the oracle MMSE denoiser, the
denoising posterior variance and the smoothed posterior.

All quadrature is trapezoidal on uniform grids. Quantities involving the
denoising posterior are evaluated in log space with max subtraction.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.linalg import cho_factor, cho_solve
from scipy.signal import fftconvolve
from scipy.special import logsumexp

from .errors import ConfigError, DimensionError, SupportError, TailUnderflowError
from .operators import PeriodicConvolution

_CHUNK = 64


def _trapz_weights(axis):
    h = axis[1] - axis[0]
    w = np.full(axis.size, h)
    w[0] = w[-1] = h / 2.0
    return w


@dataclass
class GridDensity:
    """Tabulated nonnegative function on a uniform 1D or 2D grid."""

    axes: tuple
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.axes) not in (1, 2):
            raise DimensionError("grids are limited to 1 or 2 dimensions")
        if self.values.shape != tuple(a.size for a in self.axes):
            raise DimensionError("values do not match the axes")
        if np.any(self.values < 0):
            raise ConfigError("density values must be nonnegative")

    @classmethod
    def from_function(cls, fn, support, n, normalize=True):
        """Tabulate ``fn`` (taking an ``(N, d)`` array of points).

        ``support`` is ``(lo, hi)`` in 1D or ``((lo0, hi0), (lo1, hi1))`` in 2D;
        ``n`` an int or a pair.
        """
        if np.ndim(support[0]) == 0:
            support, n = (support,), (n,)
        elif np.ndim(n) == 0:
            n = (n,) * len(support)
        axes = tuple(np.linspace(lo, hi, k) for (lo, hi), k in zip(support, n))
        g = cls(axes, np.zeros(tuple(a.size for a in axes)))
        g.values = np.asarray(fn(g.points()), dtype=np.float64).reshape(g.values.shape)
        return g.normalize() if normalize else g

    @classmethod
    def from_log_function(cls, logfn, support, n):
        g = cls.from_function(logfn, support, n, normalize=False)
        g.values = np.exp(g.values - g.values.max())
        return g.normalize()

    @property
    def dim(self):
        return len(self.axes)

    @property
    def step(self):
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def support(self):
        return tuple((float(a[0]), float(a[-1])) for a in self.axes)

    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def weights(self):
        """Trapezoid quadrature weight of every grid node (same shape as values)."""
        w = _trapz_weights(self.axes[0])
        for a in self.axes[1:]:
            w = np.multiply.outer(w, _trapz_weights(a))
        return w

    def mass(self):
        return float((self.values * self.weights()).sum())

    def normalize(self):
        m = self.mass()
        if not m > 0:
            raise ConfigError("zero total mass")
        return GridDensity(self.axes, self.values / m, True)

    def boundary_ratio(self):
        edge = np.concatenate([np.take(self.values, [0, -1], axis=ax).ravel() for ax in range(self.dim)])
        return float(edge.max() / self.values.max())


def point_mass(support, n, at=0.0):
    """Grid density concentrating unit mass on the node nearest ``at`` (1D)."""
    axis = np.linspace(support[0], support[1], n)
    i = int(np.argmin(np.abs(axis - at)))
    v = np.zeros(n)
    v[i] = 1.0 / _trapz_weights(axis)[i]
    return GridDensity((axis,), v, True)


# --- closed-form Gaussian posterior ------------------------------------------------

class GaussianPosterior:
    """``N(mean, precision^-1)`` with the precision held as a Cholesky factor."""

    def __init__(self, mean, precision):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.precision = np.asarray(precision, dtype=np.float64)
        try:
            self._chol = cho_factor(self.precision)
        except np.linalg.LinAlgError as exc:
            raise FloatingPointError("precision matrix is not positive definite") from exc

    def covariance(self):
        return cho_solve(self._chol, np.eye(self.precision.shape[0]))

    def marginal_variances(self):
        return np.diag(self.covariance()).reshape(self.mean.shape)

    def logpdf(self, x):
        diff = (np.asarray(x, dtype=np.float64) - self.mean).reshape(-1)
        c, _ = self._chol
        logdet = 2.0 * np.log(np.abs(np.diag(c))).sum()
        d = diff.size
        return 0.5 * logdet - 0.5 * d * math.log(2 * math.pi) - 0.5 * diff @ (self.precision @ diff)


def gaussian_posterior(op, y, sigma, prior_mean, prior_var, eps):
    """Posterior for ``y = A x + N(0, sigma^2)`` and smoothed prior ``N(m, (s^2 + eps) Id)``."""
    if not sigma > 0 or not prior_var > 0:
        raise ConfigError("sigma and prior variance must be positive")
    shape = op.in_shape
    d = int(np.prod(shape))
    AtA = np.empty((d, d))
    e = np.zeros(d)
    for i in range(d):
        e[i] = 1.0
        AtA[:, i] = op.normal(e.reshape(shape)).ravel()
        e[i] = 0.0
    v = prior_var + eps
    prec = AtA / sigma ** 2 + np.eye(d) / v
    prec = 0.5 * (prec + prec.T)
    m = np.broadcast_to(np.asarray(prior_mean, dtype=np.float64), shape).ravel()
    rhs = op.adjoint(np.asarray(y, dtype=np.float64)).ravel() / sigma ** 2 + m / v
    mean = cho_solve(cho_factor(prec), rhs)
    return GaussianPosterior(mean.reshape(shape), prec)


def gaussian_posterior_fourier(op, y, sigma, prior_mean, prior_var, eps):
    """Mean and per-pixel variance of the same posterior when ``A`` is a periodic
    convolution, by diagonalization in the DFT basis."""
    if not isinstance(op, PeriodicConvolution):
        raise ConfigError("Fourier closed form needs a periodic convolution")
    shape = op.in_shape
    K = np.fft.fft2(np.fft.irfft2(op.transfer, s=shape))
    v = prior_var + eps
    lam = np.abs(K) ** 2 / sigma ** 2 + 1.0 / v
    m = np.broadcast_to(np.asarray(prior_mean, dtype=np.float64), shape)
    rhs = np.conj(K) * np.fft.fft2(y) / sigma ** 2 + np.fft.fft2(m) / v
    mean = np.fft.ifft2(rhs / lam).real
    var = float(np.mean(1.0 / lam))
    return mean, np.full(shape, var)


def ula_mode_precisions(op, sigma, prior_var, eps):
    """Posterior precision of every DFT mode (periodic convolution, Gaussian prior)."""
    if not isinstance(op, PeriodicConvolution):
        raise ConfigError("mode decomposition needs a periodic convolution")
    K = np.fft.fft2(np.fft.irfft2(op.transfer, s=op.in_shape))
    return np.abs(K) ** 2 / sigma ** 2 + 1.0 / (prior_var + eps)


def ula_mean_error_variance(op, sigma, prior_var, eps, delta, n):
    """Per-mode variance of the ``n``-sample average of a stationary PnP-ULA chain
    on the Gaussian conjugate problem (tail term inactive, no thinning).

    Each orthonormal DFT mode is an AR(1) with ``phi = 1 - delta * P``; the
    average has variance ``s^2 / n * (1 + phi) / (1 - phi)`` up to ``O(1 / n^2)``.
    The pixel-domain variance of the average is the mean of the returned array.
    """
    P = ula_mode_precisions(op, sigma, prior_var, eps)
    phi = 1.0 - delta * P
    if np.any(np.abs(phi) >= 1):
        raise ConfigError("step size makes some mode unstable")
    s2 = 1.0 / (P * (1.0 - delta * P / 2.0))
    return s2 / n * (1.0 + phi) / (1.0 - phi)


# --- grid operations -------------------------------------------------------------

def _gauss_kernel_1d(h, eps, n):
    half = min(n - 1, int(math.ceil(12.0 * math.sqrt(eps) / h)))
    r = np.arange(-half, half + 1) * h
    return np.exp(-r ** 2 / (2 * eps)) / math.sqrt(2 * math.pi * eps)


def grid_smoothed_prior(p, eps):
    """Convolution of ``p`` with ``N(0, eps Id)`` on the same grid.

    Raises ``SupportError`` when the grid is too narrow to hold the smoothed
    mass (mass change above 1e-6).
    """
    if not eps > 0:
        raise ConfigError("eps must be positive")
    f = p.values * p.weights()
    for ax, axis in enumerate(p.axes):
        k = _gauss_kernel_1d(axis[1] - axis[0], eps, axis.size)
        shape = [1] * p.dim
        shape[ax] = k.size
        f = fftconvolve(f, k.reshape(shape), mode="same")
    f = np.maximum(f, 0.0)
    out = GridDensity(p.axes, f, p.normalized)
    m0, m1 = p.mass(), out.mass()
    if abs(m1 - m0) > 1e-6 * max(m0, 1e-300):
        raise SupportError(f"smoothing lost mass {m0 - m1:.3g}; pad the support by >= 6 sqrt(eps)")
    return out


def _as_points(p, x_points):
    x = np.asarray(x_points, dtype=np.float64)
    if p.dim == 1:
        return x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[1] != p.dim:
        raise DimensionError(f"expected points of shape (n, {p.dim})")
    return x


def _denoising_moments(p, eps, x_points):
    """Log normalizer, mean and mean squared deviation of ``g_eps(.|x)`` per point."""
    if not eps > 0:
        raise ConfigError("eps must be positive")
    x = _as_points(p, x_points)
    nodes = p.points()
    with np.errstate(divide="ignore"):
        logwp = np.log((p.values * p.weights()).ravel())
    keep = np.isfinite(logwp)
    nodes, logwp = nodes[keep], logwp[keep]
    d = p.dim
    logz = np.empty(len(x))
    mean = np.empty((len(x), d))
    var = np.empty(len(x))
    for s in range(0, len(x), _CHUNK):
        xs = x[s:s + _CHUNK]
        d2 = ((xs[:, None, :] - nodes[None, :, :]) ** 2).sum(axis=2)
        a = logwp[None, :] - d2 / (2 * eps)
        lz = logsumexp(a, axis=1)
        w = np.exp(a - lz[:, None])
        mu = w @ nodes
        second = (w * (nodes ** 2).sum(axis=1)[None, :]).sum(axis=1)
        logz[s:s + _CHUNK] = lz - 0.5 * d * math.log(2 * math.pi * eps)
        mean[s:s + _CHUNK] = mu
        var[s:s + _CHUNK] = np.maximum(second - (mu ** 2).sum(axis=1), 0.0)
    if np.any(logz < -700):
        raise TailUnderflowError("smoothed density underflows at some probe points")
    return logz, mean, var


def log_smoothed_density(p, eps, x_points):
    """``log p_eps`` at arbitrary points by direct quadrature over the prior grid."""
    return _denoising_moments(p, eps, x_points)[0]


def grid_mmse_denoiser(p, eps, x_points):
    mean = _denoising_moments(p, eps, x_points)[1]
    return mean[:, 0] if p.dim == 1 else mean


def grid_denoising_posterior_variance(p, eps, x_points):
    """``E ||X - E[X|x]||^2`` under ``g_eps(.|x)``; its sup is the empirical ``K_eps``."""
    return _denoising_moments(p, eps, x_points)[2]


def grid_posterior(p_eps, log_likelihood, y=None):
    """Normalized ``p(y|x) p_eps(x)`` on the grid of ``p_eps``.

    ``log_likelihood(points)`` (or ``log_likelihood(points, y)`` when ``y`` is
    given) returns log-likelihood values at an ``(N, d)`` array of points.
    """
    pts = p_eps.points()
    ll = log_likelihood(pts) if y is None else log_likelihood(pts, y)
    ll = np.asarray(ll, dtype=np.float64).reshape(p_eps.values.shape)
    with np.errstate(divide="ignore"):
        logv = np.log(p_eps.values) + ll
    if not np.any(np.isfinite(logv)):
        raise ConfigError("posterior has zero mass on the grid")
    vals = np.exp(logv - np.max(logv[np.isfinite(logv)]))
    post = GridDensity(p_eps.axes, vals)
    if post.mass() == 0:
        raise ConfigError("posterior has zero mass on the grid")
    return post.normalize()


def gaussian_log_likelihood(y, sigma, A=None):
    """Log-likelihood evaluator for ``y = A x + N(0, sigma^2 Id)`` on grid points."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    A = None if A is None else np.atleast_2d(np.asarray(A, dtype=np.float64))

    def log_lik(pts):
        ax = pts if A is None else pts @ A.T
        return -0.5 * ((ax - y[None, :]) ** 2).sum(axis=1) / sigma ** 2
    return log_lik


def tweedie_residual(p, eps, x_points, h):
    """``max |eps * grad log p_eps - (D*_eps - x)|`` with central-difference gradients."""
    step = min(p.step)
    if h >= 10 * step:
        raise ConfigError(f"finite-difference step {h} too large for grid step {step}")
    x = _as_points(p, x_points)
    logz, mean, _ = _denoising_moments(p, eps, x)
    grad = np.empty_like(x)
    for j in range(p.dim):
        e = np.zeros(p.dim)
        e[j] = h
        grad[:, j] = (log_smoothed_density(p, eps, x + e) - log_smoothed_density(p, eps, x - e)) / (2 * h)
    return float(np.max(np.abs(eps * grad - (mean - x))))


def smoothed_log_hessian_1d(p, eps, x_points, h=1e-3):
    """Second central difference of ``log p_eps`` (1D)."""
    x = np.asarray(x_points, dtype=np.float64).ravel()
    lp = [log_smoothed_density(p, eps, x + s) for s in (-h, 0.0, h)]
    return (lp[0] - 2 * lp[1] + lp[2]) / h ** 2


def local_maxima_count(p, rel_height=1e-3):
    """Number of strict interior local maxima of a 1D grid density above ``rel_height * max``."""
    v = p.values
    if p.dim != 1:
        raise DimensionError("local maxima scan is 1D only")
    inner = (v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:]) & (v[1:-1] > rel_height * v.max())
    return int(inner.sum())


# --- total variation ------------------------------------------------------------

def tv_distance(p, q):
    """``(1/2) int |p - q|`` for two normalized densities on the same grid."""
    if any(a.size != b.size or not np.allclose(a, b) for a, b in zip(p.axes, q.axes)):
        raise DimensionError("densities live on different grids")
    return 0.5 * float((np.abs(p.values - q.values) * p.weights()).sum())


def _bin_masses(p, edges):
    """Density mass inside each histogram bin (1D via the trapezoid CDF; 2D by cells)."""
    if p.dim == 1:
        axis = p.axes[0]
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p.values[1:] + p.values[:-1]) * np.diff(axis))])
        return np.diff(np.interp(edges[0], axis, cdf))
    ax0, ax1 = p.axes
    v = p.values
    cell = 0.25 * (v[1:, 1:] + v[:-1, 1:] + v[1:, :-1] + v[:-1, :-1])
    cell = cell * np.outer(np.diff(ax0), np.diff(ax1))
    c0 = 0.5 * (ax0[1:] + ax0[:-1])
    c1 = 0.5 * (ax1[1:] + ax1[:-1])
    m0, m1 = np.meshgrid(c0, c1, indexing="ij")
    masses, _, _ = np.histogram2d(m0.ravel(), m1.ravel(), bins=edges, weights=cell.ravel())
    return masses


def histogram_tv(samples, density, bins=50):
    """TV between the empirical law of ``samples`` and ``density``, on ``bins`` equal
    bins per axis spanning the density support. Samples outside count as mismatch."""
    s = np.asarray(samples, dtype=np.float64)
    s = s.reshape(-1, 1) if density.dim == 1 else s.reshape(-1, density.dim)
    n_bins = bins ** density.dim
    if len(s) < 10 * n_bins:
        warnings.warn(f"only {len(s)} samples for {n_bins} bins; TV estimate is noisy", stacklevel=2)
    edges = [np.linspace(lo, hi, bins + 1) for lo, hi in density.support]
    counts, _ = np.histogramdd(s, bins=edges)
    emp = counts / len(s)
    dm = _bin_masses(density, edges)
    dm = dm / dm.sum()
    outside = 1.0 - emp.sum()
    return 0.5 * (float(np.abs(emp - dm).sum()) + outside)


def empirical_tv(a, b, bins, support):
    """TV between the binned empirical laws of two sample sets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    edges = [np.linspace(lo, hi, bins + 1) for lo, hi in support]
    ha, _ = np.histogramdd(a, bins=edges)
    hb, _ = np.histogramdd(b, bins=edges)
    pa = ha / len(a)
    pb = hb / len(b)
    return 0.5 * (float(np.abs(pa - pb).sum()) + abs((1 - pa.sum()) - (1 - pb.sum())))


def sample_from_grid(p, n, rng):
    """Inverse-CDF draws from a 1D grid density (piecewise-linear CDF)."""
    if p.dim != 1:
        raise DimensionError("inverse-CDF sampling is 1D only")
    axis = p.axes[0]
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p.values[1:] + p.values[:-1]) * np.diff(axis))])
    cdf /= cdf[-1]
    return np.interp(rng.uniform(size=n), cdf, axis)


def gaussian_tv_1d(m1, v1, m2, v2):
    """TV between two 1D Gaussians by adaptive quadrature."""
    def f(x):
        a = math.exp(-(x - m1) ** 2 / (2 * v1)) / math.sqrt(2 * math.pi * v1)
        b = math.exp(-(x - m2) ** 2 / (2 * v2)) / math.sqrt(2 * math.pi * v2)
        return abs(a - b)
    s = 12 * math.sqrt(max(v1, v2))
    lo, hi = min(m1, m2) - s, max(m1, m2) + s
    pts = sorted({m1, m2})
    val, _ = integrate.quad(f, lo, hi, points=pts, limit=400, epsabs=1e-12, epsrel=1e-10)
    return 0.5 * val


def epsilon_convergence_curve(p, log_likelihood, eps_list, y=None):
    """``TV(pi_eps, pi)`` for each ``eps`` (strictly decreasing list), plus the limit point.

    Returns ``(eps_values, tv_values)`` with ``eps = 0, TV = 0`` appended.
    """
    eps = np.asarray(eps_list, dtype=np.float64)
    if eps.size < 1 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ConfigError("eps list must be positive and strictly decreasing")
    pi = grid_posterior(p, log_likelihood, y)
    tvs = [tv_distance(grid_posterior(grid_smoothed_prior(p, e), log_likelihood, y), pi) for e in eps]
    return np.append(eps, 0.0), np.append(tvs, 0.0)
