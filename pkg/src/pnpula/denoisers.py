"""Denoisers ``D_eps`` and their Tweedie scores.

The analytic kinds are exact MMSE denoisers for their priors, so the plugged
denoiser coincides with the oracle one and its residual Lipschitz constant is
known in closed form.
"""
import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import ConfigError, DimensionError


def _check_eps(eps):
    if not eps > 0:
        raise ConfigError(f"denoiser noise level must be positive, got {eps}")


class Denoiser:
    kind = "abstract"

    def denoise(self, x, eps):
        raise NotImplementedError

    def score(self, x, eps):
        """Plug-in estimate of ``grad log p_eps(x)`` via Tweedie's identity."""
        x = np.asarray(x, dtype=np.float64)
        return (self.denoise(x, eps) - x) / eps

    def lipschitz(self, eps):
        """Declared Lipschitz constant of ``Id - D_eps``."""
        raise NotImplementedError

    def close(self):
        pass


class IdentityDenoiser(Denoiser):
    kind = "identity"

    def denoise(self, x, eps):
        _check_eps(eps)
        return np.array(x, dtype=np.float64)

    def lipschitz(self, eps):
        return 0.0


class GaussianDenoiser(Denoiser):
    """MMSE denoiser for the prior ``N(mean, variance * Id)``.

    ``mean`` is a scalar or an array broadcastable to the image.
    """

    kind = "gaussian-analytic"

    def __init__(self, mean=0.0, variance=1.0):
        if not variance > 0:
            raise ConfigError(f"prior variance must be positive, got {variance}")
        self.mean = np.asarray(mean, dtype=np.float64)
        self.variance = float(variance)

    def denoise(self, x, eps):
        _check_eps(eps)
        x = np.asarray(x, dtype=np.float64)
        s2 = self.variance
        return (s2 * x + eps * self.mean) / (s2 + eps)

    def lipschitz(self, eps):
        return eps / (self.variance + eps)


class GMMDenoiser(Denoiser):
    """MMSE denoiser for an isotropic Gaussian mixture prior.

    With ``means`` of shape ``(K,)`` the mixture acts independently on every
    pixel (product prior). With ``means`` of shape ``(K, d)`` it is a single
    mixture over the flattened ``d``-vector.
    """

    kind = "gmm-analytic"

    def __init__(self, weights, means, variances, lipschitz=None):
        w = np.asarray(weights, dtype=np.float64)
        mu = np.asarray(means, dtype=np.float64)
        s2 = np.broadcast_to(np.asarray(variances, dtype=np.float64), w.shape).copy()
        if w.ndim != 1 or w.size < 1:
            raise ConfigError("weights must be a nonempty 1D array")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be positive and sum to 1")
        if np.any(s2 <= 0):
            raise ConfigError("component variances must be positive")
        if mu.shape[0] != w.size or mu.ndim not in (1, 2):
            raise ConfigError("means must have shape (K,) or (K, d)")
        self.weights = w
        self.log_weights = np.log(w)
        self.means = mu
        self.variances = s2
        self.separable = mu.ndim == 1
        self._declared = lipschitz

    @property
    def dim(self):
        return None if self.separable else self.means.shape[1]

    def _log_resp(self, x, eps):
        # unnormalized log responsibilities, component axis first
        v = self.variances + eps
        if self.separable:
            shp = (-1,) + (1,) * x.ndim
            d2 = (x[None] - self.means.reshape(shp)) ** 2
            return (self.log_weights.reshape(shp) - 0.5 * d2 / v.reshape(shp)
                    - 0.5 * np.log(v).reshape(shp))
        flat = x.reshape(-1)
        if flat.size != self.means.shape[1]:
            raise DimensionError(f"GMM of dimension {self.means.shape[1]} got input of size {flat.size}")
        d2 = ((flat[None, :] - self.means) ** 2).sum(axis=1)
        return self.log_weights - 0.5 * d2 / v - 0.5 * flat.size * np.log(v)

    def responsibilities(self, x, eps):
        _check_eps(eps)
        x = np.asarray(x, dtype=np.float64)
        lr = self._log_resp(x, eps)
        return np.exp(lr - logsumexp(lr, axis=0, keepdims=True))

    def denoise(self, x, eps):
        _check_eps(eps)
        x = np.asarray(x, dtype=np.float64)
        if self.separable:
            flat = np.ascontiguousarray(x).reshape(-1)
            out = kernels.separable_gmm(flat, self.log_weights, self.means, self.variances, float(eps))
            return out.reshape(x.shape)
        r = self.responsibilities(x, eps)
        s2 = self.variances
        flat = x.reshape(-1)
        comp = (s2[:, None] * flat[None, :] + eps * self.means) / (s2[:, None] + eps)
        return (r[:, None] * comp).sum(axis=0).reshape(x.shape)

    def lipschitz(self, eps):
        if self._declared is not None:
            return float(self._declared)
        if not np.allclose(self.variances, self.variances[0], rtol=0, atol=0):
            raise ConfigError("unequal component variances: declare lipschitz explicitly")
        # Hess log p_eps has eigenvalues in [-1/v, -1/v + diam(means)^2 / (4 v^2)]
        v = self.variances[0] + eps
        mu = self.means if not self.separable else self.means[:, None]
        diam2 = max(((a - b) ** 2).sum() for a in mu for b in mu)
        return eps * max(1.0 / v, diam2 / (4.0 * v * v) - 1.0 / v)


def denoise(d, x, eps):
    return d.denoise(x, eps)


def score(d, x, eps):
    return d.score(x, eps)


def residual_lipschitz_probe(d, eps, n_pairs=100, seed=0, box=(-1.0, 2.0), shape=(1,)):
    """Largest observed ratio ``||R(x1) - R(x2)|| / ||x1 - x2||`` with ``R = Id - D_eps``,
    over ``n_pairs`` uniform random pairs in ``box``."""
    if n_pairs < 1:
        raise ConfigError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = box
    best = 0.0
    for _ in range(n_pairs):
        x1 = rng.uniform(lo, hi, size=shape)
        x2 = rng.uniform(lo, hi, size=shape)
        dx = np.linalg.norm(x1 - x2)
        if dx == 0.0:
            continue
        r = (x1 - d.denoise(x1, eps)) - (x2 - d.denoise(x2, eps))
        best = max(best, float(np.linalg.norm(r)) / dx)
    return best
