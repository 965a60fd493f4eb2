"""Linear forward models and the Gaussian likelihood built on them."""
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError


class LinearOperator:
    """Base class. Inputs are images of ``in_shape``; outputs have ``out_shape``."""

    kind = "abstract"

    def __init__(self, in_shape, out_shape):
        self.in_shape = tuple(in_shape)
        self.out_shape = tuple(out_shape)

    def _check(self, x, shape):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != shape:
            raise DimensionError(f"{self.kind}: expected shape {shape}, got {x.shape}")
        return x

    def apply(self, x):
        return self._apply(self._check(x, self.in_shape))

    def adjoint(self, y):
        return self._adjoint(self._check(y, self.out_shape))

    def normal(self, x):
        """``A^T A x``."""
        return self.adjoint(self.apply(x))

    def describe(self):
        return {"kind": self.kind, "shape": "x".join(map(str, self.in_shape))}


class Identity(LinearOperator):
    kind = "identity"

    def __init__(self, shape):
        super().__init__(shape, shape)

    def _apply(self, x):
        return x.copy()

    def _adjoint(self, y):
        return y.copy()


class PeriodicConvolution(LinearOperator):
    """Circular convolution by a small kernel, diagonalized by the 2D DFT.

    The kernel's centre pixel sits at offset (0, 0) so an odd symmetric kernel
    does not shift the image.
    """

    kind = "periodic-convolution"

    def __init__(self, kernel, shape):
        kernel = np.asarray(kernel, dtype=np.float64)
        kh, kw = kernel.shape
        h, w = shape
        if kh > h or kw > w:
            raise ConfigError(f"kernel {kh}x{kw} larger than image {h}x{w}")
        super().__init__(shape, shape)
        self.kernel = kernel
        pad = np.zeros(shape)
        pad[:kh, :kw] = kernel
        pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
        self.transfer = np.fft.rfft2(pad)

    def _apply(self, x):
        return np.fft.irfft2(np.fft.rfft2(x) * self.transfer, s=self.in_shape)

    def _adjoint(self, y):
        return np.fft.irfft2(np.fft.rfft2(y) * np.conj(self.transfer), s=self.in_shape)

    def normal(self, x):
        x = self._check(x, self.in_shape)
        return np.fft.irfft2(np.fft.rfft2(x) * self._gain, s=self.in_shape)

    @property
    def _gain(self):
        g = getattr(self, "_gain_cache", None)
        if g is None:
            g = self._gain_cache = np.abs(self.transfer) ** 2
        return g

    def describe(self):
        d = super().describe()
        d["kernel_size"] = "x".join(map(str, self.kernel.shape))
        return d


class Mask(LinearOperator):
    """Row selection of the identity: keeps the pixels at sorted flat ``indices``."""

    kind = "mask"

    def __init__(self, indices, shape):
        idx = np.asarray(indices, dtype=np.int64)
        n = int(np.prod(shape))
        if idx.ndim != 1 or (idx.size > 1 and np.any(np.diff(idx) <= 0)):
            raise ConfigError("mask indices must be strictly increasing")
        if idx.size and (idx[0] < 0 or idx[-1] >= n):
            raise ConfigError("mask index out of range")
        super().__init__(shape, (idx.size,))
        self.indices = idx
        hidden = np.ones(n, dtype=bool)
        hidden[idx] = False
        self.hidden = np.flatnonzero(hidden)

    def _apply(self, x):
        return x.ravel()[self.indices].copy()

    def _adjoint(self, y):
        out = np.zeros(int(np.prod(self.in_shape)))
        out[self.indices] = y
        return out.reshape(self.in_shape)

    def embed(self, hidden_values, y):
        """``f_y(x~) = P^T x~ + A^T y``: fill hidden pixels, observed ones from ``y``."""
        out = np.empty(int(np.prod(self.in_shape)))
        out[self.hidden] = hidden_values
        out[self.indices] = y
        return out.reshape(self.in_shape)

    def restrict_hidden(self, x):
        """``P x``: the hidden-pixel coordinates of a full image."""
        return np.asarray(x).ravel()[self.hidden]


def make_box_blur(size, h, w):
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"box blur size must be odd and positive, got {size}")
    if size > min(h, w):
        raise ConfigError(f"box size {size} exceeds image {h}x{w}")
    return PeriodicConvolution(np.full((size, size), 1.0 / size ** 2), (h, w))


def make_mask(h, w, hidden_fraction, seed=0):
    if not 0.0 < hidden_fraction < 1.0:
        raise ConfigError(f"hidden_fraction must lie in (0, 1), got {hidden_fraction}")
    n = h * w
    n_keep = int(round((1.0 - hidden_fraction) * n))
    rng = np.random.default_rng(seed)
    kept = np.sort(rng.choice(n, size=n_keep, replace=False))
    return Mask(kept, (h, w))


def apply(op, x):
    return op.apply(x)


def adjoint(op, y):
    return op.adjoint(y)


class NormEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def operator_norm_sq(op, max_iters=1000, tol=1e-12, seed=0):
    """Power iteration on ``A^T A``; returns the Rayleigh quotient estimate."""
    if max_iters < 1 or tol <= 0:
        raise ConfigError("need max_iters >= 1 and tol > 0")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.in_shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for it in range(1, max_iters + 1):
        w = op.normal(v)
        new = float(np.vdot(v, w))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return NormEstimate(0.0, True, it)
        v = w / nw
        if it > 1 and abs(new - est) <= tol * abs(new):
            return NormEstimate(new, True, it)
        est = new
    return NormEstimate(est, False, max_iters)


class GaussianLikelihood:
    """``p(y|x) ∝ exp(-||Ax - y||² / (2σ²))`` with cached Lipschitz constants.

    ``lipschitz`` is ``||A^T A|| / σ²``; ``concavity`` is the one-sided
    constant ``m`` (``1/σ²`` for the identity operator, otherwise 0).
    """

    def __init__(self, op, y, sigma, norm_sq=None):
        if not sigma > 0:
            raise ConfigError(f"noise std must be positive, got {sigma}")
        y = np.asarray(y, dtype=np.float64)
        if y.shape != op.out_shape:
            raise DimensionError(f"observation shape {y.shape} != operator output {op.out_shape}")
        self.op = op
        self.y = y
        self.sigma = float(sigma)
        if norm_sq is None:
            norm_sq = 1.0 if isinstance(op, Identity) else operator_norm_sq(op).value
        self.norm_sq = float(norm_sq)
        self.lipschitz = self.norm_sq / self.sigma ** 2
        self.concavity = 1.0 / self.sigma ** 2 if isinstance(op, Identity) else 0.0
        self._aty = op.adjoint(y) / self.sigma ** 2

    @property
    def shape(self):
        return self.op.in_shape

    def log_likelihood(self, x):
        r = self.op.apply(x) - self.y
        return -0.5 * float(np.vdot(r, r)) / self.sigma ** 2

    def grad(self, x):
        return self._aty - self.op.normal(x) / self.sigma ** 2


def grad_log_likelihood(lik, x):
    return lik.grad(x)
