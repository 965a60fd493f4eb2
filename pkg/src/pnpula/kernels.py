"""Hot loops: low-dimensional chains and the per-pixel mixture denoiser.

``dense_chain`` advances PnP-ULA / PPnP-ULA for a problem whose likelihood
gradient is affine (``b - H x``) and whose denoiser is an isotropic Gaussian
mixture over the whole state (``K = 0`` means the identity denoiser). Both
implementations consume the same pre-drawn noise, so they produce the same
path up to rounding.

``separable_gmm`` is the MMSE denoiser of a per-pixel Gaussian mixture.

The numba versions are used unless ``PNPULA_DISABLE_NUMBA`` is set.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


def _dense_chain_loop(x0, noise, delta, alpha, eps, lam, lo, hi, projected,
                      H, b, log_w, means, s2):
    n, d = noise.shape
    K = log_w.shape[0]
    has_lik = H.shape[0] == d
    path = np.empty((n, d))
    x = x0.copy()
    drift = np.empty(d)
    den = np.empty(d)
    logr = np.empty(K)
    sq = np.sqrt(2.0 * delta)
    n_outside = 0
    bad = -1
    for t in range(n):
        for i in range(d):
            drift[i] = 0.0
        if has_lik:
            for i in range(d):
                acc = b[i]
                for j in range(d):
                    acc -= H[i, j] * x[j]
                drift[i] = acc
        if K > 0:
            mx = -np.inf
            for k in range(K):
                v = s2[k] + eps
                dist = 0.0
                for i in range(d):
                    diff = x[i] - means[k, i]
                    dist += diff * diff
                logr[k] = log_w[k] - 0.5 * dist / v - 0.5 * d * np.log(v)
                if logr[k] > mx:
                    mx = logr[k]
            tot = 0.0
            for k in range(K):
                logr[k] = np.exp(logr[k] - mx)
                tot += logr[k]
            for i in range(d):
                den[i] = 0.0
            for k in range(K):
                r = logr[k] / tot
                c = s2[k] + eps
                for i in range(d):
                    den[i] += r * (s2[k] * x[i] + eps * means[k, i]) / c
            for i in range(d):
                drift[i] += alpha * (den[i] - x[i]) / eps
        out = False
        for i in range(d):
            if x[i] < lo or x[i] > hi:
                out = True
        if out:
            n_outside += 1
        if not projected and out:
            for i in range(d):
                xi = x[i]
                c = lo if xi < lo else (hi if xi > hi else xi)
                drift[i] += (c - xi) / lam
        finite = True
        for i in range(d):
            xn = x[i] + delta * drift[i] + sq * noise[t, i]
            if projected:
                xn = lo if xn < lo else (hi if xn > hi else xn)
            if not np.isfinite(xn):
                finite = False
            x[i] = xn
            path[t, i] = xn
        if not finite:
            bad = t
            break
    return path, n_outside, bad


def _dense_chain_numpy(x0, noise, delta, alpha, eps, lam, lo, hi, projected,
                       H, b, log_w, means, s2):
    n, d = noise.shape
    K = log_w.shape[0]
    has_lik = H.shape[0] == d
    path = np.empty((n, d))
    x = x0.copy()
    sq = np.sqrt(2.0 * delta)
    v = s2 + eps
    logv = 0.5 * d * np.log(v)
    n_outside = 0
    for t in range(n):
        drift = b - H @ x if has_lik else np.zeros(d)
        if K > 0:
            lr = log_w - 0.5 * ((x - means) ** 2).sum(axis=1) / v - logv
            r = np.exp(lr - lr.max())
            r /= r.sum()
            comp = (s2[:, None] * x + eps * means) / v[:, None]
            drift = drift + alpha * (r @ comp - x) / eps
        c = np.clip(x, lo, hi)
        if np.any(c != x):
            n_outside += 1
            if not projected:
                drift = drift + (c - x) / lam
        x = x + delta * drift + sq * noise[t]
        if projected:
            x = np.clip(x, lo, hi)
        path[t] = x
        if not np.all(np.isfinite(x)):
            return path, n_outside, t
    return path, n_outside, -1


def _separable_gmm_loop(x, log_w, means, s2, eps):
    n = x.shape[0]
    K = log_w.shape[0]
    out = np.empty(n)
    lr = np.empty(K)
    base = np.empty(K)
    half_inv = np.empty(K)
    gain = np.empty(K)
    shift = np.empty(K)
    for k in range(K):
        v = s2[k] + eps
        base[k] = log_w[k] - 0.5 * np.log(v)
        half_inv[k] = 0.5 / v
        gain[k] = s2[k] / v
        shift[k] = eps * means[k] / v
    for i in range(n):
        xi = x[i]
        mx = -np.inf
        for k in range(K):
            d = xi - means[k]
            lr[k] = base[k] - d * d * half_inv[k]
            if lr[k] > mx:
                mx = lr[k]
        tot = 0.0
        acc = 0.0
        for k in range(K):
            r = np.exp(lr[k] - mx)
            tot += r
            acc += r * (gain[k] * xi + shift[k])
        out[i] = acc / tot
    return out


def _separable_gmm_numpy(x, log_w, means, s2, eps):
    v = s2 + eps
    lr = log_w[:, None] - 0.5 * (x[None, :] - means[:, None]) ** 2 / v[:, None] - 0.5 * np.log(v)[:, None]
    r = np.exp(lr - lr.max(axis=0))
    comp = (s2[:, None] * x[None, :] + eps * means[:, None]) / v[:, None]
    return (r * comp).sum(axis=0) / r.sum(axis=0)


separable_gmm_numba = njit(cache=True)(_separable_gmm_loop) if USE_NUMBA else None
separable_gmm_numpy = _separable_gmm_numpy
separable_gmm = separable_gmm_numba if USE_NUMBA else separable_gmm_numpy

dense_chain_numba = njit(cache=True)(_dense_chain_loop) if USE_NUMBA else None
dense_chain_numpy = _dense_chain_numpy
dense_chain = dense_chain_numba if USE_NUMBA else dense_chain_numpy
BACKEND = "numba" if USE_NUMBA else "numpy"
