"""Streaming posterior statistics and convergence diagnostics.

Accumulators double as chain observers: each has ``observe(k, image)``.
"""
import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.signal import correlate2d

from .errors import DegenerateTraceError, DimensionError, InsufficientDataError
from .fields import dft2, downsample2


class RunningMoments:
    """Welford accumulator of per-coordinate mean and sum of squared deviations."""

    def __init__(self, shape, domain="pixel"):
        self.shape = tuple(shape)
        self.domain = domain
        self.n = 0
        self.mean = np.zeros(self.shape)
        self.m2 = np.zeros(self.shape)

    def push(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.shape:
            raise DimensionError(f"sample shape {x.shape} != accumulator shape {self.shape}")
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)
        return self

    def observe(self, k, x):
        self.push(x)

    def merge(self, other):
        """Chan et al. pairwise combination; neither input is modified."""
        if self.shape != other.shape or self.domain != other.domain:
            raise DimensionError("cannot merge accumulators of different shape or domain")
        out = RunningMoments(self.shape, self.domain)
        n = self.n + other.n
        out.n = n
        if n == 0:
            return out
        delta = other.mean - self.mean
        out.mean = self.mean + delta * (other.n / n)
        out.m2 = self.m2 + other.m2 + delta ** 2 * (self.n * other.n / n)
        return out

    def copy(self):
        out = RunningMoments(self.shape, self.domain)
        out.n, out.mean, out.m2 = self.n, self.mean.copy(), self.m2.copy()
        return out

    @property
    def variance(self):
        if self.n < 2:
            raise InsufficientDataError(f"variance needs n >= 2, have {self.n}")
        return self.m2 / (self.n - 1)

    def std_map(self):
        return np.sqrt(self.variance)

    def mean_map(self):
        if self.n < 1:
            raise InsufficientDataError("no samples")
        return self.mean.copy()


def update_moments(m, sample):
    return m.push(sample)


def merge_moments(a, b):
    return a.merge(b)


def std_map(m):
    return m.std_map()


def mean_map(m):
    return m.mean_map()


class FourierMoments:
    """Moments of the real and imaginary parts of each sample's unnormalized DFT."""

    def __init__(self, shape):
        self.real = RunningMoments(shape, "fourier-real")
        self.imag = RunningMoments(shape, "fourier-imag")

    def push(self, x):
        xf = dft2(x)
        self.real.push(xf.real)
        self.imag.push(xf.imag)
        return self

    def observe(self, k, x):
        self.push(x)

    def merge(self, other):
        out = FourierMoments(self.real.shape)
        out.real = self.real.merge(other.real)
        out.imag = self.imag.merge(other.imag)
        return out

    def variance(self):
        return self.real.variance, self.imag.variance

    def log_std_map(self):
        """``log`` of the larger of the real/imaginary std per coefficient."""
        vr, vi = self.variance()
        return 0.5 * np.log(np.maximum(np.maximum(vr, vi), 1e-300))


def fourier_moments_update(m_real, m_imag, sample):
    xf = dft2(sample)
    m_real.push(xf.real)
    m_imag.push(xf.imag)
    return m_real, m_imag


class MultiscaleMoments:
    """One accumulator per scale ``i``, fed with ``downsample2(sample, i)``."""

    def __init__(self, shape, i_max):
        h, w = shape
        f = 2 ** i_max
        if h % f or w % f:
            raise DimensionError(f"image {h}x{w} not divisible by 2^{i_max}")
        self.i_max = i_max
        self.scales = [RunningMoments((h >> i, w >> i), f"scale-{i}") for i in range(i_max + 1)]

    def push(self, x):
        for i, m in enumerate(self.scales):
            m.push(downsample2(x, i))
        return self

    def observe(self, k, x):
        self.push(x)

    def merge(self, other):
        out = MultiscaleMoments(self.scales[0].shape, self.i_max)
        out.scales = [a.merge(b) for a, b in zip(self.scales, other.scales)]
        return out


def multiscale_std(ms, i_max=None):
    i_max = ms.i_max if i_max is None else i_max
    if i_max > ms.i_max:
        raise DimensionError(f"only {ms.i_max} scales accumulated")
    return [m.std_map() for m in ms.scales[: i_max + 1]]


# --- statistic selection, traces, ACF ------------------------------------------

class Selection(NamedTuple):
    argmin: tuple
    median: tuple
    argmax: tuple


def _select_flat(values):
    flat = np.asarray(values, dtype=np.float64).ravel()
    order = np.argsort(flat, kind="stable")
    return int(np.argmin(flat)), int(order[(flat.size - 1) // 2]), int(np.argmax(flat))


def select_statistics(variance_map):
    """Coordinates of the smallest, median and largest variance (lowest flat index on ties)."""
    v = np.asarray(variance_map)
    return Selection(*(np.unravel_index(i, v.shape) for i in _select_flat(v)))


def _self_conjugate(shape):
    """Mask of DFT coefficients that are real for every real image."""
    h, w = shape
    rows = np.zeros(h, bool)
    cols = np.zeros(w, bool)
    rows[0] = cols[0] = True
    if h % 2 == 0:
        rows[h // 2] = True
    if w % 2 == 0:
        cols[w // 2] = True
    return rows[:, None] & cols[None, :]


def select_fourier_statistics(fm):
    """Like ``select_statistics`` over real and imaginary variances jointly.

    Each entry is ``(part, index)`` with ``part`` in ``{"real", "imag"}``.
    Imaginary parts of self-conjugate coefficients are identically zero and
    are never selected.
    """
    vr, vi = fm.variance()
    stacked = np.stack([vr, vi])
    valid = np.stack([np.ones(vr.shape, bool), ~_self_conjugate(vr.shape)])
    cand = np.flatnonzero(valid.ravel())
    picks = []
    for j in _select_flat(stacked.ravel()[cand]):
        part, *idx = np.unravel_index(cand[j], stacked.shape)
        picks.append(("real" if part == 0 else "imag", tuple(int(i) for i in idx)))
    return Selection(*picks)


@dataclass
class ScalarTrace:
    iterations: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def append(self, k, value):
        if self.iterations and k <= self.iterations[-1]:
            raise ValueError(f"trace indices must increase: {k} after {self.iterations[-1]}")
        self.iterations.append(int(k))
        self.values.append(float(value))

    def __len__(self):
        return len(self.values)

    def array(self):
        return np.asarray(self.values)

    def to_csv(self, path, name="value"):
        write_csv(path, {"iteration": self.iterations, name: self.values})


def acf(trace, max_lag):
    """Autocorrelation with the biased (full-length) denominator; ``r(0) = 1``."""
    x = trace.array() if isinstance(trace, ScalarTrace) else np.asarray(trace, dtype=np.float64)
    n = x.size
    if n <= max_lag + 1:
        raise InsufficientDataError(f"trace of length {n} too short for max_lag={max_lag}")
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0.0:
        raise DegenerateTraceError("zero-variance trace")
    if max_lag < 64:
        num = np.array([np.dot(xc[: n - l], xc[l:]) for l in range(max_lag + 1)])
    else:
        nfft = 1 << int(math.ceil(math.log2(2 * n)))
        f = np.fft.rfft(xc, nfft)
        num = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    r = num / denom
    r[0] = 1.0
    return r


# --- image quality -----------------------------------------------------------------

def psnr(x, ref, peak=1.0):
    if not peak > 0:
        raise ValueError("peak must be positive")
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise DimensionError("psnr: shape mismatch")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def _gaussian_window(size, sigma):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-r ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, data_range=1.0, win_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over all fully-contained Gaussian windows (valid region)."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape or x.ndim != 2:
        raise DimensionError("ssim: need two images of equal shape")
    size = min(win_size, *x.shape)
    if size % 2 == 0:
        size -= 1
    w = _gaussian_window(size, sigma)

    def filt(a):
        return correlate2d(a, w, mode="valid")

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mx, my = filt(x), filt(ref)
    vx = filt(x * x) - mx * mx
    vy = filt(ref * ref) - my * my
    cxy = filt(x * ref) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx ** 2 + my ** 2 + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


# --- traces over samples -------------------------------------------------------------

def l2_to_reference_trace(samples, ref):
    """``||x_k - ref||`` for an iterable of ``(k, x)`` pairs."""
    ref = np.asarray(ref, dtype=np.float64)
    tr = ScalarTrace()
    for k, x in samples:
        x = np.asarray(x)
        if x.shape != ref.shape:
            raise DimensionError("sample and reference shapes differ")
        tr.append(k, np.linalg.norm(x - ref))
    return tr


def rmse_std_trace(snapshots, final_std):
    """RMSE between each ``(n, std_map)`` snapshot and the final std map."""
    final_std = np.asarray(final_std, dtype=np.float64)
    tr = ScalarTrace()
    for n, s in snapshots:
        s = np.asarray(s)
        if s.shape != final_std.shape:
            raise DimensionError("snapshot and final std shapes differ")
        tr.append(n, math.sqrt(float(np.mean((s - final_std) ** 2))))
    return tr


# --- observers ------------------------------------------------------------------------

class SampleRecorder:
    """Keeps copies of recorded iterates (use thinning to bound memory)."""

    def __init__(self, every=1, max_samples=None):
        self.every = every
        self.max_samples = max_samples
        self.samples = []
        self._seen = 0

    def observe(self, k, x):
        if self._seen % self.every == 0 and (self.max_samples is None or len(self.samples) < self.max_samples):
            self.samples.append((k, np.array(x, copy=True)))
        self._seen += 1


class PSNRTraceObserver:
    """PSNR (and optionally SSIM) of the running mean against a reference image."""

    def __init__(self, truth, peak=1.0, every=1, with_ssim=False):
        self.truth = np.asarray(truth, dtype=np.float64)
        self.peak = peak
        self.every = every
        self.with_ssim = with_ssim
        self.moments = RunningMoments(self.truth.shape)
        self.psnr = ScalarTrace()
        self.ssim = ScalarTrace()

    def observe(self, k, x):
        self.moments.push(x)
        if (self.moments.n - 1) % self.every == 0:
            self.psnr.append(k, psnr(self.moments.mean, self.truth, self.peak))
            if self.with_ssim:
                self.ssim.append(k, ssim(self.moments.mean, self.truth, data_range=self.peak))


class MomentSnapshots:
    """Records ``(n, std_map)`` whenever the sample count reaches a power of two."""

    def __init__(self, shape):
        self.moments = RunningMoments(shape)
        self.snapshots = []

    def observe(self, k, x):
        self.moments.push(x)
        n = self.moments.n
        if n >= 2 and n & (n - 1) == 0:
            self.snapshots.append((n, self.moments.std_map()))

    def trace(self):
        return rmse_std_trace(self.snapshots, self.moments.std_map())


class SelectedTraceObserver:
    """Unthinned traces of the slowest/median/fastest statistics.

    The first ``pilot`` samples only feed variance estimates used to pick the
    statistics; every later sample is appended to the three traces.
    ``domain`` is ``"pixel"`` or ``"fourier"``.
    """

    def __init__(self, shape, pilot=100, domain="pixel"):
        if pilot < 2:
            raise ValueError("pilot must be >= 2")
        self.domain = domain
        self.pilot = pilot
        self.acc = FourierMoments(shape) if domain == "fourier" else RunningMoments(shape)
        self.selection = None
        self.traces = {name: ScalarTrace() for name in Selection._fields}

    def _value(self, x, pick):
        if self.domain == "fourier":
            part, idx = pick
            c = dft2(x)[idx]
            return c.real if part == "real" else c.imag
        return x[pick]

    def observe(self, k, x):
        if self.selection is None:
            self.acc.push(x)
            n = self.acc.real.n if self.domain == "fourier" else self.acc.n
            if n >= self.pilot:
                self.selection = (select_fourier_statistics(self.acc) if self.domain == "fourier"
                                  else select_statistics(self.acc.variance))
            return
        for name, pick in zip(Selection._fields, self.selection):
            self.traces[name].append(k, self._value(x, pick))


def write_csv(path, columns):
    names = list(columns)
    rows = zip(*(columns[n] for n in names))
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(names)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
