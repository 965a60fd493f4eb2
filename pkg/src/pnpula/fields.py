"""Numerical substrate: image arrays, seeded Gaussian noise, DFT, downsampling,
box projection and image file formats.

Images are plain 2D ``float64`` numpy arrays (row-major, nominal range [0, 1]).
The DFT convention is unnormalized forward, ``1/(h*w)`` inverse.
"""
import struct

import numpy as np

from .errors import ConfigError, DimensionError

RAW_MAGIC = b"PNPF"


class GaussianStream:
    """Seeded source of i.i.d. standard normal draws.

    Backed by numpy's PCG64 generator with the ziggurat normal transform.
    Sequences are reproducible for a fixed seed within one numpy build.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape):
        return self._gen.standard_normal(shape)

    @property
    def state(self):
        return self._gen.bit_generator.state

    @state.setter
    def state(self, value):
        self._gen.bit_generator.state = value


def gaussian_vector(stream, n):
    """Draw ``n`` standard normal reals from ``stream``."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    return stream.normal(int(n))


def as_image(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2D image, got shape {x.shape}")
    return x


def dft2(x):
    return np.fft.fft2(as_image(x))


def idft2(xf):
    return np.fft.ifft2(xf)


def downsample2(x, levels):
    """Average over non-overlapping ``2**levels`` square blocks."""
    x = as_image(x)
    if levels < 0:
        raise ConfigError("levels must be nonnegative")
    if levels == 0:
        return x.copy()
    f = 2 ** levels
    h, w = x.shape
    if h % f or w % f:
        raise DimensionError(f"image {h}x{w} not divisible by 2^{levels}")
    return x.reshape(h // f, f, w // f, f).mean(axis=(1, 3))


def project_box(x, lo, hi):
    """Euclidean projection onto the box ``[lo, hi]^d`` (componentwise clamp)."""
    if not lo < hi:
        raise ConfigError(f"empty box: lo={lo} >= hi={hi}")
    return np.clip(x, lo, hi)


# --- file formats -----------------------------------------------------------

def write_raw(path, x):
    """Lossless raw image: ``PNPF``, u32 height, u32 width, then f64 LE pixels."""
    x = as_image(x)
    h, w = x.shape
    with open(path, "wb") as f:
        f.write(RAW_MAGIC + struct.pack("<II", h, w))
        f.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def read_raw(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != RAW_MAGIC:
        raise DimensionError(f"{path}: not a PNPF raw image")
    h, w = struct.unpack("<II", data[4:12])
    body = data[12:]
    if len(body) != 8 * h * w:
        raise DimensionError(f"{path}: expected {h * w} pixels, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(h, w)


def write_pgm(path, x, lo=0.0, hi=1.0):
    """Plain (P2) 8-bit preview; values linearly mapped from [lo, hi] to 0..255."""
    x = as_image(x)
    if not hi > lo:
        hi = lo + 1.0
    q = np.clip(np.rint((x - lo) / (hi - lo) * 255.0), 0, 255).astype(int)
    h, w = q.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(map(str, row)) for row in q]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_pgm(path):
    """Read P2 or P5 PGM, returning values scaled to [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise DimensionError(f"{path}: unsupported PGM magic {magic!r}")
    # header tokens, skipping comments
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    w, h, maxval = tokens
    if magic == b"P2":
        vals = np.array(data[pos:].split(), dtype=np.float64)
    else:
        pos += 1
        dt = ">u2" if maxval > 255 else "u1"
        vals = np.frombuffer(data[pos:], dtype=dt).astype(np.float64)
    if vals.size != h * w:
        raise DimensionError(f"{path}: expected {h * w} pixels, found {vals.size}")
    return vals.reshape(h, w) / maxval


def read_image(path):
    path = str(path)
    if path.endswith((".pgm", ".pnm")):
        return read_pgm(path)
    return read_raw(path)
