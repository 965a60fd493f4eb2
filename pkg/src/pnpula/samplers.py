"""PnP-ULA and PPnP-ULA chains, parameter rules, and the chain runner."""
import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .denoisers import GaussianDenoiser, GMMDenoiser, IdentityDenoiser
from .errors import ConfigError, DimensionError, DivergenceError
from .fields import GaussianStream, project_box, read_raw, write_raw
from .operators import GaussianLikelihood, Identity, Mask

log = logging.getLogger(__name__)

VARIANTS = ("pnp-ula", "ppnp-ula")
DEFAULT_EPS = (5.0 / 255.0) ** 2


@dataclass
class SamplerConfig:
    delta: float
    lam: float
    alpha: float = 1.0
    eps: float = DEFAULT_EPS
    c_lo: float = -1.0
    c_hi: float = 2.0
    n_iter: int = 1000
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0
    variant: str = "pnp-ula"
    strict: bool = True

    def __post_init__(self):
        for name in ("delta", "lam", "alpha", "eps"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.c_lo < self.c_hi:
            raise ConfigError(f"empty box C=[{self.c_lo}, {self.c_hi}]")
        if self.n_iter < 1 or not 0 <= self.burn_in < self.n_iter:
            raise ConfigError(f"need 0 <= burn_in < n_iter, got {self.burn_in}, {self.n_iter}")
        if self.thinning < 1:
            raise ConfigError("thinning must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def projected(self):
        return self.variant == "ppnp-ula"

    def config_hash(self):
        # n_iter excluded so a run can be resumed with a longer horizon
        d = asdict(self)
        d.pop("n_iter")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def is_recorded(self, k):
        """Whether iterate ``k`` (1-based) is passed to observers."""
        return k > self.burn_in and (k - self.burn_in - 1) % self.thinning == 0


@dataclass
class ChainState:
    x: np.ndarray
    k: int
    rng: GaussianStream


class ProblemSpec:
    """What is being sampled: task, likelihood or mask, and the denoiser.

    For inpainting the chain state is the vector of hidden pixels; observers
    always see full images.
    """

    def __init__(self, task, denoiser, likelihood=None, mask=None, y=None,
                 ground_truth=None, shape=None):
        if task not in ("deblur", "denoise", "inpaint", "prior"):
            raise ConfigError(f"unknown task {task!r}")
        self.task = task
        self.denoiser = denoiser
        self.likelihood = likelihood
        self.mask = mask
        self.y = None if y is None else np.asarray(y, dtype=np.float64)
        self.ground_truth = ground_truth
        if task == "inpaint":
            if mask is None or self.y is None:
                raise ConfigError("inpainting needs a mask and an observation")
            if self.y.shape != mask.out_shape:
                raise DimensionError("observation does not match mask")
            self.shape = mask.in_shape
        elif task in ("deblur", "denoise"):
            if likelihood is None:
                raise ConfigError(f"{task} needs a likelihood")
            self.shape = likelihood.shape
        else:
            if shape is None:
                raise ConfigError("prior-only problem needs a shape")
            self.shape = tuple(shape)
        if ground_truth is not None and np.shape(ground_truth) != self.shape:
            raise DimensionError("ground truth does not match problem shape")

    @classmethod
    def deblur(cls, likelihood, denoiser, ground_truth=None):
        return cls("deblur", denoiser, likelihood=likelihood, ground_truth=ground_truth)

    @classmethod
    def denoising(cls, y, sigma, denoiser, ground_truth=None):
        y = np.asarray(y, dtype=np.float64)
        lik = GaussianLikelihood(Identity(y.shape), y, sigma)
        return cls("denoise", denoiser, likelihood=lik, ground_truth=ground_truth)

    @classmethod
    def inpaint(cls, mask, y, denoiser, ground_truth=None):
        return cls("inpaint", denoiser, mask=mask, y=y, ground_truth=ground_truth)

    @classmethod
    def prior(cls, shape, denoiser):
        return cls("prior", denoiser, shape=shape)

    @property
    def is_inpainting(self):
        return self.task == "inpaint"

    @property
    def state_shape(self):
        return (self.mask.hidden.size,) if self.is_inpainting else self.shape

    @property
    def likelihood_lipschitz(self):
        return self.likelihood.lipschitz if self.likelihood is not None else 0.0

    @property
    def concavity(self):
        return self.likelihood.concavity if self.likelihood is not None else 0.0

    def initial_state(self):
        if self.is_inpainting:
            return np.zeros(self.mask.hidden.size)
        if self.likelihood is None:
            return np.zeros(self.shape)
        lik = self.likelihood
        if lik.y.shape == self.shape:
            return lik.y.copy()
        return lik.op.adjoint(lik.y)

    def to_image(self, x):
        if self.is_inpainting:
            return self.mask.embed(x, self.y)
        return x

    def validate(self, cfg):
        return validate_config(cfg, self.denoiser.lipschitz(cfg.eps), self.likelihood_lipschitz,
                               m=self.concavity or None, inpainting=self.is_inpainting)


# --- drifts -----------------------------------------------------------------

def _prior_drift(x, problem, cfg):
    if problem.is_inpainting:
        full = problem.mask.embed(x, problem.y)
        res = problem.denoiser.denoise(full, cfg.eps) - full
        return cfg.alpha * problem.mask.restrict_hidden(res) / cfg.eps
    g = cfg.alpha * (problem.denoiser.denoise(x, cfg.eps) - x) / cfg.eps
    if problem.likelihood is not None:
        g = g + problem.likelihood.grad(x)
    return g


def _tail(x, cfg):
    return (np.clip(x, cfg.c_lo, cfg.c_hi) - x) / cfg.lam


def drift_pnp(x, problem, cfg):
    """PnP-ULA drift: likelihood gradient + scaled denoiser residual + tail term."""
    x = np.asarray(x, dtype=np.float64)
    return _prior_drift(x, problem, cfg) + _tail(x, cfg)


def inpainting_reduced_drift(xt, y, mask, denoiser, cfg):
    """Drift on the hidden pixels: ``(alpha/eps) P (D - Id)(f_y(xt))`` + tail term."""
    xt = np.asarray(xt, dtype=np.float64)
    if xt.shape != (mask.hidden.size,):
        raise DimensionError(f"expected {mask.hidden.size} hidden pixels, got {xt.shape}")
    full = mask.embed(xt, y)
    res = denoiser.denoise(full, cfg.eps) - full
    return cfg.alpha * mask.restrict_hidden(res) / cfg.eps + _tail(xt, cfg)


def step(state, problem, cfg, z=None):
    """One chain transition. ``z`` overrides the Gaussian draw (for testing)."""
    x = state.x
    if z is None:
        z = state.rng.normal(x.shape)
    noise = math.sqrt(2.0 * cfg.delta) * z
    if cfg.projected:
        xn = project_box(x + cfg.delta * _prior_drift(x, problem, cfg) + noise, cfg.c_lo, cfg.c_hi)
    else:
        xn = x + cfg.delta * drift_pnp(x, problem, cfg) + noise
    k = state.k + 1
    if not np.all(np.isfinite(xn)):
        raise DivergenceError(k)
    return ChainState(xn, k, state.rng)


# --- parameter rules ----------------------------------------------------------

@dataclass
class ValidationReport:
    lambda_max: float
    lambda_max_alt: float
    lip: float
    delta_th: float
    delta_ppnp: float
    delta_strong: Optional[float]
    lambda_ok: bool
    delta_ok: bool
    ppnp_ok: bool

    @property
    def passed(self):
        return self.lambda_ok and self.delta_ok

    def lines(self):
        out = [
            f"lambda_max      = {self.lambda_max:.6g}  (2 lam (2 L_y + alpha L/eps) <= 1)",
            f"lambda_max_alt  = {self.lambda_max_alt:.6g}  (2 lam (L_y + L/eps - min(m,0)) <= 1, reported only)",
            f"Lip(b_eps)      = {self.lip:.6g}",
            f"delta_th        = {self.delta_th:.6g}  (1/3 Lip^-1)",
            f"delta_ppnp_max  = {self.delta_ppnp:.6g}  ((L/eps + L_y)^-1, advisory)",
        ]
        if self.delta_strong is not None:
            out.append(f"delta_strong    = {self.delta_strong:.6g}  (m (L_y + alpha L/eps)^-2 / 2)")
        out.append(f"lambda rule: {'pass' if self.lambda_ok else 'FAIL'}; "
                   f"delta rule: {'pass' if self.delta_ok else 'FAIL'}")
        return out


def _inv(v):
    return math.inf if v == 0 else 1.0 / v


def validate_config(cfg, L, L_y, m=None, inpainting=False):
    """Step-size and tail-parameter rules for the given constants.

    ``L`` is the denoiser residual Lipschitz constant, ``L_y`` the likelihood
    gradient's, ``m`` an optional strong-concavity constant of the log-likelihood.
    """
    if L < 0 or L_y < 0:
        raise ConfigError("Lipschitz constants must be nonnegative")
    if inpainting:
        L_y = 0.0
    prior_lip = cfg.alpha * L / cfg.eps
    lambda_max = _inv(2.0 * (2.0 * L_y + prior_lip))
    m_neg = min(m or 0.0, 0.0)
    lambda_max_alt = _inv(2.0 * (L_y + L / cfg.eps - m_neg))
    lip = prior_lip + L_y + 1.0 / cfg.lam
    delta_th = (1.0 / 3.0) / lip
    delta_ppnp = _inv(L / cfg.eps + L_y)
    delta_strong = None
    if m is not None and m > 0:
        delta_strong = m * (L_y + prior_lip) ** -2 / 2.0 if (L_y + prior_lip) > 0 else math.inf
    return ValidationReport(
        lambda_max=lambda_max,
        lambda_max_alt=lambda_max_alt,
        lip=lip,
        delta_th=delta_th,
        delta_ppnp=delta_ppnp,
        delta_strong=delta_strong,
        lambda_ok=cfg.lam <= lambda_max,
        delta_ok=cfg.delta < delta_th,
        ppnp_ok=cfg.delta < delta_ppnp,
    )


def _check_config(problem, cfg):
    report = problem.validate(cfg)
    if cfg.projected:
        if not report.ppnp_ok:
            warnings.warn(f"PPnP-ULA step {cfg.delta:.3g} exceeds (L/eps + L_y)^-1 = "
                          f"{report.delta_ppnp:.3g}; expect extra bias", stacklevel=3)
    elif not report.passed:
        msg = "; ".join(report.lines()[-1:]) + f" (delta={cfg.delta:.6g}, lambda={cfg.lam:.6g})"
        if cfg.strict:
            raise ConfigError("PnP-ULA parameter rules violated: " + msg)
        warnings.warn("running outside PnP-ULA parameter rules: " + msg, stacklevel=3)
    return report


# --- chain runner -------------------------------------------------------------

@dataclass
class ChainSummary:
    state: ChainState
    iterations: int
    observers: list
    report: Optional[ValidationReport] = None
    partial: bool = False
    error: Optional[BaseException] = None
    projection_activations: int = 0
    extra: dict = field(default_factory=dict)


def run_chain(problem, cfg, observers=(), x0=None, state=None, validate=True):
    """Run the chain to ``cfg.n_iter`` iterations, feeding recorded iterates to observers.

    Each observer gets ``observe(k, image)`` for every post-burn-in iterate on
    the thinning grid. Pass ``state`` (e.g. from ``load_checkpoint``) to resume.
    """
    report = _check_config(problem, cfg) if validate else None
    if state is None:
        x = problem.initial_state() if x0 is None else np.array(x0, dtype=np.float64)
        if x.shape != problem.state_shape:
            raise DimensionError(f"initial state shape {x.shape} != {problem.state_shape}")
        if cfg.projected:
            x = project_box(x, cfg.c_lo, cfg.c_hi)
        state = ChainState(x, 0, GaussianStream(cfg.seed))
    observers = list(observers)
    diam = (cfg.c_hi - cfg.c_lo) * math.sqrt(state.x.size)
    warned = False
    activations = 0
    start = state.k
    while state.k < cfg.n_iter:
        if not cfg.projected and np.any((state.x < cfg.c_lo) | (state.x > cfg.c_hi)):
            activations += 1
        state = step(state, problem, cfg)
        if not cfg.projected and not warned and np.linalg.norm(state.x) > 10 * diam:
            warnings.warn(f"iterate norm exceeds 10x diam(C) at k={state.k}", stacklevel=2)
            warned = True
        if cfg.is_recorded(state.k):
            img = problem.to_image(state.x)
            try:
                for obs in observers:
                    obs.observe(state.k, img)
            except Exception as exc:
                log.error("observer failed at k=%d: %s", state.k, exc)
                return ChainSummary(state, state.k - start, observers, report, partial=True,
                                    error=exc, projection_activations=activations)
    return ChainSummary(state, state.k - start, observers, report,
                        projection_activations=activations)


# --- dense low-dimensional chains ---------------------------------------------

def dense_likelihood(lik):
    """``(H, b)`` with ``grad log p(y|x) = b - H x`` for a small problem (flattened)."""
    d = int(np.prod(lik.shape))
    H = np.empty((d, d))
    e = np.zeros(d)
    for i in range(d):
        e[i] = 1.0
        H[:, i] = lik.op.normal(e.reshape(lik.shape)).ravel()
        e[i] = 0.0
    H /= lik.sigma ** 2
    b = lik.op.adjoint(lik.y).ravel() / lik.sigma ** 2
    return H, b


def _mixture_arrays(denoiser, d):
    if isinstance(denoiser, IdentityDenoiser):
        return np.zeros(0), np.zeros((0, d)), np.zeros(0)
    if isinstance(denoiser, GaussianDenoiser):
        mean = np.broadcast_to(denoiser.mean, (d,)).reshape(1, d).copy()
        return np.zeros(1), mean, np.array([denoiser.variance])
    if isinstance(denoiser, GMMDenoiser):
        if denoiser.separable and d != 1:
            raise ConfigError("dense chains need a joint GMM (means of shape (K, d))")
        means = denoiser.means.reshape(len(denoiser.weights), -1)
        if means.shape[1] != d:
            raise DimensionError(f"GMM dimension {means.shape[1]} != state dimension {d}")
        return denoiser.log_weights.copy(), means.copy(), denoiser.variances.copy()
    raise ConfigError(f"dense chains do not support {denoiser.kind} denoisers")


@dataclass
class DenseChainResult:
    samples: np.ndarray
    final: np.ndarray
    projection_activations: int
    backend: str


def run_dense_chain(cfg, denoiser, x0, likelihood=None, chunk=1 << 16, backend=None):
    """Low-dimensional chain through the compiled kernel.

    Returns every recorded iterate (burn-in and thinning applied) as rows.
    ``likelihood`` is ``None`` (prior only), a ``GaussianLikelihood``, or an
    explicit ``(H, b)`` pair.
    """
    x = np.array(x0, dtype=np.float64).ravel()
    d = x.size
    if likelihood is None:
        H, b = np.zeros((0, 0)), np.zeros(0)
    elif isinstance(likelihood, GaussianLikelihood):
        H, b = dense_likelihood(likelihood)
    else:
        H, b = (np.asarray(a, dtype=np.float64) for a in likelihood)
    log_w, means, s2 = _mixture_arrays(denoiser, d)
    fn = {"numba": kernels.dense_chain_numba, "numpy": kernels.dense_chain_numpy,
          None: kernels.dense_chain}[backend]
    if fn is None:
        raise ConfigError("numba backend unavailable")
    if cfg.projected:
        x = np.clip(x, cfg.c_lo, cfg.c_hi)
    rng = GaussianStream(cfg.seed)
    kept = []
    outside = 0
    k = 0
    while k < cfg.n_iter:
        n = min(chunk, cfg.n_iter - k)
        noise = rng.normal((n, d))
        path, n_out, bad = fn(x, noise, cfg.delta, cfg.alpha, cfg.eps, cfg.lam,
                              cfg.c_lo, cfg.c_hi, cfg.projected, H, b, log_w, means, s2)
        if bad >= 0:
            raise DivergenceError(k + bad + 1)
        outside += n_out
        ks = np.arange(k + 1, k + n + 1)
        sel = (ks > cfg.burn_in) & ((ks - cfg.burn_in - 1) % cfg.thinning == 0)
        kept.append(path[sel])
        x = path[-1].copy()
        k += n
    samples = np.concatenate(kept) if kept else np.zeros((0, d))
    return DenseChainResult(samples, x, outside, "numba" if fn is kernels.dense_chain_numba else "numpy")


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, state, cfg):
    """Write ``<path>.pnpf`` (state as raw image) and ``<path>.ckpt`` (sidecar)."""
    path = Path(path)
    x = state.x if state.x.ndim == 2 else state.x.reshape(1, -1)
    write_raw(path.with_suffix(".pnpf"), x)
    side = {
        "k": state.k,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "state_shape": list(state.x.shape),
        "rng_state": json.dumps(state.rng.state),
    }
    with open(path.with_suffix(".ckpt"), "w") as f:
        for key, val in side.items():
            f.write(f"{key}={json.dumps(val) if not isinstance(val, str) else val}\n")


def load_checkpoint(path, cfg):
    path = Path(path)
    side = {}
    with open(path.with_suffix(".ckpt")) as f:
        for line in f:
            if "=" in line:
                key, val = line.rstrip("\n").split("=", 1)
                side[key] = val
    if side["config_hash"] != cfg.config_hash():
        raise ConfigError("checkpoint was written with a different sampler configuration")
    x = read_raw(path.with_suffix(".pnpf")).reshape(json.loads(side["state_shape"]))
    rng = GaussianStream(int(side["seed"]))
    rng.state = json.loads(side["rng_state"])
    return ChainState(x, int(side["k"]), rng)
