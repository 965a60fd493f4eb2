"""Plug & Play unadjusted Langevin sampling for imaging inverse problems."""
from .denoisers import GaussianDenoiser, GMMDenoiser, IdentityDenoiser
from .operators import GaussianLikelihood, Identity, Mask, PeriodicConvolution, make_box_blur, make_mask
from .samplers import ProblemSpec, SamplerConfig, run_chain, run_dense_chain, validate_config

__version__ = "0.1.0"

__all__ = [
    "GaussianDenoiser", "GMMDenoiser", "IdentityDenoiser",
    "GaussianLikelihood", "Identity", "Mask", "PeriodicConvolution", "make_box_blur", "make_mask",
    "ProblemSpec", "SamplerConfig", "run_chain", "run_dense_chain", "validate_config",
]
