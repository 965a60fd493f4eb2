import os
import subprocess
import sys

import numpy as np
import pytest

from pnpula import kernels
from pnpula._accel import HAS_NUMBA
from pnpula.denoisers import GMMDenoiser
from pnpula.samplers import SamplerConfig, run_dense_chain

needs_numba = pytest.mark.skipif(not HAS_NUMBA or kernels.dense_chain_numba is None,
                                 reason="numba backend unavailable")


@needs_numba
@pytest.mark.parametrize("variant", ["pnp-ula", "ppnp-ula"])
def test_dense_chain_backends_agree(variant):
    den = GMMDenoiser([0.2, 0.5, 0.3], [[-1.0, 0.0], [1.0, 1.0], [0.0, -2.0]], [0.3, 0.3, 0.3])
    H = np.array([[2.0, 0.3], [0.3, 1.0]])
    b = np.array([0.5, -0.2])
    cfg = SamplerConfig(delta=0.01, lam=0.2, eps=0.1, c_lo=-1.5, c_hi=1.5, n_iter=3000, variant=variant, seed=3)
    a = run_dense_chain(cfg, den, [3.0, -3.0], likelihood=(H, b), backend="numba", chunk=700)
    c = run_dense_chain(cfg, den, [3.0, -3.0], likelihood=(H, b), backend="numpy", chunk=700)
    assert a.backend == "numba" and c.backend == "numpy"
    assert np.max(np.abs(a.samples - c.samples)) <= 1e-12
    assert a.projection_activations == c.projection_activations


@needs_numba
def test_separable_gmm_backends_agree():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 2, 5000)
    log_w = np.log([0.2, 0.3, 0.5])
    means, s2 = np.array([0.2, 0.5, 0.8]), np.array([0.01, 0.02, 0.0025])
    a = kernels.separable_gmm_numba(x, log_w, means, s2, 0.01)
    b = kernels.separable_gmm_numpy(x, log_w, means, s2, 0.01)
    assert np.allclose(a, b, rtol=0, atol=1e-13)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, PNPULA_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from pnpula import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
