"""Numba toggle.

Set ``PNPULA_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. when
numba is unavailable or when debugging a kernel in plain Python.
"""
import os

_flag = os.environ.get("PNPULA_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _flag in ("1", "true", "yes", "on")

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

USE_NUMBA = HAS_NUMBA and not DISABLED_BY_ENV

__all__ = ["njit", "HAS_NUMBA", "USE_NUMBA", "DISABLED_BY_ENV"]
