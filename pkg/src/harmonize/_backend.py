"""Numba-vs-numpy backend selection for the hot solver loops.

The solver kernels in :mod:`harmonize._kernels` exist in two builds: a
numba ``@njit`` compilation and the plain-python/numpy original. Which
one runs is decided per call by :func:`active_backend`:

* ``HARMONIZE_BACKEND=numpy`` forces the pure-numpy path,
* ``HARMONIZE_BACKEND=numba`` requires numba (raises if unavailable),
* unset or empty: numba when importable, numpy otherwise.
"""

from __future__ import annotations

import os

BACKEND_ENV = "HARMONIZE_BACKEND"

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        """Stand-in decorator so kernel modules import cleanly without numba."""
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def active_backend() -> str:
    """Return "numba" or "numpy" according to the environment override."""
    forced = os.environ.get(BACKEND_ENV, "").strip().lower()
    if forced in ("numpy", "python"):
        return "numpy"
    if forced == "numba":
        if not HAS_NUMBA:
            raise RuntimeError(
                f"{BACKEND_ENV}=numba requested but numba is not importable"
            )
        return "numba"
    if forced:
        raise ValueError(f"unknown {BACKEND_ENV} value: {forced!r}")
    return "numba" if HAS_NUMBA else "numpy"
