"""Kernel backend selection.

Hot loops live in ``_kernels_numba`` (compiled with ``numba.njit``) and have a
vectorised twin in ``_kernels_numpy``.  The numba path is used when numba
imports cleanly and ``ONESHOT_SEG_NUMBA`` is not set to ``0``.  Both paths
return identical results for integer kernels; float kernels agree to rounding.
"""

import os

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("ONESHOT_SEG_NUMBA", "1") != "0"


def kernels(use_numba=None):
    """Return the kernel module for the requested (or configured) backend."""
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        from . import _kernels_numba as mod
    else:
        from . import _kernels_numpy as mod
    return mod


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
