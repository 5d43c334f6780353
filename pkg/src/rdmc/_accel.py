"""Backend switch for the compiled kernels.

Set ``RDMC_BACKEND=numpy`` to force the pure-numpy code paths; otherwise numba
is used when it imports cleanly.
"""
import os

BACKEND = os.environ.get("RDMC_BACKEND", "numba").strip().lower()

try:
    if BACKEND == "numpy":
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised through the env flag
    _njit = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and BACKEND != "numpy"


def jit(fn):
    """Compile ``fn`` with numba when enabled, else return it untouched."""
    if USE_NUMBA:
        return _njit(cache=True, nogil=True)(fn)
    return fn
