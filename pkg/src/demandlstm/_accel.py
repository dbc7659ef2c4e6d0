"""Optional numba acceleration.

Hot kernels are written once in plain numpy and compiled with ``numba.njit``
when numba is importable and ``DEMANDLSTM_DISABLE_NUMBA`` is unset (or ``0``).
The uncompiled function is always kept around as ``<kernel>.py_func`` so the
two paths can be compared directly.
"""
import logging
import os

log = logging.getLogger(__name__)

ENV_FLAG = "DEMANDLSTM_DISABLE_NUMBA"


def _flag_disabled() -> bool:
    return os.environ.get(ENV_FLAG, "0").strip().lower() not in ("", "0", "false", "no")


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _flag_disabled()


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def kernel(fn):
    """Compile ``fn`` with numba if enabled; otherwise return it unchanged.

    Either way the returned object has a ``py_func`` attribute pointing to the
    pure-numpy implementation.
    """
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    fn.py_func = fn
    return fn


def compile_always(fn):
    """numba-compiled version regardless of the env flag (for benchmarking)."""
    if not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    return numba.njit(cache=True, nogil=True)(fn)
