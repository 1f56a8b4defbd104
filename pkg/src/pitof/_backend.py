"""Kernel backend selection.

Hot kernels exist twice: a numba ``@njit`` version and a vectorized numpy
version. ``PITOF_DISABLE_NUMBA=1`` forces the numpy path; it is also used
automatically when numba is not importable.
"""
import os

ENV_FLAG = "PITOF_DISABLE_NUMBA"

# the bundled TBB is too old for numba; skip straight to omp/workqueue
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _flag_set() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and not _flag_set()


def njit(*args, **kwargs):
    """``numba.njit`` when numba exists, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


if HAVE_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def set_threads(n: int) -> None:
    if HAVE_NUMBA and n and n > 0:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
