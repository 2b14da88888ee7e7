"""Switch between numba-compiled kernels and the pure-numpy fallback.

Set ``ODSD_DISABLE_JIT=1`` before import to force the numpy path (useful when
numba is unavailable or when debugging kernels line by line).
"""
import os

_DISABLE = os.environ.get("ODSD_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba
except ImportError:  # pragma: no cover - numba ships with the dev environment
    numba = None

JIT_ENABLED = numba is not None and not _DISABLE


def njit(func):
    """Compile ``func`` in nopython mode when the JIT is enabled, else return it unchanged."""
    if JIT_ENABLED:
        return numba.njit(cache=True, nogil=True)(func)
    return func
