"""JIT switch for the hot kernels.

Set ``SSOLAB_NO_JIT=1`` before import to run every kernel as plain Python on
numpy arrays. Both paths execute the same source; the compiled one is faster.
"""
import os

JIT_DISABLED = os.environ.get("SSOLAB_NO_JIT", "").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USING_NUMBA = numba is not None and not JIT_DISABLED


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when enabled, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if USING_NUMBA:
            return numba.njit(**kwargs)(f)
        return f

    if func is not None:
        return wrap(func)
    return wrap
