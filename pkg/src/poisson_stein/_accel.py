"""Backend switch for the numeric kernels.

Every hot kernel exists twice: a numba ``@njit`` version and a pure numpy
version.  Set ``POISSON_STEIN_DISABLE_NUMBA=1`` (or have numba missing) to run
the numpy path.  The two paths agree up to floating-point rounding (exactly,
for the integer-valued statistics).
"""

import os

_FLAG = "POISSON_STEIN_DISABLE_NUMBA"

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def numba_enabled():
    return HAVE_NUMBA and os.environ.get(_FLAG, "0").lower() not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` with caching and GIL release, or a no-op decorator."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if HAVE_NUMBA:
        import numba

        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if args and callable(args[0]):
        return args[0]
    return wrap
