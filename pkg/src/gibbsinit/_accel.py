"""Backend selection for the compiled kernels.

Set ``GIBBSINIT_BACKEND=numpy`` to force the vectorized numpy fallback, e.g. when
numba is unavailable or to cross-check results. Any other value (or unset) uses
numba when it imports cleanly.
"""
import os

BACKEND_ENV = "GIBBSINIT_BACKEND"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None


def _want_numba() -> bool:
    return os.environ.get(BACKEND_ENV, "numba").lower() != "numpy"


HAVE_NUMBA = _numba is not None


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if _numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)


def use_numba() -> bool:
    """Read at call time so tests can flip the flag with ``monkeypatch.setenv``."""
    return HAVE_NUMBA and _want_numba()


def backend_name() -> str:
    return "numba" if use_numba() else "numpy"
