"""Numba switch shared by every hot kernel.

Kernels are written once as plain Python loops and compiled with ``njit``
when numba is importable and ``AUTOCO_DISABLE_NUMBA`` is unset. Callers do
not use the loop versions directly; each kernel module pairs them with a
vectorised numpy implementation and picks one through :func:`use_numba`.
"""

from __future__ import annotations

import os
import warnings

_FLAG = "AUTOCO_DISABLE_NUMBA"


class PerformanceWarning(UserWarning):
    pass


def _env_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False
    _numba_njit = None

_enabled = HAVE_NUMBA and not _env_disabled()


def njit(func):
    """Compile ``func`` in nopython mode with caching, or return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return _numba_njit(cache=True, nogil=True)(func)


def use_numba() -> bool:
    return _enabled


def set_backend(name: str) -> None:
    """Select ``"numba"`` or ``"numpy"`` at runtime (benchmarks and parity tests)."""
    global _enabled
    if name == "numba":
        if not HAVE_NUMBA:
            warnings.warn("numba is not installed; staying on numpy", PerformanceWarning)
            return
        _enabled = True
    elif name == "numpy":
        _enabled = False
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend() -> str:
    return "numba" if _enabled else "numpy"
