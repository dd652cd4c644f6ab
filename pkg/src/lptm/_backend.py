"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when importable; set
``LPTM_PURE_PYTHON=1`` to force the numpy fallback.  ``set_backend`` swaps
at runtime (used by the tests and the benchmark).
"""
import os

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_available = {"numpy": _kernels_py}
if _ckernels is not None:
    _available["cython"] = _ckernels

kernels = _kernels_py if os.environ.get("LPTM_PURE_PYTHON") or _ckernels is None else _ckernels


def available():
    return sorted(_available)


def set_backend(name):
    """Select ``"numpy"`` or ``"cython"``; returns the previous backend name."""
    global kernels
    if name not in _available:
        raise ValueError(f"backend {name!r} not available (have {available()})")
    prev = kernels.NAME
    kernels = _available[name]
    return prev


def current():
    return kernels.NAME
