"""Kernel backend selection.

The compiled Cython extension is used when importable; otherwise (or when
``GEOCHART_PURE_PYTHON`` is set) the numpy fallback takes over.
"""

import os

from . import _fallback

if os.environ.get("GEOCHART_PURE_PYTHON"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND = "python" if _impl is _fallback else "cython"

UNREACHED = _fallback.UNREACHED
SOURCE = _fallback.SOURCE


def get(name: str = None):
    """Kernel module by name (``"cython"`` or ``"python"``); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


def adp_packed(ure, uim, out, threads=1):
    _impl.adp_packed(ure, uim, out, threads)


def dijkstra_all(indptr, indices, weights, threads=1):
    return _impl.dijkstra_all(indptr, indices, weights, threads)


def default_threads() -> int:
    return os.cpu_count() or 1
