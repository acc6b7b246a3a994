"""Hot inner loops, dispatched to numba or to a pure-numpy fallback.

The backend is chosen once at import from the ``MIXLAB_BACKEND`` environment
variable (``numba`` or ``numpy``).  When unset, numba is used if it imports.
Both backends draw uniforms from the same ``numpy.random.Generator`` in the
same order, so a given seed yields identical results on either one.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _numpy

BACKENDS = ("numba", "numpy")


def _numba_module() -> ModuleType | None:
    try:
        from . import _numba
    except ImportError:
        return None
    return _numba


def get_backend(name: str) -> ModuleType:
    """Return the kernel module for ``name`` (raises if unavailable)."""
    if name == "numpy":
        return _numpy
    if name == "numba":
        mod = _numba_module()
        if mod is None:
            raise ImportError("numba backend requested but numba is not importable")
        return mod
    raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")


def _select() -> tuple[str, ModuleType]:
    requested = os.environ.get("MIXLAB_BACKEND", "").strip().lower()
    if requested:
        return requested, get_backend(requested)
    mod = _numba_module()
    if mod is None:
        return "numpy", _numpy
    return "numba", mod


BACKEND, _impl = _select()

ql_steps = _impl.ql_steps
vr_steps = _impl.vr_steps
count_draws = _impl.count_draws
split_chain_paths = _impl.split_chain_paths
alias_draw = _numpy.alias_draw

__all__ = [
    "BACKEND",
    "BACKENDS",
    "alias_draw",
    "count_draws",
    "get_backend",
    "ql_steps",
    "split_chain_paths",
    "vr_steps",
]
