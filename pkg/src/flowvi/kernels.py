"""Kernel backend selection.

The compiled ``_ckernels`` module is used when it imports; otherwise the numpy
implementation in ``_pykernels``. Set ``FLOWVI_BACKEND=python`` to force the
fallback (``cython`` makes a missing extension an error).
"""
from __future__ import annotations

import os
import warnings

from . import _pykernels

python_backend = _pykernels

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None


def _select():
    choice = os.environ.get("FLOWVI_BACKEND", "auto").lower()
    if choice == "python":
        return python_backend
    if choice == "cython":
        if compiled_backend is None:
            raise ImportError("FLOWVI_BACKEND=cython but flowvi._ckernels is not built")
        return compiled_backend
    if choice != "auto":
        warnings.warn(f"unknown FLOWVI_BACKEND={choice!r}, using auto")
    return compiled_backend if compiled_backend is not None else python_backend


backend = _select()


def available_backends():
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    return out
