"""Kernel backend selection.

The compiled ``_ckernels`` module is used when it was built and imports
cleanly; otherwise the numpy implementation takes over.  Setting
``EMDNET_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
im2col = _kernels_py.im2col
col2im = _kernels_py.col2im

if os.environ.get("EMDNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        im2col = _ckernels.im2col
        col2im = _ckernels.col2im
        BACKEND = "cython"

__all__ = ["BACKEND", "im2col", "col2im"]
