"""Kernel dispatch.

The compiled numba kernels are used by default.  Setting the environment
variable ``GWFORMATION_DISABLE_NUMBA=1`` before import selects the pure numpy
kernels instead (also chosen automatically when numba cannot be imported).
Both modules expose the same functions with the same contracts.
"""
import importlib
import os

from . import numpy_kernels

_disabled = os.environ.get("GWFORMATION_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

numba_kernels = None
if not _disabled:
    try:
        numba_kernels = importlib.import_module(".numba_kernels", __name__)
    except ImportError:  # pragma: no cover - numba is a declared dependency
        numba_kernels = None

kernels = numba_kernels if numba_kernels is not None else numpy_kernels
BACKEND = "numba" if numba_kernels is not None else "numpy"

__all__ = ["kernels", "numpy_kernels", "numba_kernels", "BACKEND"]
