"""Backend selection for the hot assignment kernel.

The compiled Cython extension is preferred; the pure-numpy fallback is used
when the extension was not built or when STREAMVQ_PURE=1 is set. Both
backends implement identical semantics (squared Euclidean distance, ties to
the lowest index), so everything downstream is backend-agnostic.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("STREAMVQ_PURE") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def assign_nearest(x: np.ndarray, codewords: np.ndarray):
    """(indices, squared distances) of the nearest codeword per row of x."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    codewords = np.ascontiguousarray(codewords, dtype=np.float64)
    return _impl.assign_nearest(x, codewords)
