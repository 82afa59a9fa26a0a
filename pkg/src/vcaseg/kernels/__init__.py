"""Backend selection for the hot numeric kernels.

The numba backend is used when importable. Set ``VCAS_KERNELS=numpy`` to force
the pure-numpy fallback (or ``VCAS_KERNELS=numba`` to fail loudly if numba is
missing). Both backends implement identical arithmetic.
"""

from __future__ import annotations

import os

from . import _numpy_impl

_requested = os.environ.get("VCAS_KERNELS", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(f"VCAS_KERNELS must be auto, numba, or numpy, got {_requested!r}")

if _requested == "numpy":
    _impl = _numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import _numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = _numpy_impl
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight
bilinear_gather = _impl.bilinear_gather
bilinear_scatter = _impl.bilinear_scatter


def backend_name() -> str:
    """Active kernel backend: "numba" or "numpy"."""
    return BACKEND
