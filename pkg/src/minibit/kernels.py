"""Kernel backend selection.

The compiled Cython extension is preferred; the NumPy implementation is used
when it is missing or when ``MINIBIT_BACKEND=python`` is set in the
environment.
"""

import os

from minibit import _pykernels

python_backend = _pykernels

try:
    from minibit import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("MINIBIT_BACKEND", "").lower() != "python":
    _impl = compiled_backend
    BACKEND = "cython"
else:
    _impl = _pykernels
    BACKEND = "python"

pcg32_fill = _impl.pcg32_fill
im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward


def available_backends():
    """Mapping of backend name to kernel module for everything importable."""
    found = {"python": _pykernels}
    if compiled_backend is not None:
        found["cython"] = compiled_backend
    return found
