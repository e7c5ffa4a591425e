"""Kernel backend selection.

The compiled extension is preferred; the numpy implementation is used if it
failed to build or if the ``RSCSNN_PURE_PYTHON`` environment variable is set to
a non-empty value other than ``0``.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("RSCSNN_PURE_PYTHON", "0") in ("", "0"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
lif_fire = _impl.lif_fire


def backends():
    """Return the available kernel modules keyed by name."""
    found = {"python": _kernels_py}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
