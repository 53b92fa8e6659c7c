"""Backend selection for the hot MLP and optimizer kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy implementation in ``_kernels_py``. Set ``WBSAC_PURE_PYTHON=1`` to force
the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("WBSAC_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"

layer_views = _impl.layer_views
mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
adam_update = _impl.adam_update
polyak_update = _impl.polyak_update


def available_backends():
    """Map of backend name -> kernel module for every backend that imports."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found
