"""Backend selection for the nearest-neighbor kernel.

The compiled Cython kernel is preferred; the NumPy fallback is used when the
extension was not built or when MESHTOK_KERNELS=python forces it. Both
backends return bitwise-identical results.
"""

import os

from . import _nn_py

if os.environ.get("MESHTOK_KERNELS", "").lower() in ("python", "numpy"):
    _impl = _nn_py
    BACKEND = "numpy"
else:
    try:
        from . import _nn_cy as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _nn_py
        BACKEND = "numpy"

nn_sqdists = _impl.nn_sqdists


def backend() -> str:
    """Name of the active kernel backend ("cython" or "numpy")."""
    return BACKEND
