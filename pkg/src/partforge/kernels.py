"""Kernel dispatch: the compiled extension when importable, else pure Python.

Set ``PARTFORGE_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("PARTFORGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

# Offset of every ray from the voxel-centre lattice; keeps rays off shared
# edges and vertices of axis-aligned geometry.
RAY_JITTER = (1.1102230246251565e-9 * 1.4142135623730951, 1.1102230246251565e-9 * 1.7320508075688772)


def backends():
    """Available kernel modules keyed by name."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled
    except ImportError:
        return out
    out["cython"] = _compiled
    return out


def nn_distances(P, Q, impl=None):
    impl = impl or _impl
    P = np.ascontiguousarray(P, dtype=np.float64).reshape(-1, 3)
    Q = np.ascontiguousarray(Q, dtype=np.float64).reshape(-1, 3)
    return impl.nn_distances(P, Q)


def voxelize_parity(tris, R, impl=None):
    impl = impl or _impl
    tris = np.ascontiguousarray(tris, dtype=np.float64).reshape(-1, 3, 3)
    toggle = np.asarray(impl.voxelize_parity(tris, int(R), *RAY_JITTER))
    return np.bitwise_xor.accumulate(toggle[:R], axis=0).astype(bool)


def raster_triangles(tris2d, res, impl=None):
    impl = impl or _impl
    tris2d = np.ascontiguousarray(tris2d, dtype=np.float64).reshape(-1, 3, 2)
    return np.asarray(impl.raster_triangles(tris2d, int(res))).astype(bool)
