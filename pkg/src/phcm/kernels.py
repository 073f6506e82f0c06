"""Backend selection for the hot stencil kernels.

The compiled module ``phcm._ckernels`` is used when importable; otherwise, or
when the environment variable ``PHCM_PURE_PYTHON`` is set to a non-empty
value, the numpy versions in ``phcm._pykernels`` are used.
"""
import os

import numpy as np

from phcm import _pykernels

__all__ = ["BACKEND", "diff_axis", "weighted_sum", "backend_module"]

if os.environ.get("PHCM_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from phcm import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"


def backend_module(name=None):
    """Return the kernel module for ``name`` ("cython" or "python"), default active."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from phcm import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def diff_axis(f, axis, h, periodic):
    """Centered first derivative of ``f`` along ``axis``.

    Interior nodes use the 2nd-order centered stencil. Bounded axes use
    2nd-order one-sided stencils at the two end nodes.

    Parameters
    ----------
    f : ndarray
        Nodal values; any shape.
    axis : int
        Axis to differentiate along.
    h : float
        Grid spacing.
    periodic : bool
        Whether the axis wraps around.
    """
    f = np.asarray(f, dtype=np.float64)
    axis = axis % f.ndim
    m = f.shape[axis]
    pre = int(np.prod(f.shape[:axis], dtype=np.int64))
    post = int(np.prod(f.shape[axis + 1:], dtype=np.int64))
    f3 = np.ascontiguousarray(f.reshape(pre, m, post))
    return np.asarray(_impl.diff_axis(f3, float(h), bool(periodic))).reshape(f.shape)


def weighted_sum(values, weights):
    """Deterministic weighted reduction ``sum(values * weights)``."""
    v = np.ascontiguousarray(values, dtype=np.float64).ravel()
    w = np.ascontiguousarray(np.broadcast_to(weights, np.shape(values)), dtype=np.float64).ravel()
    return float(_impl.weighted_sum(v, w))
