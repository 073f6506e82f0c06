"""Pointwise tensor algebra on an n-dimensional fiber (n = 1, 2, 3).

All array-level functions act on the trailing two axes, so a whole field of
fiber tensors with shape ``(..., n, n)`` is processed in one call.

Index storage convention: ``X[..., i, j]`` holds ``X^i_j`` for a mixed tensor,
``A_ij`` for a bilinear form and ``B^ij`` for a bicontravariant tensor. An
element ``Y`` of the dual of the mixed tensors is stored as ``Y[..., i, j] =
Y_i^j``, so every duality product is the componentwise sum ``sum_ij Y_ij X_ij``
(the trace of the composition of the two maps).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from phcm.errors import NotSPDError, RejectedInput

__all__ = [
    "SPD_RTOL",
    "MixedTensor",
    "MixedDual",
    "BilinearForm",
    "Bicontravariant",
    "MetricFiber",
    "pair",
    "sym",
    "asym",
    "metric_sym",
    "metric_asym",
    "dual_metric_sym",
    "vol_dev",
    "dual_vol_dev",
    "spd_check",
    "spd_log",
    "rel_log_array",
    "rel_exp_array",
    "invariants",
    "duality_pair",
    "project_sym_asym",
    "project_vol_dev",
    "rel_log",
    "rel_exp",
    "rotational_invariants",
    "projection_matrix",
]

#: A fiber metric is accepted when min eig > SPD_RTOL * max eig.
SPD_RTOL = 1e-12


def _check_square(a, name="tensor"):
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise RejectedInput(f"{name} must have trailing shape (n, n), got {a.shape}")
    if a.shape[-1] not in (1, 2, 3):
        raise RejectedInput(f"{name}: fiber dimension must be 1, 2 or 3, got {a.shape[-1]}")
    if not np.all(np.isfinite(a)):
        raise RejectedInput(f"{name} has non-finite entries")
    return a


def _eye_like(a):
    return np.broadcast_to(np.eye(a.shape[-1]), a.shape)


def _T(a):
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# array-level algebra
# ---------------------------------------------------------------------------


def pair(Y, X):
    """Duality product ``sum_ij Y_ij X_ij`` over the trailing axes."""
    return np.einsum("...ij,...ij->...", Y, X)


def sym(A):
    """Symmetric part of a bilinear form."""
    return 0.5 * (A + _T(A))


def asym(A):
    """Antisymmetric part of a bilinear form."""
    return 0.5 * (A - _T(A))


def metric_sym(X, g):
    """Metric-twisted symmetric part ``g^-1 sym(g X)`` of a mixed tensor."""
    return 0.5 * (X + np.linalg.solve(g, _T(X) @ g))


def metric_asym(X, g):
    """Complement of :func:`metric_sym`."""
    return X - metric_sym(X, g)


def dual_metric_sym(Y, g):
    """Adjoint of :func:`metric_sym` with respect to :func:`pair`.

    ``pair(dual_metric_sym(Y, g), X) == pair(Y, metric_sym(X, g))``.
    """
    return 0.5 * (Y + g @ _T(Y) @ np.linalg.inv(g))


def vol_dev(X):
    """Volumetric/deviatoric split of a mixed tensor.

    Returns ``(x_vol, X_dev)`` with ``x_vol = tr X`` and
    ``X_dev = X - (x_vol / n) I``.
    """
    n = X.shape[-1]
    x_vol = np.trace(X, axis1=-2, axis2=-1)
    return x_vol, X - (x_vol / n)[..., None, None] * _eye_like(X)


def dual_vol_dev(Y):
    """Dual-side split ``(y_vol, Y_dev)`` with ``y_vol = tr(Y) / n``.

    The 1/n factor sits on the dual side, so that
    ``pair(Y, X) == y_vol * x_vol + pair(Y_dev, X_dev)``.
    """
    n = Y.shape[-1]
    y_vol = np.trace(Y, axis1=-2, axis2=-1) / n
    return y_vol, Y - y_vol[..., None, None] * _eye_like(Y)


def spd_check(g, name="metric", rtol=SPD_RTOL):
    """Validate symmetry and positive definiteness of a (field of) fiber metric.

    Returns the eigenvalues. Raises :class:`NotSPDError` naming the first
    offending node.
    """
    g = _check_square(g, name)
    scale = np.max(np.abs(g), axis=(-2, -1), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    if np.any(np.abs(g - _T(g)) > 1e-12 * scale):
        raise NotSPDError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(g)
    bad = w[..., 0] <= rtol * w[..., -1]
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(np.atleast_1d(bad))[0])
        raise NotSPDError(
            f"{name} is not positive definite at index {idx}: eigenvalues "
            f"{np.atleast_2d(w)[idx[0] if w.ndim > 1 else 0]}"
        )
    return w


def _sym_fn(S, fn):
    """Apply a scalar function to a symmetric matrix through its eigendecomposition."""
    w, Q = np.linalg.eigh(S)
    return (Q * fn(w)[..., None, :]) @ _T(Q)


def spd_log(S):
    """Matrix logarithm of a symmetric positive-definite array."""
    return _sym_fn(S, np.log)


def _sqrt_pair(G):
    w, Q = np.linalg.eigh(G)
    r = np.sqrt(w)
    return (Q * r[..., None, :]) @ _T(Q), (Q * (1.0 / r)[..., None, :]) @ _T(Q)


def rel_log_array(G, g):
    """Logarithmic strain ``zeta = 1/2 ln(G^-1 g)`` as a mixed tensor.

    Computed on the symmetric similar matrix ``G^-1/2 g G^-1/2`` whose
    eigenvalues are real; eigenvalues below ``SPD_RTOL * max`` are rejected.
    """
    spd_check(G, "reference metric G")
    spd_check(g, "metric")
    Gh, Gmh = _sqrt_pair(G)
    S = Gmh @ g @ Gmh
    S = 0.5 * (S + _T(S))
    w, Q = np.linalg.eigh(S)
    if np.any(w[..., 0] <= SPD_RTOL * w[..., -1]):
        raise NotSPDError(f"G^-1 g has a non-positive eigenvalue (min {np.min(w[..., 0]):.3e})")
    lnS = (Q * np.log(w)[..., None, :]) @ _T(Q)
    return 0.5 * (Gmh @ lnS @ Gh)


def rel_exp_array(G, dG):
    """Exponential map ``G exp(G^-1 dG)`` for a symmetric tangent ``dG``."""
    spd_check(G, "reference metric G")
    Gh, Gmh = _sqrt_pair(G)
    S = Gmh @ dG @ Gmh
    S = 0.5 * (S + _T(S))
    out = Gh @ _sym_fn(S, np.exp) @ Gh
    return 0.5 * (out + _T(out))


def invariants(Z):
    """Principal invariants ``(tr Z, 1/2 (tr^2 Z - tr Z^2), det Z)``."""
    t = np.trace(Z, axis1=-2, axis2=-1)
    t2 = np.trace(Z @ Z, axis1=-2, axis2=-1)
    return t, 0.5 * (t * t - t2), np.linalg.det(Z)


def projection_matrix(op, n):
    """Matrix of a linear map on n x n arrays acting on row-major vec(X)."""
    basis = np.eye(n * n).reshape(n * n, n, n)
    return np.stack([np.asarray(op(E)).ravel() for E in basis], axis=1)


# ---------------------------------------------------------------------------
# typed values
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _FiberTensor:
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _check_square(self.entries, type(self).__name__))

    @property
    def n(self) -> int:
        return self.entries.shape[-1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


class MixedTensor(_FiberTensor):
    """(1,1) tensor ``X^i_j``: strain, rate of strain, intensive stress."""


class MixedDual(_FiberTensor):
    """Element ``Y_i^j`` of the dual of the mixed tensors."""


class BilinearForm(_FiberTensor):
    """(0,2) tensor ``A_ij``: metric values, lowered velocity gradients."""


class Bicontravariant(_FiberTensor):
    """(2,0) tensor ``B^ij``: dual of the bilinear forms."""


@dataclass(frozen=True, eq=False)
class MetricFiber:
    """A symmetric positive-definite bilinear form."""

    value: BilinearForm

    def __post_init__(self):
        if not isinstance(self.value, BilinearForm):
            object.__setattr__(self, "value", BilinearForm(np.asarray(self.value)))
        spd_check(self.value.entries)

    @property
    def n(self) -> int:
        return self.value.n

    @property
    def entries(self) -> np.ndarray:
        return self.value.entries


_PAIRINGS = {(MixedDual, MixedTensor), (Bicontravariant, BilinearForm)}


def duality_pair(Y, X):
    """Duality product of a dual element with a primal one.

    Parameters
    ----------
    Y : MixedDual or Bicontravariant
    X : MixedTensor or BilinearForm
        Must be the matching primal kind.

    Returns
    -------
    float or ndarray
        ``sum_ij Y_ij X_ij`` per fiber.
    """
    if (type(Y), type(X)) not in _PAIRINGS:
        raise RejectedInput(f"cannot pair {type(Y).__name__} with {type(X).__name__}")
    if Y.entries.shape != X.entries.shape:
        raise RejectedInput(f"dimension mismatch: {Y.entries.shape} vs {X.entries.shape}")
    return pair(Y.entries, X.entries)


def project_sym_asym(A, metric: MetricFiber | None = None):
    """Symmetric/antisymmetric split.

    A :class:`BilinearForm` is split by transposition. A :class:`MixedTensor`
    requires ``metric`` and uses the twisted projection ``g^-1 sym(g X)``; a
    :class:`MixedDual` uses its adjoint.
    """
    if isinstance(A, BilinearForm):
        s = sym(A.entries)
        return BilinearForm(s), BilinearForm(A.entries - s)
    if metric is None:
        raise RejectedInput("the mixed-tensor projection needs a metric")
    if not isinstance(metric, MetricFiber):
        metric = MetricFiber(BilinearForm(metric))
    g = metric.entries
    if isinstance(A, MixedTensor):
        s = metric_sym(A.entries, g)
        return MixedTensor(s), MixedTensor(A.entries - s)
    if isinstance(A, MixedDual):
        s = dual_metric_sym(A.entries, g)
        return MixedDual(s), MixedDual(A.entries - s)
    raise RejectedInput(f"no symmetric projection for {type(A).__name__}")


def project_vol_dev(X):
    """Volumetric/deviatoric split; see :func:`vol_dev` and :func:`dual_vol_dev`."""
    if isinstance(X, MixedDual):
        y, Yd = dual_vol_dev(X.entries)
        return y, MixedDual(Yd)
    if not isinstance(X, MixedTensor):
        raise RejectedInput(f"vol/dev split needs a mixed tensor, got {type(X).__name__}")
    x, Xd = vol_dev(X.entries)
    return x, MixedTensor(Xd)


def rel_log(G: MetricFiber, g: MetricFiber) -> MixedTensor:
    """Logarithmic strain ``1/2 ln(G^-1 g)`` of ``g`` relative to ``G``."""
    return MixedTensor(rel_log_array(np.asarray(G.entries), np.asarray(g.entries)))


def rel_exp(G: MetricFiber, dG: BilinearForm) -> MetricFiber:
    """Metric ``G exp(G^-1 dG)`` reached from ``G`` along the tangent ``dG``.

    ``rel_exp(G, 2 G zeta)`` inverts :func:`rel_log`.
    """
    return MetricFiber(BilinearForm(rel_exp_array(np.asarray(G.entries), np.asarray(dG.entries))))


def rotational_invariants(Z: MixedTensor):
    """``(I1, I2, I3)`` of a mixed tensor."""
    return invariants(Z.entries)
