"""Discrete differential forms on uniform structured grids.

Fields are collocated at grid nodes. Derivatives use 2nd-order centered
differences, with 2nd-order one-sided stencils at the end nodes of bounded
axes. Integrals use the trapezoid rule on bounded axes and the rectangle rule
on periodic axes.

Storage layout
--------------
* :class:`ScalarForm` of degree k: ``data[c, *nodes]`` where ``c`` enumerates
  the increasing index tuples ``itertools.combinations(range(n), k)``.
* :class:`BundleForm` of degree k: ``data[i, c, *nodes]`` with the value index
  ``i`` first (upper for ``kind="vector"``, lower for ``kind="covector"``).
* :class:`MetricField`: fiber layout ``g[*nodes, i, j]`` so that the
  pointwise routines of :mod:`phcm.fiber` apply directly.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from phcm import fiber
from phcm.errors import NotSPDError, RejectedInput
from phcm.kernels import diff_axis, weighted_sum

__all__ = [
    "VELOCITY",
    "TRACTION",
    "Grid",
    "MetricField",
    "ScalarForm",
    "BundleForm",
    "MassForm",
    "combos",
    "exterior_d",
    "boundary_lift",
    "exterior_covariant_d",
    "covariant_derivative",
    "wedge",
    "wedge_dot",
    "interior",
    "lie_derivative",
    "lie_derivative_momentum",
    "lie_metric",
    "hodge",
    "hodge_inv",
    "hodge_c",
    "hodge_c_inv",
    "integrate",
    "boundary_trace",
    "boundary_integral",
    "bundle_to_fiber",
    "fiber_to_bundle",
    "lower",
    "raise_index",
    "interpolate",
    "write_form_csv",
    "read_form_csv",
]

#: Boundary label of faces where the velocity is an input.
VELOCITY = "velocity"
#: Boundary label of faces where the traction is an input.
TRACTION = "traction"


@functools.lru_cache(maxsize=None)
def combos(n, k):
    """Increasing index tuples of length ``k`` from ``range(n)``."""
    return tuple(itertools.combinations(range(n), k))


@functools.lru_cache(maxsize=None)
def _index(n, k):
    return {c: i for i, c in enumerate(combos(n, k))}


def _perm_sign(seq):
    """Sign of the permutation sorting ``seq`` (0 if it has repeats)."""
    seq = list(seq)
    if len(set(seq)) < len(seq):
        return 0
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid.

    Parameters
    ----------
    cells : tuple of int
        Cells per axis (at least 4).
    lengths : tuple of float
        Domain extent per axis.
    periodic : tuple of bool
        Topology per axis.
    origin : tuple of float
        Coordinate of node 0.
    boundary : tuple
        Labels of the faces ``(axis 0 low, axis 0 high, axis 1 low, ...)``;
        ``None`` for periodic axes, else :data:`VELOCITY` or :data:`TRACTION`.

    Notes
    -----
    A periodic axis with N cells has N nodes; a bounded axis has N + 1 nodes
    including both end points.
    """

    cells: tuple
    lengths: tuple
    periodic: tuple
    origin: tuple
    boundary: tuple

    @classmethod
    def make(cls, cells, lengths=1.0, periodic=False, origin=0.0, boundary=TRACTION):
        """Build a grid, broadcasting scalar arguments over the axes.

        ``boundary`` may be a single label, or a mapping ``{(axis, side): label}``
        with ``side`` 0 (low) or 1 (high); unspecified bounded faces get
        :data:`TRACTION`.
        """
        cells = tuple(int(c) for c in np.atleast_1d(cells))
        n = len(cells)

        def bc(v, typ):
            v = np.atleast_1d(v)
            if v.size == 1:
                v = np.repeat(v, n)
            if v.size != n:
                raise RejectedInput(f"expected {n} per-axis values, got {v.size}")
            return tuple(typ(x) for x in v)

        periodic = bc(periodic, bool)
        labels = []
        for a in range(n):
            for s in (0, 1):
                if periodic[a]:
                    labels.append(None)
                elif isinstance(boundary, dict):
                    labels.append(boundary.get((a, s), TRACTION))
                else:
                    labels.append(boundary)
        return cls(cells, bc(lengths, float), periodic, bc(origin, float), tuple(labels))

    def __post_init__(self):
        n = len(self.cells)
        if n not in (1, 2, 3):
            raise RejectedInput(f"grid dimension must be 1, 2 or 3, got {n}")
        if any(c < 4 for c in self.cells):
            raise RejectedInput(f"need at least 4 cells per axis, got {self.cells}")
        if any(not (L > 0) for L in self.lengths):
            raise RejectedInput("axis lengths must be positive")
        if len(self.boundary) != 2 * n:
            raise RejectedInput("boundary needs one label per face")
        for a in range(n):
            for s in (0, 1):
                lab = self.boundary[2 * a + s]
                if self.periodic[a] and lab is not None:
                    raise RejectedInput(f"periodic axis {a} cannot carry a boundary label")
                if not self.periodic[a] and lab not in (VELOCITY, TRACTION):
                    raise RejectedInput(f"face {(a, s)} label must be velocity or traction, got {lab!r}")

    @property
    def n(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> tuple:
        return tuple(L / c for L, c in zip(self.lengths, self.cells))

    @property
    def shape(self) -> tuple:
        """Number of nodes per axis."""
        return tuple(c if p else c + 1 for c, p in zip(self.cells, self.periodic))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def coords(self, axis):
        return self.origin[axis] + self.h[axis] * np.arange(self.shape[axis])

    def mesh(self):
        """Nodal coordinate arrays, one per axis, with ``indexing='ij'``."""
        return np.meshgrid(*[self.coords(a) for a in range(self.n)], indexing="ij")

    def points(self):
        """Nodal coordinates stacked as ``(n, *shape)``."""
        return np.stack(self.mesh())

    def _weights_1d(self, axis):
        w = np.full(self.shape[axis], self.h[axis])
        if not self.periodic[axis]:
            w[0] = w[-1] = 0.5 * self.h[axis]
        return w

    @functools.cached_property
    def weights(self):
        """Nodal quadrature weights with shape :attr:`shape`."""
        w = np.ones(())
        for a in range(self.n):
            w = np.multiply.outer(w, self._weights_1d(a))
        return w

    def face_weights(self, axis):
        """Quadrature weights on a face normal to ``axis`` (shape of the face)."""
        w = np.ones(())
        for a in range(self.n):
            if a != axis:
                w = np.multiply.outer(w, self._weights_1d(a))
        return w

    @property
    def faces(self):
        """Bounded faces as ``(axis, side)`` tuples."""
        return [(a, s) for a in range(self.n) if not self.periodic[a] for s in (0, 1)]

    def label(self, face):
        return self.boundary[2 * face[0] + face[1]]

    def faces_with(self, label):
        return [f for f in self.faces if self.label(f) == label]

    def face_slice(self, face):
        axis, side = face
        sl = [slice(None)] * self.n
        sl[axis] = 0 if side == 0 else -1
        return tuple(sl)

    def boundary_mask(self, label=None):
        """Nodes on faces with ``label`` (all bounded faces when ``None``).

        Nodes shared by a velocity face and a traction face belong to the
        velocity part only.
        """
        def mask_of(faces):
            m = np.zeros(self.shape, dtype=bool)
            for f in faces:
                m[self.face_slice(f)] = True
            return m

        if label is None:
            return mask_of(self.faces)
        vel = mask_of(self.faces_with(VELOCITY))
        if label == VELOCITY:
            return vel
        if label == TRACTION:
            return mask_of(self.faces_with(TRACTION)) & ~vel
        raise RejectedInput(f"unknown boundary label {label!r}")

    def with_boundary(self, boundary):
        """Copy of the grid with new face labels (see :meth:`make`)."""
        return Grid.make(self.cells, self.lengths, self.periodic, self.origin, boundary)

    def describe(self):
        return {
            "cells": list(self.cells),
            "lengths": list(self.lengths),
            "periodic": list(self.periodic),
            "origin": list(self.origin),
            "boundary": list(self.boundary),
        }

    def d(self, f, axis, sbp=False):
        """Centered difference of nodal values along ``axis`` (trailing grid axes).

        With ``sbp=True`` the end rows of a bounded axis use first-order
        one-sided differences; together with the trapezoid weights this makes
        the operator summation-by-parts, so discrete integration by parts is
        exact.
        """
        ax = f.ndim - self.n + axis
        out = diff_axis(f, ax, self.h[axis], self.periodic[axis])
        if sbp and not self.periodic[axis]:
            f = np.asarray(f, dtype=float)
            h = self.h[axis]
            t = lambda i: np.take(f, i, axis=ax)
            first = [slice(None)] * f.ndim
            last = [slice(None)] * f.ndim
            first[ax], last[ax] = 0, -1
            out[tuple(first)] = (t(1) - t(0)) / h
            out[tuple(last)] = (t(-1) - t(-2)) / h
        return out

    def lift(self, f, axis, side=None):
        """Boundary lift ``H^-1 B`` of the summation-by-parts operator along ``axis``.

        Zero except at the end nodes of a bounded axis, where it is
        ``-f / w`` (low end) and ``+f / w`` (high end) with ``w = h / 2``;
        ``side`` restricts it to one end.
        """
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        if self.periodic[axis]:
            return out
        ax = f.ndim - self.n + axis
        w = 0.5 * self.h[axis]
        for sd, sign, idx in ((0, -1.0, 0), (1, 1.0, -1)):
            if side is None or side == sd:
                sl = [slice(None)] * f.ndim
                sl[ax] = idx
                out[tuple(sl)] = sign * f[tuple(sl)] / w
        return out


# ---------------------------------------------------------------------------
# forms
# ---------------------------------------------------------------------------


class _FormBase:
    __slots__ = ()

    def _like(self, data):
        raise NotImplementedError

    def _check_other(self, other):
        if type(other) is not type(self) or other.grid != self.grid or other.degree != self.degree:
            raise RejectedInput("form arithmetic needs forms of the same type, grid and degree")
        if isinstance(self, BundleForm) and self.kind != other.kind:
            raise RejectedInput("cannot add vector- and covector-valued forms")

    def __add__(self, other):
        self._check_other(other)
        return self._like(self.data + other.data)

    def __sub__(self, other):
        self._check_other(other)
        return self._like(self.data - other.data)

    def __neg__(self):
        return self._like(-self.data)

    def __mul__(self, c):
        return self._like(self.data * c)

    __rmul__ = __mul__

    def copy(self):
        return self._like(self.data.copy())


@dataclass(eq=False)
class ScalarForm(_FormBase):
    """Scalar-valued k-form with coordinate components ``data[c, *nodes]``."""

    grid: Grid
    degree: int
    data: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        if not 0 <= self.degree <= n:
            raise RejectedInput(f"degree {self.degree} outside 0..{n}")
        self.data = np.asarray(self.data, dtype=float)
        want = (math.comb(n, self.degree),) + self.grid.shape
        if self.data.shape != want:
            raise RejectedInput(f"ScalarForm data shape {self.data.shape}, expected {want}")

    def _like(self, data):
        return ScalarForm(self.grid, self.degree, data)

    @classmethod
    def zeros(cls, grid, degree):
        return cls(grid, degree, np.zeros((math.comb(grid.n, degree),) + grid.shape))

    @classmethod
    def function(cls, grid, values):
        """0-form from nodal values."""
        return cls(grid, 0, np.asarray(values, dtype=float).reshape((1,) + grid.shape))

    @classmethod
    def top(cls, grid, density):
        """n-form ``density dx^1 ^ ... ^ dx^n``."""
        return cls(grid, grid.n, np.asarray(density, dtype=float).reshape((1,) + grid.shape))

    @property
    def coefficient(self):
        """Nodal coefficient of a 0-form or top form."""
        if self.data.shape[0] != 1:
            raise RejectedInput("coefficient is defined for degree 0 or n only")
        return self.data[0]


@dataclass(eq=False)
class MassForm(ScalarForm):
    """Strictly positive top form (mass form)."""

    def __post_init__(self):
        super().__post_init__()
        if self.degree != self.grid.n:
            raise RejectedInput("a mass form has top degree")
        if not np.all(self.data > 0):
            raise RejectedInput("mass density must be strictly positive")

    def _like(self, data):
        return ScalarForm(self.grid, self.degree, data)

    @classmethod
    def from_density(cls, grid, density):
        d = np.broadcast_to(np.asarray(density, dtype=float), grid.shape)
        return cls(grid, grid.n, d.reshape((1,) + grid.shape).copy())


@dataclass(eq=False)
class BundleForm(_FormBase):
    """Vector- or covector-valued k-form, ``data[i, c, *nodes]``."""

    grid: Grid
    degree: int
    kind: str
    data: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        if self.kind not in ("vector", "covector"):
            raise RejectedInput(f"kind must be 'vector' or 'covector', got {self.kind!r}")
        if not 0 <= self.degree <= n:
            raise RejectedInput(f"degree {self.degree} outside 0..{n}")
        self.data = np.asarray(self.data, dtype=float)
        want = (n, math.comb(n, self.degree)) + self.grid.shape
        if self.data.shape != want:
            raise RejectedInput(f"BundleForm data shape {self.data.shape}, expected {want}")

    def _like(self, data):
        return BundleForm(self.grid, self.degree, self.kind, data)

    @classmethod
    def zeros(cls, grid, degree, kind):
        return cls(grid, degree, kind, np.zeros((grid.n, math.comb(grid.n, degree)) + grid.shape))

    @classmethod
    def field(cls, grid, values, kind="vector"):
        """Bundle-valued 0-form from nodal components ``values[i, *nodes]``."""
        v = np.asarray(values, dtype=float).reshape((grid.n, 1) + grid.shape)
        return cls(grid, 0, kind, v)

    @classmethod
    def top(cls, grid, values, kind="covector"):
        """Bundle-valued n-form from nodal coefficients ``values[i, *nodes]``."""
        v = np.asarray(values, dtype=float).reshape((grid.n, 1) + grid.shape)
        return cls(grid, grid.n, kind, v)

    @property
    def dual_kind(self):
        return "covector" if self.kind == "vector" else "vector"

    @property
    def values(self):
        """Nodal components ``[i, *nodes]`` of a 0-form or top form."""
        if self.data.shape[1] != 1:
            raise RejectedInput("values are defined for degree 0 or n only")
        return self.data[:, 0]

    def component(self, i):
        return ScalarForm(self.grid, self.degree, self.data[i])


# ---------------------------------------------------------------------------
# metric field
# ---------------------------------------------------------------------------


class MetricField:
    """Per-node SPD metric with cached Christoffel symbols and volume density.

    Parameters
    ----------
    grid : Grid
    values : array_like
        Either a constant ``(n, n)`` matrix or a field ``(*grid.shape, n, n)``.
    check : bool
        Validate SPD at every node.
    """

    def __init__(self, grid: Grid, values=None, check=True):
        self.grid = grid
        n = grid.n
        if values is None:
            values = np.eye(n)
        values = np.asarray(values, dtype=float)
        if values.shape == (n, n):
            self.constant = True
            values = np.broadcast_to(values, grid.shape + (n, n))
        elif values.shape == grid.shape + (n, n):
            self.constant = False
        else:
            raise RejectedInput(f"metric shape {values.shape} does not match grid {grid.shape}")
        if check:
            try:
                fiber.spd_check(values, "metric field")
            except NotSPDError as exc:
                raise NotSPDError(str(exc)) from None
        self.g = values

    @classmethod
    def euclidean(cls, grid):
        return cls(grid, np.eye(grid.n), check=False)

    @functools.cached_property
    def inv(self):
        return np.linalg.inv(self.g)

    @functools.cached_property
    def sqrt_det(self):
        return np.sqrt(np.linalg.det(self.g))

    @functools.cached_property
    def christoffel(self):
        """``Gamma[k, i, j]`` = Gamma^k_ij with nodes trailing; None when constant."""
        if self.constant:
            return None
        n = self.grid.n
        gc = np.moveaxis(self.g, (-2, -1), (0, 1))  # [i, j, *nodes]
        dg = np.stack([self.grid.d(gc, a) for a in range(n)])  # [a, i, j, *nodes] = d_a g_ij
        low = 0.5 * (np.einsum("ijl...->lij...", dg) + np.einsum("jil...->lij...", dg) - dg)
        # low[l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
        ginv = np.moveaxis(self.inv, (-2, -1), (0, 1))
        return np.einsum("kl...,lij...->kij...", ginv, low)

    def lower(self, u):
        """Lower the leading index of ``u[i, ...]`` (nodes trailing)."""
        return _contract_first(self.g, u)

    def raise_(self, a):
        return _contract_first(self.inv, a)


def _contract_first(m, u):
    """``out[i, ...] = m[*nodes, i, j] u[j, ..., *nodes]``."""
    n = m.shape[-1]
    mc = np.moveaxis(m, (-2, -1), (0, 1))
    extra = u.ndim - 1 - (mc.ndim - 2)
    mc = mc.reshape(mc.shape[:2] + (1,) * extra + mc.shape[2:])
    return sum(mc[:, j] * u[j] for j in range(n))


def _metric(grid, metric):
    if metric is None:
        return MetricField.euclidean(grid)
    if metric.grid != grid:
        raise RejectedInput("metric and form live on different grids")
    return metric


# ---------------------------------------------------------------------------
# algebra on component arrays
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _wedge_table(n, k, l):
    out = []
    idx = _index(n, k + l)
    for a, I in enumerate(combos(n, k)):
        for b, L in enumerate(combos(n, l)):
            s = _perm_sign(I + L)
            if s:
                out.append((idx[tuple(sorted(I + L))], a, b, s))
    return tuple(out)


def _wedge_arrays(n, k, a, l, b):
    if k + l > n:
        raise RejectedInput(f"wedge degree {k + l} exceeds dimension {n}")
    shape = np.broadcast_shapes(a.shape[1:], b.shape[1:])
    out = np.zeros((math.comb(n, k + l),) + shape)
    for c, ia, ib, s in _wedge_table(n, k, l):
        out[c] += s * a[ia] * b[ib]
    return out


@functools.lru_cache(maxsize=None)
def _interior_table(n, k):
    out = []
    src = _index(n, k)
    for c, I in enumerate(combos(n, k - 1)):
        for j in range(n):
            if j in I:
                continue
            s = _perm_sign((j,) + I)
            out.append((c, j, src[tuple(sorted((j,) + I))], s))
    return tuple(out)


def _interior_arrays(n, k, u, a):
    """``(iota_u a)`` for component arrays, ``u[j, *nodes]``, ``a[c, ..., *nodes]``."""
    out = np.zeros((math.comb(n, k - 1),) + a.shape[1:])
    for c, j, ia, s in _interior_table(n, k):
        out[c] += s * u[j] * a[ia]
    return out


@functools.lru_cache(maxsize=None)
def _d_table(n, k):
    out = []
    src = _index(n, k)
    for c, J in enumerate(combos(n, k + 1)):
        for m, j in enumerate(J):
            out.append((c, j, src[J[:m] + J[m + 1:]], (-1) ** m))
    return tuple(out)


def _d_arrays(grid, k, a, sbp=False):
    n = grid.n
    out = np.zeros((math.comb(n, k + 1),) + a.shape[1:])
    cache = {}
    for c, j, ia, s in _d_table(n, k):
        key = (j, ia)
        if key not in cache:
            cache[key] = grid.d(a[ia], j, sbp)
        out[c] += s * cache[key]
    return out


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def boundary_lift(phi: BundleForm, face) -> BundleForm:
    """Summation-by-parts boundary lift of a bundle-valued (n-1)-form on one face.

    The counterpart of :func:`exterior_covariant_d` built from
    :meth:`Grid.lift` along the face normal; adding
    ``boundary_lift(T_in - T, face)`` to ``d_nabla T`` imposes the face trace
    ``T_in`` weakly, with the discrete power balance kept exact.
    """
    grid = phi.grid
    n, k = grid.n, phi.degree
    if k != n - 1:
        raise RejectedInput("boundary lift needs an (n-1)-form")
    axis, side = face
    out = np.zeros((phi.data.shape[0], 1) + grid.shape)
    for i in range(phi.data.shape[0]):
        for c, j, ia, s in _d_table(n, k):
            if j == axis:
                out[i, c] += s * grid.lift(phi.data[i, ia], axis, side)
    return BundleForm(grid, n, phi.kind, out)


def exterior_d(alpha: ScalarForm, sbp=False) -> ScalarForm:
    """Exterior derivative of a scalar k-form (k < n)."""
    if alpha.degree >= alpha.grid.n:
        raise RejectedInput("exterior derivative of a top form is not defined")
    return ScalarForm(alpha.grid, alpha.degree + 1, _d_arrays(alpha.grid, alpha.degree, alpha.data, sbp))


def _connection_forms(metric, kind):
    """Connection 1-form components ``w[i, l][j, *nodes]`` acting on the value index.

    For vectors ``w^i_l = Gamma^i_jl dx^j``; for covectors ``-Gamma^l_ji dx^j``.
    """
    G = metric.christoffel
    if G is None:
        return None
    if kind == "vector":
        return np.einsum("ijl...->ilj...", G)
    return -np.einsum("lji...->ilj...", G)


def exterior_covariant_d(phi: BundleForm, metric: MetricField | None = None, sbp=False) -> BundleForm:
    """Exterior covariant derivative of a bundle-valued k-form (k < n).

    Componentwise exterior derivative plus the Levi-Civita correction
    ``w ^ phi``. With a constant metric this is the componentwise ``d``.
    """
    grid = phi.grid
    n, k = grid.n, phi.degree
    if k >= n:
        raise RejectedInput("exterior covariant derivative of a top form is not defined")
    metric = _metric(grid, metric)
    out = np.stack([_d_arrays(grid, k, phi.data[i], sbp) for i in range(n)])
    w = _connection_forms(metric, phi.kind)
    if w is not None:
        for i in range(n):
            for l in range(n):
                out[i] += _wedge_arrays(n, 1, w[i, l], k, phi.data[l])
    return BundleForm(grid, k + 1, phi.kind, out)


def covariant_derivative(u: BundleForm, metric: MetricField | None = None, sbp=False) -> BundleForm:
    """Covariant derivative of a vector field as a vector-valued 1-form.

    ``out.data[i, j] = nabla_j u^i``.
    """
    if u.degree != 0:
        raise RejectedInput("covariant_derivative expects a bundle-valued 0-form")
    return exterior_covariant_d(u, metric, sbp)


def wedge(a: ScalarForm, b: ScalarForm) -> ScalarForm:
    """Wedge product of scalar forms."""
    if a.grid != b.grid:
        raise RejectedInput("forms live on different grids")
    n = a.grid.n
    return ScalarForm(a.grid, a.degree + b.degree, _wedge_arrays(n, a.degree, a.data, b.degree, b.data))


def wedge_dot(a: BundleForm, b: BundleForm) -> ScalarForm:
    """Wedge-dot: contract value indices, wedge form parts (``a`` first)."""
    if a.grid != b.grid:
        raise RejectedInput("forms live on different grids")
    if a.kind == b.kind:
        raise RejectedInput("wedge-dot needs one vector-valued and one covector-valued form")
    n = a.grid.n
    out = sum(_wedge_arrays(n, a.degree, a.data[i], b.degree, b.data[i]) for i in range(n))
    return ScalarForm(a.grid, a.degree + b.degree, out)


def interior(u, alpha):
    """Interior product ``iota_u alpha`` of a vector field with a form.

    ``u`` is a vector-valued 0-form (or an array ``[j, *nodes]``); ``alpha`` is
    a :class:`ScalarForm` or :class:`BundleForm` of degree >= 1 (the value part
    is carried along).
    """
    uu = _vector_values(u)
    if alpha.degree < 1:
        raise RejectedInput("interior product of a 0-form is not defined")
    n = alpha.grid.n
    if isinstance(alpha, ScalarForm):
        return ScalarForm(alpha.grid, alpha.degree - 1, _interior_arrays(n, alpha.degree, uu, alpha.data))
    data = np.stack([_interior_arrays(n, alpha.degree, uu, alpha.data[i]) for i in range(n)])
    return BundleForm(alpha.grid, alpha.degree - 1, alpha.kind, data)


def _vector_values(u):
    if isinstance(u, BundleForm):
        if u.degree != 0 or u.kind != "vector":
            raise RejectedInput("expected a vector field (vector-valued 0-form)")
        return u.values
    return np.asarray(u, dtype=float)


def lie_derivative(u, alpha: ScalarForm, scheme="cartan") -> ScalarForm:
    """Lie derivative of a scalar form.

    ``scheme="cartan"`` uses ``d iota_u + iota_u d``. For a top form,
    ``scheme="product"`` expands the density instead:
    ``(u . grad rho + rho div u) dx``. Both are 2nd-order consistent and
    differ at O(h^2).
    """
    grid = alpha.grid
    n, k = grid.n, alpha.degree
    uu = _vector_values(u)
    if scheme == "product":
        if k != n:
            raise RejectedInput("the product scheme applies to top forms only")
        rho = alpha.data[0]
        out = sum(uu[j] * grid.d(rho, j) + rho * grid.d(uu[j], j) for j in range(n))
        return ScalarForm(grid, n, out[None])
    if scheme != "cartan":
        raise RejectedInput(f"unknown Lie derivative scheme {scheme!r}")
    if k == 0:
        return ScalarForm(grid, 0, _interior_arrays(n, 1, uu, _d_arrays(grid, 0, alpha.data)))
    out = _d_arrays(grid, k - 1, _interior_arrays(n, k, uu, alpha.data))
    if k < n:
        out = out + _interior_arrays(n, k + 1, uu, _d_arrays(grid, k, alpha.data))
    return ScalarForm(grid, k, out)


def lie_derivative_momentum(u, M: BundleForm, mass: ScalarForm | None = None,
                            metric: MetricField | None = None, scheme="identity") -> BundleForm:
    """Lie derivative of a covector-valued top form ``M = mu (x) v_flat``.

    ``scheme="identity"`` evaluates ``d_nabla(iota_u M) + mu (x) (nabla u ^. v_flat)``
    with ``v_flat = M / mu``; this needs ``mass``. ``scheme="product"`` uses the
    coordinate formula of a covector density,
    ``u^j d_j M_i + M_i d_j u^j + M_j d_i u^j``.
    """
    grid = M.grid
    n = grid.n
    if M.kind != "covector" or M.degree != n:
        raise RejectedInput("expected a covector-valued top form")
    uu = _vector_values(u)
    if scheme == "product":
        Mv = M.values
        div = sum(grid.d(uu[j], j) for j in range(n))
        out = np.empty_like(Mv)
        for i in range(n):
            out[i] = Mv[i] * div + sum(uu[j] * grid.d(Mv[i], j) + Mv[j] * grid.d(uu[j], i) for j in range(n))
        return BundleForm.top(grid, out, "covector")
    if scheme != "identity":
        raise RejectedInput(f"unknown Lie derivative scheme {scheme!r}")
    if mass is None:
        raise RejectedInput("the identity scheme needs the mass form")
    first = exterior_covariant_d(interior(uu, M), metric)
    grad = covariant_derivative(BundleForm.field(grid, uu), metric).data  # [k, j, *nodes]
    vflat = M.values / mass.data[0]
    second = np.stack([mass.data[0] * sum(grad[k, j] * vflat[k] for k in range(n)) for j in range(n)])
    return first + BundleForm.top(grid, second, "covector")


def lie_metric(u, metric: MetricField):
    """Lie derivative of a symmetric covariant 2-tensor field, fiber layout.

    ``(L_u g)_IJ = u^K d_K g_IJ + g_KJ d_I u^K + g_IK d_J u^K``.
    """
    grid = metric.grid
    n = grid.n
    uu = _vector_values(u)
    g = np.moveaxis(metric.g, (-2, -1), (0, 1))
    du = np.stack([np.stack([grid.d(uu[K], I) for I in range(n)]) for K in range(n)])  # [K, I]
    out = np.zeros_like(g)
    for I in range(n):
        for J in range(n):
            acc = sum(uu[K] * grid.d(g[I, J], K) for K in range(n)) if not metric.constant else 0.0
            out[I, J] = acc + sum(g[K, J] * du[K, I] + g[I, K] * du[K, J] for K in range(n))
    return np.moveaxis(out, (0, 1), (-2, -1))


# ---------------------------------------------------------------------------
# Hodge stars
# ---------------------------------------------------------------------------


def _minor_matrix(m, n, k):
    """Per-node matrix of k x k minors ``det(m[I, J])`` over increasing I, J."""
    cs = combos(n, k)
    if k == 0:
        return np.ones(m.shape[:-2] + (1, 1))
    if k == 1:
        return m
    out = np.empty(m.shape[:-2] + (len(cs), len(cs)))
    for a, I in enumerate(cs):
        for b, J in enumerate(cs):
            out[..., a, b] = np.linalg.det(m[..., list(I), :][..., :, list(J)])
    return out


@functools.lru_cache(maxsize=None)
def _complement_signs(n, k):
    """For each increasing K of length n-k: (index of K^c in combos(n,k), sign(K^c, K))."""
    src = _index(n, k)
    out = []
    for K in combos(n, n - k):
        Kc = tuple(i for i in range(n) if i not in K)
        out.append((src[Kc], _perm_sign(Kc + K)))
    return tuple(out)


def _apply_minors(M, a):
    """``out[c] = M[*nodes, c, d] a[d, ..., *nodes]``."""
    return _contract_first(M, a)


def _weight(grid, metric, mass):
    if mass is None:
        return metric.sqrt_det
    w = mass.data[0] if isinstance(mass, ScalarForm) else np.asarray(mass)
    if not np.all(w > 0):
        raise RejectedInput("non-positive mass density in Hodge star")
    return w


def _hodge_arrays(grid, metric, w, k, a):
    n = grid.n
    up = _apply_minors(_minor_matrix(metric.inv, n, k), a)
    out = np.empty((math.comb(n, n - k),) + a.shape[1:])
    for c, (src, s) in enumerate(_complement_signs(n, k)):
        out[c] = s * w * up[src]
    return out


def _hodge_inv_arrays(grid, metric, w, k, b):
    """Inverse of :func:`_hodge_arrays`; ``b`` has degree n - k, result degree k."""
    n = grid.n
    up = np.empty((math.comb(n, k),) + b.shape[1:])
    for c, (src, s) in enumerate(_complement_signs(n, k)):
        up[src] = s * b[c] / w
    return _apply_minors(_minor_matrix(metric.g, n, k), up)


def hodge(alpha: ScalarForm, metric: MetricField | None = None, mass: ScalarForm | None = None) -> ScalarForm:
    """Hodge star of a scalar form.

    With ``mass`` given, the metric volume form is replaced by the mass form,
    so that ``hodge(1, mass=mu) == mu``.
    """
    grid = alpha.grid
    metric = _metric(grid, metric)
    w = _weight(grid, metric, mass)
    return ScalarForm(grid, grid.n - alpha.degree, _hodge_arrays(grid, metric, w, alpha.degree, alpha.data))


def hodge_inv(beta: ScalarForm, metric: MetricField | None = None, mass: ScalarForm | None = None) -> ScalarForm:
    """Inverse of :func:`hodge` with the same weighting."""
    grid = beta.grid
    metric = _metric(grid, metric)
    w = _weight(grid, metric, mass)
    k = grid.n - beta.degree
    return ScalarForm(grid, k, _hodge_inv_arrays(grid, metric, w, k, beta.data))


def hodge_c(phi: BundleForm, metric: MetricField | None = None, mass: ScalarForm | None = None) -> BundleForm:
    """Complementary Hodge star: vector-valued k-form to covector-valued (n-k)-form.

    The value index is lowered with the metric and the form part is mapped by
    the (mass-weighted) Hodge star. For n = 2 and every k this convention
    gives ``phi ^. hodge_c(phi) = |phi|^2 mu >= 0``.
    """
    if phi.kind != "vector":
        raise RejectedInput("hodge_c maps vector-valued forms")
    grid = phi.grid
    metric = _metric(grid, metric)
    w = _weight(grid, metric, mass)
    low = metric.lower(phi.data)
    data = np.stack([_hodge_arrays(grid, metric, w, phi.degree, low[i]) for i in range(grid.n)])
    return BundleForm(grid, grid.n - phi.degree, "covector", data)


def hodge_c_inv(psi: BundleForm, metric: MetricField | None = None, mass: ScalarForm | None = None) -> BundleForm:
    """Inverse of :func:`hodge_c`."""
    if psi.kind != "covector":
        raise RejectedInput("hodge_c_inv maps covector-valued forms")
    grid = psi.grid
    metric = _metric(grid, metric)
    w = _weight(grid, metric, mass)
    k = grid.n - psi.degree
    data = np.stack([_hodge_inv_arrays(grid, metric, w, k, psi.data[i]) for i in range(grid.n)])
    return BundleForm(grid, k, "vector", metric.raise_(data))


def lower(phi: BundleForm, metric: MetricField | None = None) -> BundleForm:
    """Lower the value index of a vector-valued form."""
    metric = _metric(phi.grid, metric)
    return BundleForm(phi.grid, phi.degree, "covector", metric.lower(phi.data))


def raise_index(phi: BundleForm, metric: MetricField | None = None) -> BundleForm:
    """Raise the value index of a covector-valued form."""
    metric = _metric(phi.grid, metric)
    return BundleForm(phi.grid, phi.degree, "vector", metric.raise_(phi.data))


# ---------------------------------------------------------------------------
# mixed-tensor proxies
# ---------------------------------------------------------------------------


def bundle_to_fiber(phi: BundleForm):
    """Vector/covector-valued 1-form to fiber layout ``[*nodes, i, j]``."""
    if phi.degree != 1:
        raise RejectedInput("only bundle-valued 1-forms have a (1,1)/(0,2) proxy")
    return np.moveaxis(phi.data, (0, 1), (-2, -1))


def fiber_to_bundle(grid, X, kind="vector") -> BundleForm:
    """Inverse of :func:`bundle_to_fiber`."""
    return BundleForm(grid, 1, kind, np.moveaxis(np.asarray(X, dtype=float), (-2, -1), (0, 1)))


# ---------------------------------------------------------------------------
# integration and traces
# ---------------------------------------------------------------------------


def integrate(alpha: ScalarForm) -> float:
    """Quadrature of a top-degree scalar form."""
    if alpha.degree != alpha.grid.n:
        raise RejectedInput(f"only top forms can be integrated (degree {alpha.degree})")
    return weighted_sum(alpha.data[0], alpha.grid.weights)


def boundary_trace(alpha, face):
    """Restrict the form part of ``alpha`` to a face.

    Returns an array with the components whose index set excludes the face's
    normal axis, evaluated on the face nodes: ``[c', *face]`` for scalar forms
    and ``[i, c', *face]`` for bundle forms. The kept components, in order,
    are the increasing index tuples of ``range(n)`` without the normal axis.
    """
    grid = alpha.grid
    axis, _ = face
    if grid.periodic[axis]:
        raise RejectedInput(f"axis {axis} is periodic and has no faces")
    keep = [c for c, I in enumerate(combos(grid.n, alpha.degree)) if axis not in I]
    lead = alpha.data.ndim - grid.n
    sl = (slice(None),) * lead + grid.face_slice(face)
    return np.take(alpha.data[sl], keep, axis=lead - 1)


def boundary_integral(beta: ScalarForm, faces=None) -> float:
    """Oriented integral of an (n-1)-form over the given faces (default: all).

    Orientation is the one induced by the outward normal, so Stokes' theorem
    reads ``integrate(exterior_d(beta)) == boundary_integral(beta)``.
    """
    grid = beta.grid
    n = grid.n
    if beta.degree != n - 1:
        raise RejectedInput("boundary integrals need an (n-1)-form")
    if faces is None:
        faces = grid.faces
    total = 0.0
    for axis, side in faces:
        tr = boundary_trace(beta, (axis, side))[0]
        sign = (-1) ** axis * (1 if side == 1 else -1)
        total += sign * weighted_sum(tr, grid.face_weights(axis))
    return total


def interpolate(grid: Grid, values, points):
    """Multilinear interpolation of nodal values at arbitrary points.

    Parameters
    ----------
    grid : Grid
    values : ndarray
        Shape ``(..., *grid.shape)``.
    points : ndarray
        Shape ``(n, *P)``. Periodic axes wrap; bounded axes reject points
        outside the domain by more than ``1e-9 h``.

    Returns
    -------
    ndarray
        Shape ``(..., *P)``.
    """
    values = np.asarray(values, dtype=float)
    points = np.asarray(points, dtype=float)
    n = grid.n
    lead = values.shape[: values.ndim - n]
    P = points.shape[1:]
    idx0, frac = [], []
    for a in range(n):
        s = (points[a] - grid.origin[a]) / grid.h[a]
        N = grid.shape[a]
        if grid.periodic[a]:
            i0 = np.floor(s)
            f = s - i0
            i0 = i0.astype(np.int64) % N
        else:
            if np.any(s < -1e-9) or np.any(s > grid.cells[a] + 1e-9):
                raise RejectedInput(f"interpolation point outside the grid along axis {a}")
            s = np.clip(s, 0.0, grid.cells[a])
            i0 = np.minimum(np.floor(s).astype(np.int64), grid.cells[a] - 1)
            f = s - i0
        idx0.append(i0)
        frac.append(f)
    out = np.zeros(lead + P)
    for corner in itertools.product((0, 1), repeat=n):
        w = np.ones(P)
        ix = []
        for a, c in enumerate(corner):
            w = w * (frac[a] if c else 1.0 - frac[a])
            i = idx0[a] + c
            if grid.periodic[a]:
                i = i % grid.shape[a]
            ix.append(i)
        out += w * values[(Ellipsis,) + tuple(ix)]
    return out


# ---------------------------------------------------------------------------
# snapshot I/O
# ---------------------------------------------------------------------------


def write_form_csv(path, form, name="field", t=None):
    """Write a form as a commented plain-text header plus a CSV body.

    Body rows are ``node, c0, c1, ...`` where ``node`` is the C-order flat
    node index and the components run over ``data`` with nodes removed.
    """
    grid = form.grid
    lead = form.data.ndim - grid.n
    flat = form.data.reshape(form.data.shape[:lead] + (-1,)).reshape(-1, grid.size).T
    kind = getattr(form, "kind", "scalar")
    lines = [
        f"# name: {name}",
        f"# type: {type(form).__name__}",
        f"# kind: {kind}",
        f"# degree: {form.degree}",
        f"# grid: {grid.describe()!r}",
        f"# component_shape: {list(form.data.shape[:lead])}",
    ]
    if t is not None:
        lines.append(f"# t: {t!r}")
    cols = ",".join(f"c{i}" for i in range(flat.shape[1]))
    lines.append(f"node,{cols}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
        for i, row in enumerate(flat):
            fh.write(f"{i}," + ",".join(repr(float(x)) for x in row) + "\n")


def read_form_csv(path):
    """Read a file written by :func:`write_form_csv`; returns ``(form, header)``."""
    import ast

    header = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                header[key.strip()] = val.strip()
            elif line.startswith("node"):
                continue
            elif line.strip():
                rows.append([float(x) for x in line.split(",")[1:]])
    gd = ast.literal_eval(header["grid"])
    labels = gd["boundary"]
    boundary = {(a, s): labels[2 * a + s] for a in range(len(gd["cells"])) for s in (0, 1)
                if labels[2 * a + s] is not None}
    grid = Grid.make(gd["cells"], gd["lengths"], gd["periodic"], gd["origin"], boundary)
    comp = tuple(ast.literal_eval(header["component_shape"]))
    data = np.asarray(rows).T.reshape(comp + grid.shape)
    degree = int(header["degree"])
    if header["type"] == "BundleForm":
        form = BundleForm(grid, degree, header["kind"], data)
    elif header["type"] == "MassForm":
        form = MassForm(grid, degree, data)
    else:
        form = ScalarForm(grid, degree, data)
    return form, header
