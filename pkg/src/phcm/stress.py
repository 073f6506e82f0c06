"""Stress-power Stokes-Dirac structure, stress-port decompositions and strain rates.

The extensive stress is a covector-valued (n-1)-form ``T``; the intensive
stress is the mixed tensor field ``tau`` (fiber layout ``[*nodes, i, j]``)
with ``T = hodge_c(tau)``. Velocity gradients are mixed tensor fields
``X[*nodes, i, j] = nabla_j v^i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from phcm import fiber, mesh
from phcm.errors import RejectedInput
from phcm.mesh import TRACTION, VELOCITY, BundleForm, MetricField, ScalarForm

__all__ = [
    "StokesDiracOutput",
    "RateOfStrain",
    "stokes_dirac_apply",
    "impose_velocity",
    "impose_traction",
    "traction_lift",
    "stress_power_balance",
    "rate_of_strain",
    "stress_coefficients",
    "decompose_stress_port",
    "to_extensive",
    "to_intensive",
    "stress_symmetry_residual",
]


@dataclass
class StokesDiracOutput:
    """Flows and efforts produced by :func:`stokes_dirac_apply`.

    Attributes
    ----------
    f_s : BundleForm
        Velocity gradient (vector-valued 1-form).
    e_d : BundleForm
        Stress divergence (covector-valued top form).
    v : ndarray
        Velocity after boundary inputs were imposed.
    T : BundleForm
        Stress after boundary inputs were imposed.
    traction_out : dict
        ``{face: T trace}`` on velocity-input faces.
    velocity_out : dict
        ``{face: v trace}`` on traction-input faces.
    T_trace : BundleForm or None
        Stress whose face traces enter the boundary pairing when it differs
        from ``T`` (weak traction imposition).
    """

    f_s: BundleForm
    e_d: BundleForm
    v: np.ndarray
    T: BundleForm
    traction_out: dict = field(default_factory=dict)
    velocity_out: dict = field(default_factory=dict)
    T_trace: BundleForm = None


def _check_inputs(grid, inputs, label, what):
    inputs = inputs or {}
    for face in inputs:
        if face not in grid.faces:
            raise RejectedInput(f"{what} input on {face}: not a bounded face of the grid")
        if grid.label(face) != label:
            raise RejectedInput(f"{what} input on face {face}, which is a {grid.label(face)} face")
    return inputs


def stokes_dirac_apply(v, T: BundleForm, metric: MetricField | None = None, velocity_in=None,
                       traction_in=None, sbp=False, traction_mode="strong") -> StokesDiracOutput:
    """Apply the stress-power Stokes-Dirac structure.

    ``f_s = nabla v`` and ``e_d = d_nabla T``. Boundary inputs are imposed
    strongly before differentiation: velocity values on velocity faces and
    stress traces on traction faces.

    Parameters
    ----------
    v : ndarray
        Velocity ``[i, *nodes]`` (the flow from the kinetic block).
    T : BundleForm
        Stress, covector-valued (n-1)-form.
    metric : MetricField, optional
        Metric defining the connection (Euclidean by default).
    velocity_in : dict, optional
        ``{face: values[i, *face]}`` for faces labelled velocity.
    traction_in : dict, optional
        ``{face: values[i, c, *face]}`` for faces labelled traction, with all
        ``C(n, n-1)`` components (only the tangential ones enter the balance).
    sbp : bool
        Use summation-by-parts end closures.
    traction_mode : str
        ``"strong"`` overwrites the stress trace; ``"weak"`` keeps ``T`` and
        adds the boundary lift of ``T_in - T`` to ``e_d`` (needs ``sbp``),
        which keeps the power balance exact for the unmodified interior
        stress.
    """
    grid = T.grid
    n = grid.n
    if T.kind != "covector" or T.degree != n - 1:
        raise RejectedInput("stress must be a covector-valued (n-1)-form")
    velocity_in = _check_inputs(grid, velocity_in, VELOCITY, "velocity")
    traction_in = _check_inputs(grid, traction_in, TRACTION, "traction")
    if traction_mode not in ("strong", "weak"):
        raise RejectedInput(f"unknown traction mode {traction_mode!r}")
    if traction_mode == "weak" and not sbp:
        raise RejectedInput("weak traction imposition needs the summation-by-parts closure")
    v = impose_velocity(v, grid, velocity_in)
    Tb = impose_traction(T, traction_in)
    f_s = mesh.covariant_derivative(BundleForm.field(grid, v), metric, sbp)
    if traction_mode == "strong":
        T = Tb
        e_d = mesh.exterior_covariant_d(T, metric, sbp)
    else:
        e_d = mesh.exterior_covariant_d(T, metric, sbp) + traction_lift(T, Tb, traction_in)
    t_out = {f: Tb.data[(slice(None), slice(None)) + grid.face_slice(f)] for f in grid.faces_with(VELOCITY)}
    v_out = {f: v[(slice(None),) + grid.face_slice(f)] for f in grid.faces_with(TRACTION)}
    return StokesDiracOutput(f_s, e_d, v, T, t_out, v_out, None if traction_mode == "strong" else Tb)


def impose_velocity(v, grid, velocity_in):
    """Copy of ``v`` with the face values of ``velocity_in`` written in."""
    v = np.array(v, dtype=float)
    for face, val in (velocity_in or {}).items():
        v[(slice(None),) + grid.face_slice(face)] = val
    return v


def impose_traction(T: BundleForm, traction_in) -> BundleForm:
    """Copy of ``T`` with the face traces of ``traction_in`` written in.

    Only the components tangential to each face (those kept by
    :func:`mesh.boundary_trace`) are overwritten, so a corner node keeps the
    trace it carries on the neighbouring face.
    """
    grid = T.grid
    Td = T.data.copy()
    for face, val in (traction_in or {}).items():
        keep = [c for c, I in enumerate(mesh.combos(grid.n, T.degree)) if face[0] not in I]
        sl = grid.face_slice(face)
        val = np.broadcast_to(val, Td[(slice(None), slice(None)) + sl].shape)
        for c in keep:
            Td[(slice(None), c) + sl] = val[:, c]
    return BundleForm(grid, T.degree, T.kind, Td)


def traction_lift(T: BundleForm, Tb: BundleForm, traction_in) -> BundleForm:
    """Sum of the boundary lifts of ``Tb - T`` over the traction-input faces."""
    grid = T.grid
    out = BundleForm.zeros(grid, grid.n, T.kind)
    for face in traction_in or {}:
        out = out + mesh.boundary_lift(Tb - T, face)
    return out


def stress_power_balance(out: StokesDiracOutput):
    """Interior pairings minus boundary pairing of a Stokes-Dirac evaluation.

    Returns ``(residual, terms)`` with ``terms`` holding ``interior`` (the sum
    ``int f_s ^. T + v ^. e_d``), ``boundary_velocity_faces`` and
    ``boundary_traction_faces``.
    """
    grid = out.T.grid
    n = grid.n
    Ttr = out.T_trace if out.T_trace is not None else out.T
    interior = (mesh.integrate(mesh.wedge_dot(out.f_s, out.T))
                + mesh.integrate(mesh.wedge_dot(BundleForm.field(grid, out.v), out.e_d)))
    parts = {VELOCITY: 0.0, TRACTION: 0.0}
    for face in grid.faces:
        axis, side = face
        sign = (-1) ** axis * (1 if side == 1 else -1)
        vf = out.v[(slice(None),) + grid.face_slice(face)]
        Tf = mesh.boundary_trace(Ttr, face)
        if n == 1:
            val = float(np.sum(vf * Tf[:, 0]))
            parts[grid.label(face)] += (1 if side == 1 else -1) * val
            continue
        w = grid.face_weights(axis)
        # corner nodes counted once per face; the quadrature weights handle edges
        dens = np.einsum("i...,i...->...", vf, Tf[:, 0])
        parts[grid.label(face)] += sign * mesh.weighted_sum(dens, w)
    boundary = parts[VELOCITY] + parts[TRACTION]
    return interior - boundary, {"interior": interior, "boundary_velocity_faces": parts[VELOCITY],
                                 "boundary_traction_faces": parts[TRACTION]}


@dataclass
class RateOfStrain:
    """Rate of strain ``eps``, spin ``w`` and the volumetric/deviatoric split of ``eps``."""

    eps: np.ndarray
    w: np.ndarray
    eps_vol: np.ndarray
    eps_dev: np.ndarray


def rate_of_strain(v, metric: MetricField | None = None, grad=None, sbp=False) -> RateOfStrain:
    """Metric-symmetric part of the covariant velocity gradient.

    ``eps = 1/2 (X + g^-1 X^T g)`` with ``X = nabla v``; ``w = X - eps``.
    """
    if grad is None:
        grid = metric.grid if metric is not None else None
        if grid is None:
            raise RejectedInput("rate_of_strain needs a metric or a precomputed gradient")
        grad = mesh.bundle_to_fiber(mesh.covariant_derivative(BundleForm.field(grid, v), metric, sbp))
    g = metric.g if metric is not None else np.broadcast_to(np.eye(grad.shape[-1]), grad.shape)
    eps = fiber.metric_sym(grad, g)
    vol, dev = fiber.vol_dev(eps)
    return RateOfStrain(eps, grad - eps, vol, dev)


def stress_coefficients(T: BundleForm):
    """Coefficients ``Y[*nodes, i, j]`` with ``X ^. T = <Y|X> dx^1...dx^n``.

    For a vector-valued 1-form with components ``X^i_j`` the wedge-dot with
    ``T`` is ``sum_ij Y_i^j X^i_j`` times the coordinate volume element.
    """
    grid = T.grid
    n = grid.n
    Y = np.empty(grid.shape + (n, n))
    for j in range(n):
        a = np.zeros((n,) + grid.shape)  # dx^j
        a[j] = 1.0
        for i in range(n):
            Y[..., i, j] = mesh._wedge_arrays(n, 1, a, n - 1, T.data[i])[0]
    return Y


def decompose_stress_port(grad, T: BundleForm, metric: MetricField | None = None):
    """Symmetric/asymmetric and volumetric/deviatoric splits of the stress port.

    Parameters
    ----------
    grad : ndarray
        Velocity gradient ``[*nodes, i, j]``.
    T : BundleForm
        Extensive stress.
    metric : MetricField, optional

    Returns
    -------
    dict
        Port variables (``eps``, ``w``, ``eps_vol``, ``eps_dev``, ``Y_sym``,
        ``Y_asy``, ``y_vol``, ``Y_dev``) and the integrated pairings ``total``,
        ``sym``, ``asy``, ``vol``, ``dev``.
    """
    grid = T.grid
    n = grid.n
    g = metric.g if metric is not None else np.broadcast_to(np.eye(n), grid.shape + (n, n))
    Y = stress_coefficients(T)
    eps = fiber.metric_sym(grad, g)
    w = grad - eps
    Ys = fiber.dual_metric_sym(Y, g)
    Ya = Y - Ys
    ev, ed = fiber.vol_dev(eps)
    yv, yd = fiber.dual_vol_dev(Ys)

    def integ(f):
        return mesh.integrate(ScalarForm.top(grid, f))

    return {
        "eps": eps, "w": w, "eps_vol": ev, "eps_dev": ed,
        "Y_sym": Ys, "Y_asy": Ya, "y_vol": yv, "Y_dev": yd,
        "total": integ(fiber.pair(Y, grad)),
        "sym": integ(fiber.pair(Ys, eps)),
        "asy": integ(fiber.pair(Ya, w)),
        "vol": integ(yv * ev),
        "dev": integ(fiber.pair(yd, ed)),
    }


def to_extensive(tau, metric: MetricField | None, mass: ScalarForm) -> BundleForm:
    """``T = hodge_c(tau)`` for a mixed tensor field ``tau[*nodes, i, j]``."""
    grid = mass.grid
    return mesh.hodge_c(mesh.fiber_to_bundle(grid, tau), metric, mass)


def to_intensive(T: BundleForm, metric: MetricField | None, mass: ScalarForm):
    """Inverse of :func:`to_extensive`."""
    return mesh.bundle_to_fiber(mesh.hodge_c_inv(T, metric, mass))


def stress_symmetry_residual(T: BundleForm, metric: MetricField | None, alpha, beta) -> float:
    """Largest nodal ``|(a (x) b#) ^. T - (b (x) a#) ^. T|`` for 1-forms ``a``, ``b``.

    ``alpha`` and ``beta`` are covector fields ``[i, *nodes]``.
    """
    grid = T.grid
    n = grid.n
    ginv = metric.inv if metric is not None else np.broadcast_to(np.eye(n), grid.shape + (n, n))
    Y = stress_coefficients(T)
    bs = np.einsum("...ij,j...->...i", ginv, beta)
    as_ = np.einsum("...ij,j...->...i", ginv, alpha)
    a = np.moveaxis(alpha, 0, -1)
    b = np.moveaxis(beta, 0, -1)
    X1 = bs[..., :, None] * a[..., None, :]
    X2 = as_[..., :, None] * b[..., None, :]
    return float(np.max(np.abs(fiber.pair(Y, X1) - fiber.pair(Y, X2))))
