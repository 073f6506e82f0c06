"""Kinetic energy, its variational derivatives and the kinetic Dirac dynamics.

Effort conventions per representation:

* material: ``e_phi`` (covector-valued top form), ``e_M`` (vector field);
* spatial: ``e_mu`` (0-form coefficient), ``e_M`` (vector field);
* convective: ``B`` (symmetric ``[*nodes, I, J]``, the metric effort is
  ``B^IJ iota_J mu``) and ``e_M`` (vector field).

Vector fields are plain arrays ``[i, *nodes]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from phcm import mesh
from phcm.errors import RejectedInput
from phcm.mesh import BundleForm, MetricField, ScalarForm
from phcm.states import ConvectiveState, MaterialState, Params, SpatialState, velocity

__all__ = [
    "REPRESENTATIONS",
    "KineticHamiltonian",
    "VariationalDerivatives",
    "KineticOutput",
    "kinetic_energy",
    "variational_derivatives",
    "metric_effort_form",
    "kinetic_dirac_apply",
    "kinetic_power_residual",
    "balance_form_rhs",
    "spatial_flux_residual",
]

REPRESENTATIONS = ("material", "spatial", "convective")


def _rep_of(state):
    if isinstance(state, MaterialState):
        return "material"
    if isinstance(state, SpatialState):
        return "spatial"
    if isinstance(state, ConvectiveState):
        return "convective"
    raise RejectedInput(f"not a state: {type(state).__name__}")


def _mass_and_metric(state, p: Params):
    """Mass density and metric field for the state's kinetic Hodge star."""
    if isinstance(state, MaterialState):
        return p.mass, MetricField(state.grid, p.g, check=False)
    if isinstance(state, SpatialState):
        return state.mu, MetricField(state.grid, p.g, check=False)
    return p.mass, state.ghat


def _velocity(state, p):
    mass, metric = _mass_and_metric(state, p)
    return mesh.hodge_c_inv(state.M, metric, mass).values


@dataclass(frozen=True)
class KineticHamiltonian:
    """Kinetic energy functional for one representation."""

    representation: str
    params: Params

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise RejectedInput(f"unknown representation {self.representation!r}")

    def __call__(self, state):
        if _rep_of(state) != self.representation:
            raise RejectedInput("state does not match the Hamiltonian's representation")
        return kinetic_energy(state, self.params)


def kinetic_energy(state, p: Params) -> float:
    """``int 1/2 v ^. M`` with ``v`` recovered through the kinetic Hodge star."""
    v = _velocity(state, p)
    return 0.5 * mesh.integrate(mesh.wedge_dot(BundleForm.field(state.grid, v), state.M))


@dataclass
class VariationalDerivatives:
    """Partial derivatives of the kinetic energy.

    ``first`` is the derivative with respect to the configuration-like
    variable (``phi``, ``mu`` or ``ghat``); ``momentum`` is the velocity;
    ``boundary`` is the material boundary derivative (zero) or ``None``.
    """

    representation: str
    first: object
    momentum: np.ndarray
    boundary: object = None


def variational_derivatives(state, p: Params) -> VariationalDerivatives:
    """Closed-form derivatives.

    material: ``dH/dphi = 0``, boundary part 0, ``dH/dM = v_t``;
    spatial: ``dH/dmu = -1/2 g(v, v)``, ``dH/dM = v``;
    convective: ``dH/dghat = -1/2 iota_vhat mu (x) vhat``, returned as
    ``B^IJ = -1/2 vhat^I vhat^J``, and ``dH/dMhat = vhat``.
    """
    rep = _rep_of(state)
    v = _velocity(state, p)
    grid = state.grid
    if rep == "material":
        return VariationalDerivatives(rep, BundleForm.zeros(grid, grid.n, "covector"), v,
                                      BundleForm.zeros(grid, grid.n - 1, "covector"))
    if rep == "spatial":
        vv = np.einsum("i...,ij,j...->...", v, p.g, v)
        return VariationalDerivatives(rep, -0.5 * vv, v)
    B = -0.5 * np.einsum("I...,J...->...IJ", v, v)
    return VariationalDerivatives(rep, B, v)


def metric_effort_form(ghat: MetricField, B, mass: ScalarForm) -> BundleForm:
    """Covector-valued (n-1)-form ``ghat_KI B^IJ iota_J mu``."""
    grid = ghat.grid
    n = grid.n
    low = np.einsum("...KI,...IJ->KJ...", ghat.g, B)
    out = np.zeros((n, n) + grid.shape) if n > 1 else np.zeros((n, 1) + grid.shape)
    for J in range(n):
        eJ = np.zeros((n,) + grid.shape)
        eJ[J] = 1.0
        iJ = mesh.interior(eJ, mass).data
        for K in range(n):
            out[K] += low[K, J] * iJ
    return BundleForm(grid, n - 1, "covector", out)


@dataclass
class KineticOutput:
    """Result of a kinetic Dirac block evaluation.

    Attributes
    ----------
    rates : dict
        State rates; keys ``("phi", "M")``, ``("mu", "M")`` or ``("ghat", "M")``.
    f_d : ndarray
        Velocity flow sent to the stress block, ``[i, *nodes]``.
    boundary_flow : ndarray or None
        Velocity trace source ``[i, *nodes]`` (only face nodes are meaningful).
    boundary_effort : BundleForm or None
        Covector-valued (n-1)-form whose face traces pair with the boundary flow.
    """

    rates: dict
    f_d: np.ndarray
    boundary_flow: np.ndarray = None
    boundary_effort: BundleForm = None
    info: dict = field(default_factory=dict)


def kinetic_dirac_apply(state, p: Params, efforts, force: BundleForm | None = None,
                        scheme="identity") -> KineticOutput:
    """Apply the kinetic Dirac structure of the state's representation.

    Parameters
    ----------
    state : MaterialState, SpatialState or ConvectiveState
        Modulating state.
    p : Params
    efforts : tuple
        ``(first, e_M)`` in the convention of the module docstring.
    force : BundleForm, optional
        Distributed force (covector-valued top form) entering the momentum
        balance, usually the stress block output.
    scheme : str
        Lie-derivative scheme for the momentum form (spatial and convective).
    """
    rep = _rep_of(state)
    grid = state.grid
    n = grid.n
    e1, eM = efforts
    eM = np.asarray(eM, dtype=float)
    force = force if force is not None else BundleForm.zeros(grid, n, "covector")
    if rep == "material":
        e_phi = e1 if isinstance(e1, BundleForm) else BundleForm.top(grid, e1, "covector")
        return KineticOutput({"phi": eM.copy(), "M": -e_phi + force}, eM.copy())
    if rep == "spatial":
        mu = state.mu
        metric = MetricField(grid, p.g, check=False)
        e_mu = np.asarray(e1, dtype=float)
        f_mu = -mesh.exterior_d(mesh.interior(eM, mu))
        de = np.stack([grid.d(e_mu, j) for j in range(n)])
        f_M = (BundleForm.top(grid, -mu.data[0] * de, "covector")
               - mesh.lie_derivative_momentum(eM, state.M, mu, metric, scheme) + force)
        bnd = -(_scalar_to_covector_form(e_mu, mu) + mesh.interior(eM, state.M))
        out = KineticOutput({"mu": f_mu, "M": f_M}, eM.copy(), eM.copy(), bnd)
        out.info["flux_residual"] = spatial_flux_residual(state, p, eM)
        return out
    ghat = state.ghat
    mass = p.mass
    B = np.asarray(e1, dtype=float)
    grad = mesh.bundle_to_fiber(mesh.covariant_derivative(BundleForm.field(grid, eM), ghat))  # [*, K, J]
    low = np.einsum("...IK,...KJ->...IJ", ghat.g, grad)
    f_g = low + np.swapaxes(low, -1, -2)
    gE = metric_effort_form(ghat, B, mass)
    f_M = (2.0 * mesh.exterior_covariant_d(gE, ghat)
           + mesh.lie_derivative_momentum(eM, state.M, mass, ghat, scheme) + force)
    bnd = 2.0 * gE + mesh.interior(eM, state.M)
    return KineticOutput({"ghat": f_g, "M": f_M}, eM.copy(), eM.copy(), bnd)


def _scalar_to_covector_form(f, mu):
    """``f iota_{d_i} mu`` as a covector-valued (n-1)-form."""
    grid = mu.grid
    n = grid.n
    if n == 1:
        return BundleForm(grid, 0, "covector", (f * mu.data[0])[None, None])
    data = np.empty((n, n) + grid.shape)
    for i in range(n):
        ei = np.zeros((n,) + grid.shape)
        ei[i] = 1.0
        data[i] = f * mesh.interior(ei, mu).data
    return BundleForm(grid, n - 1, "covector", data)


def spatial_flux_residual(state: SpatialState, p: Params, v=None) -> float:
    """Largest face value of the normal momentum flux ``iota_v M`` (0 if periodic)."""
    grid = state.grid
    if not grid.faces:
        return 0.0
    if v is None:
        v = velocity(state.M, state.mu, np.linalg.inv(p.g))
    flux = mesh.interior(v, state.M)
    return max(float(np.max(np.abs(mesh.boundary_trace(flux, f)))) for f in grid.faces)


def _face_pairing(flow, effort: BundleForm):
    grid = effort.grid
    if not grid.faces:
        return 0.0
    if grid.n == 1:
        val = flow[0] * effort.data[0, 0]
        return float(val[-1] - val[0])
    beta = ScalarForm(grid, grid.n - 1, np.einsum("i...,ic...->c...", flow, effort.data))
    return mesh.boundary_integral(beta)


def kinetic_power_residual(state, p: Params, efforts, out: KineticOutput, force: BundleForm | None = None):
    """Balance ``<e|rates> - <force|f_d> - boundary pairing`` of a block evaluation.

    Returns ``(residual, terms)`` where ``terms`` holds the individual
    pairings.
    """
    rep = _rep_of(state)
    grid = state.grid
    n = grid.n
    e1, eM = efforts
    force = force if force is not None else BundleForm.zeros(grid, n, "covector")
    eMf = BundleForm.field(grid, eM)
    if rep == "material":
        e_phi = e1 if isinstance(e1, BundleForm) else BundleForm.top(grid, e1, "covector")
        p1 = mesh.integrate(mesh.wedge_dot(BundleForm.field(grid, out.rates["phi"]), e_phi))
    elif rep == "spatial":
        p1 = mesh.integrate(ScalarForm.top(grid, np.asarray(e1) * out.rates["mu"].data[0]))
    else:
        p1 = mesh.integrate(ScalarForm.top(grid, np.einsum("...IJ,...IJ->...", e1, out.rates["ghat"]) * p.rho))
    p2 = mesh.integrate(mesh.wedge_dot(eMf, out.rates["M"]))
    pd = mesh.integrate(mesh.wedge_dot(BundleForm.field(grid, out.f_d), force))
    pb = _face_pairing(out.boundary_flow, out.boundary_effort) if out.boundary_effort is not None else 0.0
    terms = {"state": p1 + p2, "distributed": pd, "boundary": pb}
    return p1 + p2 - pd - pb, terms


def balance_form_rhs(state, p: Params, form="conservation", force: BundleForm | None = None):
    """Right-hand side of the mass/momentum (or metric/momentum) balance laws.

    ``form="advection"`` expands Lie derivatives with coordinate product
    formulas; ``form="conservation"`` uses the divergence form. The two agree
    up to O(h^2).

    spatial:
        advection ``(-L_v mu, -L_v M + mu (x) 1/2 d|v|^2 + F)``;
        conservation ``(-d iota_v mu, -d_nabla(iota_v M) + F)``.
    convective:
        advection ``(L_vhat ghat, L_vhat Mhat - d_nabla(iota_vhat Mhat) + F)``;
        conservation ``(2 sym(nabla vhat_flat), mu (x) 1/2 d|vhat|^2 + F)``.
    material:
        both forms give ``(v_t, F)``.
    """
    if form not in ("advection", "conservation"):
        raise RejectedInput(f"unknown balance form {form!r}")
    rep = _rep_of(state)
    grid = state.grid
    n = grid.n
    force = force if force is not None else BundleForm.zeros(grid, n, "covector")
    v = _velocity(state, p)
    if rep == "material":
        return {"phi": v, "M": force.copy()}
    if rep == "spatial":
        mu, M = state.mu, state.M
        if form == "conservation":
            return {"mu": -mesh.exterior_d(mesh.interior(v, mu)),
                    "M": -mesh.exterior_covariant_d(mesh.interior(v, M)) + force}
        half = 0.5 * np.einsum("i...,ij,j...->...", v, p.g, v)
        dk = np.stack([grid.d(half, j) for j in range(n)])
        return {"mu": -mesh.lie_derivative(v, mu, "product"),
                "M": (-mesh.lie_derivative_momentum(v, M, scheme="product")
                      + BundleForm.top(grid, mu.data[0] * dk, "covector") + force)}
    ghat, M = state.ghat, state.M
    if form == "advection":
        return {"ghat": mesh.lie_metric(v, ghat),
                "M": (mesh.lie_derivative_momentum(v, M, scheme="product")
                      - mesh.exterior_covariant_d(mesh.interior(v, M), ghat) + force)}
    grad = mesh.bundle_to_fiber(mesh.covariant_derivative(BundleForm.field(grid, v), ghat))
    low = np.einsum("...IK,...KJ->...IJ", ghat.g, grad)
    half = 0.5 * np.einsum("I...,...IJ,J...->...", v, ghat.g, v)
    dk = np.stack([grid.d(half, j) for j in range(n)])
    return {"ghat": low + np.swapaxes(low, -1, -2),
            "M": BundleForm.top(grid, p.rho * dk, "covector") + force}
