"""Constitutive closures: hyperelastic solids, Newtonian fluids, equations of state.

Stresses are intensive mixed tensor fields ``tau[*nodes, i, j]`` per unit
mass; the stress power density is ``tr(tau eps)`` times the mass density.
Strain energies ``psi`` are specific (per unit mass).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from phcm import fiber
from phcm.errors import ConfigError, PHCMError, RejectedInput

__all__ = [
    "HYPERELASTIC_KINDS",
    "HyperelasticModel",
    "FluidModel",
    "EquationOfState",
    "StrainState",
    "strain",
    "strain_energy_density",
    "doyle_ericksen_stress",
    "evaluate_hyperelastic",
    "strain_update",
    "evaluate_newtonian",
    "equation_of_state",
    "zeta_vol_from_density",
    "density_from_zeta_vol",
    "incompressibility_closure",
    "project_divergence_free",
    "centered_divergence",
]

HYPERELASTIC_KINDS = ("hencky-finite", "stvk-infinitesimal", "mooney-rivlin", "neo-hookean")

#: Central-difference step of the Doyle-Ericksen stress, relative to |g|.
DE_STEP = 1e-6


@dataclass(frozen=True)
class HyperelasticModel:
    """Isotropic hyperelastic model.

    Parameters
    ----------
    kind : str
        One of :data:`HYPERELASTIC_KINDS`.
    kappa, theta : float
        Bulk and shear moduli (hencky, stvk), per unit mass.
    c1, c2, c3 : float
        Invariant coefficients (mooney-rivlin; neo-hookean forces ``c2 = 0``).
    penalty : float or None
        When set, the volumetric stress is ``penalty * zeta_vol`` (quadratic
        penalty ``1/2 k zeta_vol^2``) in place of ``kappa * zeta_vol``
        (hencky only).
    """

    kind: str
    kappa: float = 0.0
    theta: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    penalty: float | None = None

    def __post_init__(self):
        if self.kind not in HYPERELASTIC_KINDS:
            raise ConfigError("kind", f"unknown hyperelastic kind {self.kind!r}")
        if self.kind in ("hencky-finite", "stvk-infinitesimal"):
            vol = self.penalty if self.penalty is not None else self.kappa
            if not (vol > 0 and self.theta > 0):
                raise ConfigError("kappa/theta", "bulk (or penalty) and shear moduli must be positive")
        if self.penalty is not None and self.kind != "hencky-finite":
            raise ConfigError("penalty", "penalty closure is available for hencky-finite only")
        if self.kind == "neo-hookean" and self.c2 != 0.0:
            raise ConfigError("c2", "neo-hookean requires c2 = 0")


@dataclass(frozen=True)
class EquationOfState:
    """Specific internal energy ``U(rho)``.

    ``law="log"``: ``U = c ln rho`` (``p = c rho``);
    ``law="polytropic"``: ``U = A rho^(gamma-1) / (gamma-1)`` (``p = A rho^gamma``);
    ``law="tabulated"``: cubic spline through ``table = (rho, U)`` samples.
    """

    law: str = "log"
    c: float = 1.0
    A: float = 1.0
    gamma: float = 1.4
    table: tuple | None = None

    def __post_init__(self):
        if self.law not in ("log", "polytropic", "tabulated"):
            raise ConfigError("law", f"unknown equation of state {self.law!r}")
        if self.law == "tabulated":
            if self.table is None:
                raise ConfigError("table", "tabulated law needs (rho, U) samples")
            r = np.asarray(self.table[0], dtype=float)
            if r.size < 4 or np.any(np.diff(r) <= 0):
                raise ConfigError("table", "density samples must be increasing (at least 4)")
        if self.law == "polytropic" and self.gamma == 1.0:
            raise ConfigError("gamma", "gamma = 1 is the log law")

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return cls("tabulated", table=(tuple(data[:, 0]), tuple(data[:, 1])))


@dataclass(frozen=True)
class FluidModel:
    """Newtonian fluid: bulk and shear viscosities (per unit mass) and an EOS."""

    kappa: float = 0.0
    theta: float = 0.0
    eos: EquationOfState = EquationOfState()

    def __post_init__(self):
        if self.kappa < 0 or self.theta < 0:
            raise ConfigError("kappa/theta", "viscosities must be non-negative")


# ---------------------------------------------------------------------------
# hyperelasticity
# ---------------------------------------------------------------------------


def _metric_array(G, shape_like):
    G = np.asarray(getattr(G, "g", G), dtype=float)
    return np.broadcast_to(G, shape_like.shape)


def strain(model: HyperelasticModel, ghat, G):
    """Strain ``zeta`` of the model: ``1/2 ln(G^-1 ghat)`` or ``1/2 (G^-1 ghat - I)``."""
    ghat = np.asarray(ghat, dtype=float)
    G = _metric_array(G, ghat)
    if model.kind == "hencky-finite":
        return fiber.rel_log_array(G, ghat)
    C = np.linalg.solve(G, ghat)
    return 0.5 * (C - np.eye(ghat.shape[-1]))


def _tr(a):
    return np.trace(a, axis1=-2, axis2=-1)


def strain_energy_density(model: HyperelasticModel, ghat, G):
    """Specific strain energy ``psi`` at every node."""
    z = strain(model, ghat, G)
    if model.kind in ("hencky-finite", "stvk-infinitesimal"):
        zv, zd = fiber.vol_dev(z)
        vol = model.penalty if model.penalty is not None else model.kappa
        return 0.5 * vol * zv ** 2 + model.theta * _tr(zd @ zd)
    I1, I2, I3 = fiber.invariants(z)
    return model.c1 * I1 + model.c2 * I2 + model.c3 * I3


def doyle_ericksen_stress(model: HyperelasticModel, ghat, G, step=DE_STEP):
    """``tau = 2 (d psi / d ghat) ghat`` by central differences in ``ghat``.

    Each independent component of the symmetric ``ghat`` is perturbed by
    ``step * max|ghat|``; the truncation error is O(step^2).
    """
    ghat = np.asarray(ghat, dtype=float)
    n = ghat.shape[-1]
    s = step * float(np.max(np.abs(ghat)))
    P = np.zeros_like(ghat)
    for I in range(n):
        for J in range(I, n):
            E = np.zeros((n, n))
            E[I, J] = E[J, I] = 1.0
            dpsi = (strain_energy_density(model, ghat + s * E, G)
                    - strain_energy_density(model, ghat - s * E, G)) / (2 * s)
            if I == J:
                P[..., I, I] = dpsi
            else:
                P[..., I, J] = P[..., J, I] = 0.5 * dpsi
    return 2.0 * P @ ghat


def evaluate_hyperelastic(model: HyperelasticModel, ghat, G, mass=None):
    """Stress and strain energy of a hyperelastic model.

    Parameters
    ----------
    model : HyperelasticModel
    ghat : ndarray
        Convective metric ``[*nodes, n, n]``.
    G : ndarray or MetricField
        Reference metric.
    mass : ndarray, optional
        Mass density; when given, the total energy is ``sum psi * mass``
        integrated by the caller's weights and returned as ``psi * mass``.

    Returns
    -------
    tau : ndarray
        Intensive stress ``[*nodes, n, n]``.
    psi : ndarray
        Specific strain energy per node (times ``mass`` if provided).
    parts : dict
        ``zeta``, ``zeta_vol``, ``zeta_dev``, ``tau_vol``, ``tau_dev``.
    """
    ghat = np.asarray(ghat, dtype=float)
    fiber.spd_check(ghat, "convective metric")
    n = ghat.shape[-1]
    z = strain(model, ghat, G)
    zv, zd = fiber.vol_dev(z)
    I = np.broadcast_to(np.eye(n), ghat.shape)
    if model.kind == "hencky-finite":
        vol = model.penalty if model.penalty is not None else model.kappa
        tau_vol = vol * zv
        tau_dev = 2.0 * model.theta * zd
        tau = tau_vol[..., None, None] * I + tau_dev
    elif model.kind == "stvk-infinitesimal":
        Ez = model.kappa * zv[..., None, None] * I + 2.0 * model.theta * zd
        C = np.linalg.solve(_metric_array(G, ghat), ghat)
        tau = Ez @ C
        tau_vol, tau_dev = fiber.dual_vol_dev(tau)
    else:
        tau = doyle_ericksen_stress(model, ghat, G)
        tau_vol, tau_dev = fiber.dual_vol_dev(tau)
    psi = strain_energy_density(model, ghat, G)
    if mass is not None:
        psi = psi * mass
    return tau, psi, {"zeta": z, "zeta_vol": zv, "zeta_dev": zd, "tau_vol": tau_vol, "tau_dev": tau_dev}


@dataclass
class StrainState:
    """Logarithmic strain bookkeeping.

    ``zeta_vol`` is time-integrated from the volumetric strain rate;
    ``zeta_dev`` is always the deviatoric remainder of the strain computed
    from the current metric.
    """

    zeta_vol: np.ndarray
    zeta_dev: np.ndarray
    zeta: np.ndarray

    def drift(self):
        """Difference between the integrated and the recomputed volumetric strain."""
        return float(np.max(np.abs(self.zeta_vol - _tr(self.zeta))))


def strain_update(model: HyperelasticModel, prev: StrainState | None, ghat_new, G, eps_vol, dt):
    """Advance the strain state over one step.

    For the hencky model ``zeta_vol += dt * eps_vol`` (``eps_vol`` evaluated
    at the step midpoint by the caller); ``zeta`` and its deviatoric part are
    recomputed from ``ghat_new``. For stvk the strain is algebraic in
    ``ghat``.
    """
    z = strain(model, ghat_new, G)
    zv_new, zd = fiber.vol_dev(z)
    if model.kind == "hencky-finite" and prev is not None:
        zv = prev.zeta_vol + dt * np.asarray(eps_vol, dtype=float)
    else:
        zv = zv_new
    return StrainState(np.asarray(zv, dtype=float), zd, z)


# ---------------------------------------------------------------------------
# fluids
# ---------------------------------------------------------------------------


def equation_of_state(rho, eos: EquationOfState):
    """Return ``(U, dU/drho, p)`` with ``p = rho^2 dU/drho``."""
    rho = np.asarray(rho, dtype=float)
    if not np.all(rho > 0):
        raise RejectedInput("density must be positive")
    if eos.law == "log":
        U = eos.c * np.log(rho)
        dU = eos.c / rho
    elif eos.law == "polytropic":
        g1 = eos.gamma - 1.0
        U = eos.A * rho ** g1 / g1
        dU = eos.A * rho ** (g1 - 1.0)
    else:
        r = np.asarray(eos.table[0], dtype=float)
        if np.any(rho < r[0]) or np.any(rho > r[-1]):
            raise RejectedInput(f"density outside the tabulated range [{r[0]}, {r[-1]}]")
        spl = _spline(eos.table)
        U = spl(rho)
        dU = spl(rho, 1)
    return U, dU, rho ** 2 * dU


_SPLINES = {}


def _spline(table):
    key = (tuple(table[0]), tuple(table[1]))
    if key not in _SPLINES:
        _SPLINES[key] = CubicSpline(np.asarray(table[0], dtype=float), np.asarray(table[1], dtype=float))
    return _SPLINES[key]


def zeta_vol_from_density(rho_hat):
    """``zeta_vol = -ln rho_hat`` (density relative to the reference)."""
    return -np.log(np.asarray(rho_hat, dtype=float))


def density_from_zeta_vol(zeta_vol):
    return np.exp(-np.asarray(zeta_vol, dtype=float))


def evaluate_newtonian(model: FluidModel, eps, rho):
    """Newtonian stress, dissipation and internal-energy power.

    Parameters
    ----------
    eps : ndarray
        Rate of strain ``[*nodes, n, n]``.
    rho : ndarray
        Mass density.

    Returns
    -------
    tau : ndarray
        ``(kappa eps_vol - p / rho) I + 2 theta eps_dev``.
    dissipation : ndarray
        ``kappa eps_vol^2 + 2 theta eps_dev : eps_dev`` (per unit mass).
    internal_power : ndarray
        ``-(p / rho) eps_vol`` (per unit mass), the reversible pressure work.
    p : ndarray
        Thermodynamic pressure.
    """
    rho = np.asarray(rho, dtype=float)
    if not np.all(rho > 0):
        raise RejectedInput("density must be positive")
    eps = np.asarray(eps, dtype=float)
    n = eps.shape[-1]
    ev, ed = fiber.vol_dev(eps)
    _, _, p = equation_of_state(rho, model.eos)
    I = np.broadcast_to(np.eye(n), eps.shape)
    tau = (model.kappa * ev - p / rho)[..., None, None] * I + 2.0 * model.theta * ed
    diss = model.kappa * ev ** 2 + 2.0 * model.theta * _tr(ed @ ed)
    return tau, diss, -(p / rho) * ev, p


# ---------------------------------------------------------------------------
# incompressibility
# ---------------------------------------------------------------------------


def centered_divergence(grid, v):
    """Centered-difference divergence of a velocity ``[i, *nodes]``."""
    return sum(grid.d(v[a], a) for a in range(grid.n))


def project_divergence_free(grid, v):
    """Project ``v`` onto fields with zero centered-difference divergence.

    Works on fully periodic grids through the Fourier symbol
    ``s_a = sin(k_a h_a) / h_a`` of the centered difference. Modes with
    ``s = 0`` carry no divergence and are left untouched.

    Returns
    -------
    v_new : ndarray
    phi : ndarray
        Potential with ``v_new = v - grad_h phi`` (zero mean).
    """
    if not all(grid.periodic):
        raise PHCMError("the projection solve needs a fully periodic grid (singular otherwise)")
    n = grid.n
    ks = np.meshgrid(*[2 * np.pi * np.fft.fftfreq(grid.shape[a], d=grid.h[a]) for a in range(n)], indexing="ij")
    s = np.stack([np.sin(ks[a] * grid.h[a]) / grid.h[a] for a in range(n)])
    vh = np.stack([np.fft.fftn(v[a]) for a in range(n)])
    s2 = np.sum(s * s, axis=0)
    div = np.sum(1j * s * vh, axis=0)
    mask = s2 > 1e-12 * np.max(s2)
    phih = np.zeros_like(div)
    phih[mask] = -div[mask] / s2[mask]  # lap_h phi = div v with lap symbol -|s|^2
    vnew = np.stack([np.real(np.fft.ifftn(vh[a] - 1j * s[a] * phih)) for a in range(n)])
    return vnew, np.real(np.fft.ifftn(phih))


def incompressibility_closure(mode, zeta_vol=None, *, penalty=None, grid=None, v=None, dt=None, rho=None):
    """Volumetric stress enforcing (near-)incompressibility.

    ``mode="penalty"``: ``tau_vol = penalty * zeta_vol`` (derivative of the
    quadratic penalty ``1/2 k zeta_vol^2``).

    ``mode="exact"``: project ``v`` on a periodic grid; the multiplier is the
    pressure ``p = rho phi / dt`` of the projection, ``tau_vol = -p / rho``.

    Returns
    -------
    dict
        ``tau_vol``; for the exact mode also ``v``, ``p`` and ``div_residual``.
    """
    if mode == "penalty":
        if penalty is None or zeta_vol is None:
            raise RejectedInput("penalty mode needs zeta_vol and the penalty modulus")
        return {"tau_vol": penalty * np.asarray(zeta_vol, dtype=float)}
    if mode == "exact":
        if grid is None or v is None or dt is None:
            raise RejectedInput("exact mode needs grid, v and dt")
        vnew, phi = project_divergence_free(grid, np.asarray(v, dtype=float))
        r = 1.0 if rho is None else np.asarray(rho, dtype=float)
        p = r * phi / dt
        return {"tau_vol": -p / r, "v": vnew, "p": p,
                "div_residual": float(np.max(np.abs(centered_divergence(grid, vnew))))}
    raise RejectedInput(f"unknown incompressibility mode {mode!r}")
