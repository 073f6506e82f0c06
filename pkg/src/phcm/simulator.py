"""Scenario orchestration: systems, time stepping and the energy ledger.

A *system* wires the kinetic block of one representation with the
stress-power Stokes-Dirac block, the stress-port splits and a constitutive
closure into a :class:`phcm.dirac.Network`. Every right-hand-side
evaluation goes through that network, so power audits accumulate per step.

Ledger residual definitions (one row per step):

``res_dirac_alg`` / ``res_dirac_mesh``
    Sum of absolute block balance residuals of the network evaluated at the
    recorded state, split by tolerance class.
``res_energy``
    ``E_total(t) - E_total(0) - int_0^t (P_boundary - D_dissipation) dt``
    with the time integral taken by the trapezoid rule over recorded steps.
"""
from __future__ import annotations

import copy
import csv
import json
import os
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from phcm import constitutive as cm
from phcm import dirac, mesh
from phcm.errors import ConfigError, ConvergenceError, FoldOverError, NotSPDError, RejectedInput
from phcm.kinetic import kinetic_energy
from phcm.mesh import TRACTION, VELOCITY, BundleForm, Grid, MassForm, MetricField, ScalarForm
from phcm.oracle import block_rates_as_arrays, compare_rates, oracle_rhs
from phcm.states import ConvectiveState, MaterialState, Params, SpatialState, to_convective, write_state

__all__ = [
    "LEDGER_COLUMNS",
    "INTEGRATORS",
    "Scenario",
    "System",
    "RunResult",
    "load_scenario",
    "bundled_scenarios",
    "build_system",
    "step",
    "run_scenario",
    "write_ledger",
    "read_ledger",
    "plot_ledger",
    "audit_scenario",
    "oracle_report",
]

LEDGER_COLUMNS = ("t", "H_kin", "Psi_or_U", "E_total", "P_boundary", "D_dissipation", "mass_total",
                  "res_dirac_alg", "res_dirac_mesh", "res_energy")
INTEGRATORS = ("rk4", "implicit-midpoint")
REPRESENTATIONS = ("material", "spatial", "convective")
SOLID_KINDS = cm.HYPERELASTIC_KINDS
FLUID_KINDS = ("newtonian",)

#: Implicit midpoint fixed-point settings.
IMPLICIT_TOL = 1e-10
IMPLICIT_MAXITER = 50

#: Courant number used by the start-up sanity check.
CFL_NUMBER = 1.0


# ---------------------------------------------------------------------------
# scenario configuration
# ---------------------------------------------------------------------------


def _face_key(text):
    """``"0-"`` / ``"1+"`` -> ``(axis, side)``."""
    try:
        axis, sign = int(text[:-1]), text[-1]
    except (ValueError, IndexError):
        raise ConfigError("boundary_inputs", f"face key {text!r} must look like '0-' or '1+'") from None
    if sign not in "+-":
        raise ConfigError("boundary_inputs", f"face key {text!r} must end in '+' or '-'")
    return axis, 1 if sign == "+" else 0


@dataclass
class Scenario:
    """Validated scenario configuration (see ``scenario.schema.json``)."""

    name: str
    representation: str
    grid: dict
    initial: dict
    model: dict
    dt: float
    steps: int
    params: dict = field(default_factory=dict)
    boundary_inputs: dict = field(default_factory=dict)
    integrator: str = "rk4"
    output_cadence: int = 0
    sbp: bool = False
    scheme: str = "identity"
    description: str = ""

    REQUIRED = ("name", "representation", "grid", "initial", "model", "dt", "steps")

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        for k in cls.REQUIRED:
            if k not in d:
                raise ConfigError(k, "required field is missing")
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(extra[0], "unknown field")
        err = jsonschema.exceptions.best_match(_schema_validator().iter_errors(d))
        if err is not None:
            path = ".".join(str(p) for p in err.absolute_path) or "<root>"
            raise ConfigError(path, err.message)
        sc = cls(**copy.deepcopy(d))
        sc.validate()
        return sc

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self):
        if not isinstance(self.name, str) or not self.name:
            raise ConfigError("name", "must be a non-empty string")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError("representation", f"must be one of {REPRESENTATIONS}")
        if not isinstance(self.dt, (int, float)) or isinstance(self.dt, bool) or not self.dt > 0:
            raise ConfigError("dt", "must be a positive number")
        if not isinstance(self.steps, int) or isinstance(self.steps, bool) or self.steps < 1:
            raise ConfigError("steps", "must be a positive integer")
        if not isinstance(self.output_cadence, int) or self.output_cadence < 0:
            raise ConfigError("output_cadence", "must be a non-negative integer")
        if self.integrator not in INTEGRATORS:
            raise ConfigError("integrator", f"must be one of {INTEGRATORS}")
        if self.scheme not in ("identity", "product"):
            raise ConfigError("scheme", "must be 'identity' or 'product'")
        g = self.grid
        if not isinstance(g, dict) or "cells" not in g:
            raise ConfigError("grid.cells", "required field is missing")
        try:
            self.make_grid()
        except RejectedInput as exc:
            raise ConfigError("grid", str(exc)) from None
        kind = self.model.get("kind") if isinstance(self.model, dict) else None
        if kind is None:
            raise ConfigError("model.kind", "required field is missing")
        if self.representation == "spatial" and kind not in FLUID_KINDS:
            raise ConfigError("model.kind", "spatial scenarios need a fluid model ('newtonian')")
        if self.representation != "spatial" and kind not in SOLID_KINDS:
            raise ConfigError("model.kind", f"solid scenarios need one of {SOLID_KINDS}")
        try:
            self.make_model()
        except ConfigError as exc:
            raise ConfigError(f"model.{exc.field}", str(exc).split(": ", 1)[-1]) from None
        except TypeError as exc:
            raise ConfigError("model", str(exc)) from None
        if self.representation != "material" and not all(self.make_grid().periodic):
            raise ConfigError("grid.periodic", "spatial and convective scenarios run on periodic grids")
        if "type" not in self.initial:
            raise ConfigError("initial.type", "required field is missing")
        for label in self.boundary_inputs:
            if label not in (VELOCITY, TRACTION):
                raise ConfigError("boundary_inputs", f"unknown input kind {label!r}")
            for key in self.boundary_inputs[label]:
                _face_key(key)

    def make_grid(self) -> Grid:
        g = self.grid
        boundary = g.get("boundary", TRACTION)
        if isinstance(boundary, dict):
            boundary = {_face_key(k): v for k, v in boundary.items()}
        return Grid.make(g["cells"], g.get("lengths", 1.0), g.get("periodic", False), g.get("origin", 0.0), boundary)

    def make_model(self):
        m = dict(self.model)
        kind = m.pop("kind")
        if kind == "newtonian":
            inc = m.pop("incompressibility", None)
            if inc not in (None, "exact"):
                raise ConfigError("incompressibility", "only 'exact' is available for fluids")
            eos = m.pop("eos", {"law": "log", "c": 1.0})
            if isinstance(eos, dict) and "csv" in eos:
                eos = cm.EquationOfState.from_csv(eos["csv"])
            else:
                eos = cm.EquationOfState(**eos)
            return cm.FluidModel(eos=eos, **m)
        return cm.HyperelasticModel(kind, **m)


_VALIDATOR = None


def _schema_validator():
    """Validator for the shipped ``scenario.schema.json`` (built once)."""
    global _VALIDATOR
    if _VALIDATOR is None:
        schema = json.loads((resources.files("phcm") / "scenario.schema.json").read_text())
        _VALIDATOR = jsonschema.Draft202012Validator(schema)
    return _VALIDATOR


def _scenario_dir():
    return resources.files("phcm") / "scenarios"


def bundled_scenarios() -> dict:
    """``{name: path}`` of the scenarios shipped with the package."""
    out = {}
    for entry in sorted(_scenario_dir().iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json") and entry.name != "scenario.schema.json":
            out[entry.name[:-5]] = str(entry)
    return out


def load_scenario(config) -> Scenario:
    """Scenario from a dict, a JSON path, or the name of a bundled scenario."""
    if isinstance(config, Scenario):
        return config
    if isinstance(config, dict):
        return Scenario.from_dict(config)
    path = str(config)
    if not os.path.exists(path):
        bundled = bundled_scenarios()
        if path in bundled:
            path = bundled[path]
        else:
            raise ConfigError("<path>", f"no such scenario file or bundled scenario: {config}")
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return Scenario.from_dict(data)


# ---------------------------------------------------------------------------
# initial states
# ---------------------------------------------------------------------------


def _profile(grid, init, default_profile="sin"):
    """Scalar wave ``cos`` or ``sin`` of ``2 pi k x / L`` (``pi k x / L`` for cosine on a bounded axis)."""
    axis = int(init.get("axis", 0))
    k = float(init.get("mode", 1))
    prof = init.get("profile", default_profile)
    X = grid.mesh()[axis] - grid.origin[axis]
    L = grid.lengths[axis]
    if prof == "cos":
        arg = (2 * np.pi if grid.periodic[axis] else np.pi) * k * X / L
        return np.cos(arg)
    if prof == "sin":
        return np.sin(2 * np.pi * k * X / L)
    raise ConfigError("initial.profile", "must be 'sin' or 'cos'")


def _initial_material(sc: Scenario, p: Params) -> MaterialState:
    grid = p.grid
    n = grid.n
    init = sc.initial
    u = np.zeros((n,) + grid.shape)
    v = np.zeros((n,) + grid.shape)
    typ = init["type"]
    if typ == "displacement-wave":
        comp = int(init.get("component", 0))
        u[comp] = float(init.get("amplitude", 0.0)) * _profile(grid, init)
        v[comp] = float(init.get("velocity_amplitude", 0.0)) * _profile(grid, init)
    elif typ != "rest":
        raise ConfigError("initial.type", f"unknown solid initial condition {typ!r}")
    M = BundleForm.top(grid, p.rho * np.einsum("ij,j...->i...", p.g, v), "covector")
    return MaterialState(u, M)


def _initial_spatial(sc: Scenario, grid: Grid, g):
    init = sc.initial
    n = grid.n
    rho0 = float(init.get("density", 1.0))
    rho = np.full(grid.shape, rho0)
    v = np.zeros((n,) + grid.shape)
    typ = init["type"]
    A = float(init.get("amplitude", 0.0))
    if typ == "taylor-green":
        if n != 2:
            raise ConfigError("initial.type", "taylor-green needs a 2D grid")
        x, y = grid.mesh()
        kx = 2 * np.pi * float(init.get("mode", 1)) / grid.lengths[0]
        ky = 2 * np.pi * float(init.get("mode", 1)) / grid.lengths[1]
        v[0] = A * np.sin(kx * x) * np.cos(ky * y)
        v[1] = -A * (kx / ky) * np.cos(kx * x) * np.sin(ky * y)
        rho = rho + float(init.get("density_amplitude", 0.0)) * np.cos(kx * x) * np.cos(ky * y)
    elif typ == "uniform-flow":
        v[:] = np.asarray(init.get("velocity", [0.0] * n), dtype=float).reshape((n,) + (1,) * n)
    elif typ == "density-pulse":
        X = grid.mesh()
        c = [grid.origin[a] + 0.5 * grid.lengths[a] for a in range(n)]
        r2 = sum((X[a] - c[a]) ** 2 for a in range(n))
        rho = rho + A * np.exp(-r2 / (2 * float(init.get("width", 0.1)) ** 2))
        v[:] = np.asarray(init.get("velocity", [0.0] * n), dtype=float).reshape((n,) + (1,) * n)
    elif typ != "rest":
        raise ConfigError("initial.type", f"unknown fluid initial condition {typ!r}")
    mu = MassForm.from_density(grid, rho)
    M = BundleForm.top(grid, rho * np.einsum("ij,j...->i...", g, v), "covector")
    return SpatialState(mu, M)


# ---------------------------------------------------------------------------
# systems
# ---------------------------------------------------------------------------


class System:
    """Network, state packing and energy bookkeeping of one scenario."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.representation = scenario.representation
        self.grid = scenario.make_grid()
        self.model = scenario.make_model()
        grid = self.grid
        n = grid.n
        prm = scenario.params
        g = np.asarray(prm.get("g", np.eye(n)), dtype=float)
        rho0 = float(prm.get("density", scenario.initial.get("density", 1.0)))
        self.params = Params(MassForm.from_density(grid, np.full(grid.shape, rho0)), g)
        self.incompressible = (self.representation == "spatial"
                               and scenario.model.get("incompressibility") == "exact")
        if self.incompressible:
            if not all(grid.periodic):
                raise ConfigError("grid.periodic", "the exact incompressibility closure needs a periodic grid")
            if scenario.initial.get("density_amplitude", 0.0):
                raise ConfigError("initial.density_amplitude", "incompressible flow needs uniform density")
            self.model = cm.FluidModel(self.model.kappa, self.model.theta, cm.EquationOfState("log", c=0.0))
        bi = scenario.boundary_inputs
        self.velocity_in = {_face_key(k): np.asarray(v, dtype=float) for k, v in bi.get(VELOCITY, {}).items()}
        self.traction_in = {_face_key(k): np.asarray(v, dtype=float) for k, v in bi.get(TRACTION, {}).items()}
        # faces without an input schedule are sealed: zero velocity or zero traction
        for face in self.grid.faces_with(VELOCITY):
            self.velocity_in.setdefault(face, np.zeros(n))
        for face in self.grid.faces_with(TRACTION):
            self.traction_in.setdefault(face, np.zeros(1))
        try:
            self.network = self._build_network()
        except RejectedInput as exc:
            raise ConfigError("boundary_inputs", str(exc)) from None
        self._template = None

    # -- network ---------------------------------------------------------
    def _face_values(self):
        grid = self.grid
        n = grid.n
        vin, tin = {}, {}
        for face, val in self.velocity_in.items():
            shape = (n,) + tuple(s for a, s in enumerate(grid.shape) if a != face[0])
            vin[face] = np.broadcast_to(val.reshape((n,) + (1,) * (n - 1)), shape).copy()
        ncomp = max(1, n)
        for face, val in self.traction_in.items():
            shape = (n, ncomp) + tuple(s for a, s in enumerate(grid.shape) if a != face[0])
            tin[face] = np.broadcast_to(val.reshape(val.shape + (1,) * (len(shape) - val.ndim)), shape).copy()
        return vin, tin

    def _build_network(self):
        sc, grid, p = self.scenario, self.grid, self.params
        rep = self.representation
        vin, tin = self._face_values()
        if rep == "convective":
            metric_fn = lambda s: s.ghat  # noqa: E731
        else:
            metric_fn = None
        blocks = [
            dirac.kinetic_block(p, rep, sc.scheme),
            dirac.stokes_dirac_block(grid, metric_fn, vin, tin, sc.sbp, "weak" if sc.sbp else "strong"),
        ]
        wiring = [("kinetic.v", "stokes.v"), ("stokes.e_d", "kinetic.force"),
                  ("constitutive.T", "stokes.T")]
        if rep == "spatial":
            blocks += [dirac.sym_asym_block(grid), dirac.vol_dev_block(grid),
                       dirac.newtonian_block(grid, self.model)]
            wiring += [("stokes.grad", "sym_asym.grad"), ("constitutive.T", "sym_asym.T"),
                       ("sym_asym.eps", "vol_dev.eps"), ("sym_asym.Y_sym", "vol_dev.Y_sym"),
                       ("sym_asym.eps", "constitutive.eps")]
        else:
            blocks.append(dirac.hyperelastic_block(p, self.model, rep, sc.sbp))
            if rep == "convective":
                blocks += [dirac.sym_asym_block(grid, metric_fn), dirac.vol_dev_block(grid)]
                wiring += [("stokes.grad", "sym_asym.grad"), ("constitutive.T", "sym_asym.T"),
                           ("sym_asym.eps", "vol_dev.eps"), ("sym_asym.Y_sym", "vol_dev.Y_sym")]
        return dirac.compose(blocks, wiring)

    # -- states ----------------------------------------------------------
    def initial_state(self):
        sc, p = self.scenario, self.params
        if self.representation == "spatial":
            s = _initial_spatial(sc, self.grid, p.g)
            if self.incompressible:
                s = self.project(s)
            return s
        m = _initial_material(sc, p)
        if self.representation == "material":
            Md = m.M.data.copy()
            for face, val in self._face_values()[0].items():
                sl = (slice(None), 0) + self.grid.face_slice(face)
                Md[sl] = np.einsum("ij,j...->i...", p.g, val) * p.rho[self.grid.face_slice(face)]
            return MaterialState(m.u, BundleForm(self.grid, self.grid.n, "covector", Md))
        return to_convective(m, p)

    def pack(self, state):
        if isinstance(state, MaterialState):
            return np.concatenate([state.u.ravel(), state.M.data.ravel()])
        if isinstance(state, SpatialState):
            return np.concatenate([state.mu.data.ravel(), state.M.data.ravel()])
        return np.concatenate([np.asarray(state.ghat.g).ravel(), state.M.data.ravel()])

    def _sizes(self):
        grid = self.grid
        n = grid.n
        N = grid.size
        if self.representation == "material":
            first = (n,) + grid.shape
        elif self.representation == "spatial":
            first = (1,) + grid.shape
        else:
            first = grid.shape + (n, n)
        return first, (n, 1) + grid.shape

    def unpack(self, z, check=True):
        grid = self.grid
        first, mshape = self._sizes()
        k = int(np.prod(first))
        a, b = z[:k].reshape(first), z[k:].reshape(mshape)
        M = BundleForm(grid, grid.n, "covector", b.copy())
        if self.representation == "material":
            return MaterialState(a.copy(), M)
        if self.representation == "spatial":
            if check and not np.all(a[0] > 0):
                idx = tuple(int(i) for i in np.argwhere(a[0] <= 0)[0])
                raise RejectedInput(f"mass density lost positivity at node {idx}")
            return SpatialState(MassForm(grid, grid.n, a.copy()), M)
        g = 0.5 * (a + np.swapaxes(a, -1, -2))
        return ConvectiveState(MetricField(grid, g, check=check), M)

    def rates_vector(self, rates, state):
        if self.representation == "material":
            # velocity-input nodes follow the (constant) input: fixed momentum
            phi = np.array(rates["phi"], dtype=float)
            Mr = rates["M"].data.copy()
            for face, val in self._face_values()[0].items():
                phi[(slice(None),) + self.grid.face_slice(face)] = val
                Mr[(slice(None), slice(None)) + self.grid.face_slice(face)] = 0.0
            return np.concatenate([phi.ravel(), Mr.ravel()])
        if self.representation == "spatial":
            return np.concatenate([rates["mu"].data.ravel(), rates["M"].data.ravel()])
        return np.concatenate([np.asarray(rates["ghat"]).ravel(), rates["M"].data.ravel()])

    # -- incompressibility -------------------------------------------------
    def project(self, s: SpatialState) -> SpatialState:
        rho = s.mu.data[0]
        ginv = np.linalg.inv(self.params.g)
        v = np.einsum("ij,j...->i...", ginv, s.M.values) / rho
        vp, _ = cm.project_divergence_free(self.grid, v)
        M = BundleForm.top(self.grid, rho * np.einsum("ij,j...->i...", self.params.g, vp), "covector")
        return SpatialState(s.mu, M)

    def _project_rates(self, rates, state):
        rho = state.mu.data[0]
        ginv = np.linalg.inv(self.params.g)
        a = np.einsum("ij,j...->i...", ginv, rates["M"].values) / rho
        ap, _ = cm.project_divergence_free(self.grid, a)
        rates = dict(rates)
        rates["M"] = BundleForm.top(self.grid, rho * np.einsum("ij,j...->i...", self.params.g, ap), "covector")
        rates["mu"] = ScalarForm.top(self.grid, np.zeros(self.grid.shape))
        return rates

    # -- evaluation --------------------------------------------------------
    def evaluate(self, state, t=0.0):
        """Network evaluation at ``state``; returns ``(values, audit)``."""
        return self.network.evaluate({}, state, t)

    def rhs(self, t, z, audits: list | None = None):
        """Packed rates at ``z``; the evaluation's audit is appended to ``audits``."""
        state = self.unpack(z)
        values, a = self.evaluate(state, t)
        if audits is not None:
            audits.append(a)
        rates = values["kinetic.rates"]
        if self.incompressible:
            rates = self._project_rates(rates, state)
        return self.rates_vector(rates, state)

    def ledger_terms(self, state, t=0.0):
        """Energies, boundary power, dissipation, mass and audit residuals at ``state``."""
        values, audit = self.evaluate(state, t)
        grid = self.grid
        H = kinetic_energy(state, self.params)
        if self.representation == "spatial":
            stored = mesh.integrate(ScalarForm.top(grid, values["constitutive.internal"]))
            D = mesh.integrate(ScalarForm.top(grid, values["constitutive.dissipation"]))
            mass = mesh.integrate(state.mu)
        else:
            stored = mesh.integrate(ScalarForm.top(grid, values["constitutive.psi"]))
            D = 0.0
            mass = mesh.integrate(self.params.mass)
        P = 0.0
        for e in audit.entries:
            if e.block == "stokes":
                P = e.terms["boundary"]
        if self.velocity_in:
            # power of the reaction force at velocity-input nodes
            mask = grid.boundary_mask(VELOCITY)
            vi = np.asarray(values["stokes.v_imposed"])
            ed = np.asarray(values["stokes.e_d"].values)
            P -= float(np.sum(grid.weights[mask] * np.einsum("i...,i...->...", vi, ed)[mask]))
        cls = audit.by_class()
        return {"H_kin": H, "Psi_or_U": stored, "E_total": H + stored, "P_boundary": P,
                "D_dissipation": D, "mass_total": mass,
                "res_dirac_alg": cls[dirac.ALGEBRAIC], "res_dirac_mesh": cls[dirac.MESH]}, values, audit

    def max_speed(self, state):
        values, _ = self.evaluate(state)
        v = np.asarray(values["kinetic.v"])
        return float(np.max(np.sqrt(np.sum(v * v, axis=0))))

    def diagnostics(self, state):
        """Representation-specific extras (``det_C_dev``, ``div_v``, ``momentum``)."""
        out = {}
        grid = self.grid
        if self.representation == "material":
            out["momentum"] = [mesh.integrate(ScalarForm.top(grid, state.M.values[i])) for i in range(grid.n)]
        if self.representation == "convective":
            C = np.linalg.solve(self.params.G.g, np.asarray(state.ghat.g))
            out["det_C_dev"] = float(np.max(np.abs(np.linalg.det(C) - 1.0)))
        if self.representation == "spatial":
            v = np.linalg.inv(self.params.g) @ np.moveaxis(np.asarray(state.M.values), 0, -1)[..., None]
            v = np.moveaxis(v[..., 0], -1, 0) / state.mu.data[0]
            out["div_v"] = float(np.max(np.abs(cm.centered_divergence(grid, v))))
            out["momentum"] = [mesh.integrate(ScalarForm.top(grid, state.M.values[i])) for i in range(grid.n)]
        return out


def build_system(config) -> System:
    return System(load_scenario(config))


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------


def _rk4(system, z, t, dt, audits):
    k1 = system.rhs(t, z, audits)
    k2 = system.rhs(t + 0.5 * dt, z + 0.5 * dt * k1, audits)
    k3 = system.rhs(t + 0.5 * dt, z + 0.5 * dt * k2, audits)
    k4 = system.rhs(t + dt, z + dt * k3, audits)
    return z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _implicit_midpoint(system, z, t, dt, audits, tol=IMPLICIT_TOL, maxiter=IMPLICIT_MAXITER):
    """Fixed-point iteration ``z1 = z + dt f(t + dt/2, (z + z1)/2)``.

    Converged when the update is below ``tol`` times the state's max norm.
    """
    scale = max(float(np.max(np.abs(z))), np.finfo(float).tiny)
    z1 = z + dt * system.rhs(t, z, audits)
    trace = []
    for _ in range(maxiter):
        znew = z + dt * system.rhs(t + 0.5 * dt, 0.5 * (z + z1), audits)
        err = float(np.max(np.abs(znew - z1)))
        trace.append(err)
        z1 = znew
        if err <= tol * scale:
            return z1
    raise ConvergenceError(f"implicit midpoint did not converge in {maxiter} iterations "
                           f"(last update {trace[-1]:.3e})", trace)


def step(state, system: System, dt, integrator="rk4", t=0.0, audits: list | None = None):
    """Advance ``state`` by one step of ``dt``.

    ``audits`` (a list) collects the :class:`PowerAudit` of every stage
    evaluation.

    Raises
    ------
    ConvergenceError
        Implicit midpoint fixed-point failure (with the update history).
    NotSPDError, FoldOverError
        Loss of positive definiteness of the convective metric, or fold-over.
    """
    z = system.pack(state)
    if integrator == "rk4":
        z1 = _rk4(system, z, t, dt, audits)
    elif integrator == "implicit-midpoint":
        z1 = _implicit_midpoint(system, z, t, dt, audits)
    else:
        raise RejectedInput(f"unknown integrator {integrator!r}")
    new = system.unpack(z1)
    if system.incompressible:
        new = system.project(new)
    return new


# ---------------------------------------------------------------------------
# runs and outputs
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    """Outcome of :func:`run_scenario`."""

    scenario: Scenario
    ledger: list
    initial: dict
    final_state: object
    diagnostics: list
    stage_audit_max: dict
    output_dir: str | None = None
    ledger_path: str | None = None
    snapshot_paths: list = field(default_factory=list)
    plot_paths: list = field(default_factory=list)

    def column(self, name):
        return np.array([row[name] for row in self.ledger])

    def summary(self) -> dict:
        last = self.ledger[-1]
        E0 = self.initial["E_total"]
        return {
            "scenario": self.scenario.name,
            "steps": len(self.ledger),
            "t_final": last["t"],
            "E_total_initial": E0,
            "E_total_final": last["E_total"],
            "relative_energy_change": (last["E_total"] - E0) / abs(E0) if E0 else last["E_total"] - E0,
            "max_res_energy": float(np.max(np.abs(self.column("res_energy")))),
            "mass_drift": float(np.max(np.abs(self.column("mass_total") - self.initial["mass_total"]))),
            "max_res_dirac_alg": float(np.max(self.column("res_dirac_alg"))),
            "max_res_dirac_mesh": float(np.max(self.column("res_dirac_mesh"))),
            "stage_audit_max": self.stage_audit_max,
            "final_diagnostics": self.diagnostics[-1] if self.diagnostics else {},
        }


def _output_dir(output_dir, scenario):
    env = os.environ.get("PHCM_OUTPUT_DIR")
    if env:
        return os.path.join(env, scenario.name)
    return output_dir


def run_scenario(config, output_dir=None, plot=False, snapshots=True, progress=None) -> RunResult:
    """Run a scenario and write its outputs.

    Parameters
    ----------
    config : dict, str or Scenario
        Configuration, JSON path or bundled scenario name.
    output_dir : str, optional
        Directory for ``ledger.csv``, ``snapshots/`` and plots. The
        ``PHCM_OUTPUT_DIR`` environment variable overrides it (a
        subdirectory named after the scenario is used). Nothing is written
        when both are unset.
    plot : bool
        Also write one PNG per ledger column.
    progress : callable, optional
        Called as ``progress(k, row)`` after every step.
    """
    sc = load_scenario(config)
    system = System(sc)
    outdir = _output_dir(output_dir, sc)
    state = system.initial_state()
    dt = sc.dt
    h = min(system.grid.h)
    vmax = system.max_speed(state)
    if vmax > 0 and dt > CFL_NUMBER * h / vmax:
        warnings.warn(f"dt = {dt} exceeds the CFL bound {CFL_NUMBER * h / vmax:.3e}", RuntimeWarning, stacklevel=2)

    init, _, _ = system.ledger_terms(state, 0.0)
    E0 = init["E_total"]
    ledger, diags = [], [system.diagnostics(state)]
    snaps = []
    if outdir is not None:
        os.makedirs(outdir, exist_ok=True)
    cadence = sc.output_cadence
    if outdir is not None and snapshots and cadence:
        snaps += write_state(os.path.join(outdir, "snapshots"), state, 0.0, "step000000_")
    stage_max = {dirac.ALGEBRAIC: 0.0, dirac.MESH: 0.0}
    integral = 0.0
    prev_flux = init["P_boundary"] - init["D_dissipation"]
    t = 0.0
    for k in range(1, sc.steps + 1):
        audits = []
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                state = step(state, system, dt, sc.integrator, t, audits)
        except FoldOverError as exc:
            raise FoldOverError(str(exc), step=k, node=exc.node) from None
        except NotSPDError as exc:
            raise NotSPDError(f"step {k}: {exc}") from None
        for a in audits:
            for key, val in a.by_class().items():
                stage_max[key] = max(stage_max[key], val)
        t = k * dt
        terms, _, _ = system.ledger_terms(state, t)
        flux = terms["P_boundary"] - terms["D_dissipation"]
        integral += 0.5 * dt * (prev_flux + flux)
        prev_flux = flux
        row = {"t": t, **terms, "res_energy": terms["E_total"] - E0 - integral}
        ledger.append(row)
        diags.append(system.diagnostics(state))
        if progress is not None:
            progress(k, row)
        if outdir is not None and snapshots and cadence and k % cadence == 0:
            snaps += write_state(os.path.join(outdir, "snapshots"), state, t, f"step{k:06d}_")
    res = RunResult(sc, ledger, init, state, diags, stage_max, outdir)
    if outdir is not None:
        res.ledger_path = write_ledger(os.path.join(outdir, "ledger.csv"), ledger)
        res.snapshot_paths = snaps
        with open(os.path.join(outdir, "summary.json"), "w") as fh:
            json.dump(res.summary(), fh, indent=2, default=float)
        if plot:
            res.plot_paths = plot_ledger(res.ledger_path, None, outdir)
    return res


def write_ledger(path, rows):
    """Write ledger rows with the fixed column order; returns the path."""
    d = os.path.dirname(os.path.abspath(path))
    if not os.access(d, os.W_OK) and os.path.isdir(d):
        raise OSError(f"cannot write to {d}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_COLUMNS)
        for row in rows:
            w.writerow([repr(float(row[c])) for c in LEDGER_COLUMNS])
    return path


def read_ledger(path) -> dict:
    """Ledger columns as arrays."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(x) for x in row] for row in r]).reshape(-1, len(header))
    return {c: data[:, i] for i, c in enumerate(header)}


def plot_ledger(path, columns=None, outdir=None) -> list:
    """One PNG per requested ledger column (all but ``t`` by default)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = read_ledger(path)
    columns = list(columns) if columns else [c for c in LEDGER_COLUMNS if c != "t"]
    unknown = [c for c in columns if c not in data]
    if unknown:
        raise ConfigError("columns", f"unknown ledger column(s) {unknown}")
    outdir = outdir or os.path.dirname(os.path.abspath(path))
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for c in columns:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(data["t"], data[c])
        ax.set_xlabel("t")
        ax.set_ylabel(c)
        fig.tight_layout()
        p = os.path.join(outdir, f"{c}.png")
        fig.savefig(p, dpi=100)
        plt.close(fig)
        paths.append(p)
    return paths


def audit_scenario(config) -> dict:
    """Full residual report of one network evaluation and one time step."""
    sc = load_scenario(config)
    system = System(sc)
    state = system.initial_state()
    values, audit = system.evaluate(state, 0.0)
    audits = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        step(state, system, sc.dt, sc.integrator, 0.0, audits)
    step_audit = dirac.PowerAudit()
    for a in audits:
        step_audit.extend(a)
    return {"scenario": sc.name, "initial": dirac.audit_power(audit),
            "step": dirac.audit_power(step_audit)}


def oracle_report(config) -> dict:
    """Block pipeline versus tensor-calculus rates at the initial state."""
    sc = load_scenario(config)
    system = System(sc)
    state = system.initial_state()
    values, _ = system.evaluate(state, 0.0)
    blk = block_rates_as_arrays(values["kinetic.rates"])
    orc = oracle_rhs(state, system.params, system.model)
    diff = compare_rates(blk, orc, interior_only=True, grid=system.grid)
    scale = {k: float(np.max(np.abs(orc[k]))) for k in orc}
    return {"scenario": sc.name, "representation": sc.representation, "h": max(system.grid.h),
            "max_abs_difference": diff, "max_abs_oracle": scale}
