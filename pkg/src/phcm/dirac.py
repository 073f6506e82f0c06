"""Power-port networks of Dirac blocks with per-evaluation power audits.

A :class:`DiracBlock` maps named inputs to named outputs. Each output
declares the inputs it depends on, so a network of blocks is ordered port by
port; two blocks may feed each other as long as no output depends on itself.
After every evaluation each block's declared balance (a signed sum of port
pairings) is recorded in a :class:`PowerAudit`.

Block catalog: kinetic blocks for the three representations, the
stress-power Stokes-Dirac block, the symmetric/asymmetric and the
volumetric/deviatoric stress-port splits, and constitutive closures.
"""
from __future__ import annotations

import graphlib
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from phcm import fiber, mesh
from phcm.constitutive import evaluate_hyperelastic, evaluate_newtonian, equation_of_state
from phcm.errors import RejectedInput
from phcm.kinetic import kinetic_dirac_apply, kinetic_power_residual, variational_derivatives
from phcm.mesh import TRACTION, VELOCITY, BundleForm, MetricField, ScalarForm
from phcm.states import Params, deformation_gradient
from phcm.stress import (StokesDiracOutput, impose_traction, impose_velocity, stress_coefficients,
                         stress_power_balance, traction_lift)

__all__ = [
    "ALGEBRAIC",
    "MESH",
    "ALGEBRAIC_TOL",
    "PowerPort",
    "Output",
    "DiracBlock",
    "BlockAudit",
    "PowerAudit",
    "Network",
    "evaluate_block",
    "compose",
    "audit_power",
    "kinetic_block",
    "stokes_dirac_block",
    "sym_asym_block",
    "vol_dev_block",
    "hyperelastic_block",
    "newtonian_block",
    "material_stress",
]

ALGEBRAIC = "algebraic"
MESH = "mesh"
ALGEBRAIC_TOL = 1e-12


@dataclass
class PowerPort:
    """Flow/effort pair with its power pairing.

    ``flow`` and ``effort`` are bundle-valued forms of dual kinds and
    complementary degrees (interior ports), or face traces (boundary ports).
    """

    name: str
    flow: BundleForm
    effort: BundleForm
    domain: str = "interior"

    def __post_init__(self):
        f, e = self.flow, self.effort
        if f.kind == e.kind or f.degree + e.degree != f.grid.n:
            raise RejectedInput(f"port {self.name}: flow and effort are not dual")

    def pairing(self) -> float:
        """Power ``int flow ^. effort`` (interior) or its boundary trace integral."""
        if self.domain == "interior":
            return mesh.integrate(mesh.wedge_dot(self.flow, self.effort))
        beta = mesh.wedge_dot(self.flow, self.effort)
        return mesh.boundary_integral(beta)


@dataclass
class Output:
    """One block output: its type tag, the inputs it needs, and its map."""

    tag: str
    deps: tuple
    fn: Callable


@dataclass
class DiracBlock:
    """Dirac block with explicit input/output causality.

    Parameters
    ----------
    name : str
    inputs : dict
        ``{port: tag}``; tags must match across wires.
    outputs : dict
        ``{port: Output}``; ``Output.fn(inputs, ctx)`` receives the available
        inputs and a per-evaluation context dict (state, time, cache).
    balance : callable, optional
        ``balance(inputs, outputs, ctx) -> (residual, terms)``.
    tolerance : str
        ``"algebraic"`` (1e-12, relative to the largest term) or ``"mesh"``
        (``mesh_constant * h^2``, relative).
    modulated : bool
        Whether the block needs a state in the context.
    """

    name: str
    inputs: dict
    outputs: dict
    balance: Callable | None = None
    tolerance: str = ALGEBRAIC
    modulated: bool = False
    mesh_constant: float = 50.0
    h: float = 1.0

    def threshold(self, scale):
        s = max(1.0, scale)
        if self.tolerance == ALGEBRAIC:
            return ALGEBRAIC_TOL * s
        return self.mesh_constant * self.h ** 2 * s


@dataclass
class BlockAudit:
    block: str
    residual: float
    tolerance: str
    threshold: float
    terms: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return not np.isfinite(self.residual) or abs(self.residual) > self.threshold


@dataclass
class PowerAudit:
    """Per-block balance residuals of one or more network evaluations."""

    entries: list = field(default_factory=list)

    def add(self, entry: BlockAudit):
        self.entries.append(entry)
        if entry.flagged:
            warnings.warn(f"power balance of block {entry.block} off by {entry.residual:.3e} "
                          f"(threshold {entry.threshold:.3e})", RuntimeWarning, stacklevel=3)

    def extend(self, other: "PowerAudit"):
        self.entries.extend(other.entries)

    @property
    def aggregate(self) -> float:
        return float(sum(abs(e.residual) for e in self.entries))

    def by_class(self) -> dict:
        out = {ALGEBRAIC: 0.0, MESH: 0.0}
        for e in self.entries:
            out[e.tolerance] += abs(e.residual)
        return out

    def report(self) -> dict:
        """Machine-readable summary."""
        return {
            "blocks": [{"block": e.block, "residual": float(e.residual), "tolerance": e.tolerance,
                        "threshold": float(e.threshold), "flagged": bool(e.flagged),
                        "terms": {k: float(v) for k, v in e.terms.items()}} for e in self.entries],
            "aggregate": self.aggregate,
            "by_class": self.by_class(),
            "flagged": [e.block for e in self.entries if e.flagged],
        }


def _finish(block: DiracBlock, inputs, outputs, ctx, audit: PowerAudit):
    if block.balance is None:
        return
    res, terms = block.balance(inputs, outputs, ctx)
    scale = max([abs(float(v)) for v in terms.values()] + [0.0])
    audit.add(BlockAudit(block.name, float(res), block.tolerance, block.threshold(scale), dict(terms)))


def evaluate_block(block: DiracBlock, inputs: dict, state=None, t=0.0):
    """Evaluate a single block.

    Returns
    -------
    outputs : dict
    audit : PowerAudit
    """
    missing = [k for k in block.inputs if k not in inputs]
    if missing:
        raise RejectedInput(f"block {block.name}: missing input port(s) {missing}")
    if block.modulated and state is None:
        raise RejectedInput(f"block {block.name} is state-modulated; no state supplied")
    ctx = {"state": state, "t": t, "cache": {}}
    outputs = {k: o.fn(inputs, ctx) for k, o in block.outputs.items()}
    audit = PowerAudit()
    _finish(block, inputs, outputs, ctx, audit)
    return outputs, audit


def _split(ref):
    if "." not in ref:
        raise RejectedInput(f"port reference {ref!r} must read 'block.port'")
    return tuple(ref.split(".", 1))


@dataclass
class Network:
    """Composed blocks with a port-level evaluation order."""

    blocks: dict
    sources: dict
    external: dict
    order: list

    def evaluate(self, external: dict | None = None, state=None, t=0.0):
        """Evaluate every block output in topological order.

        Parameters
        ----------
        external : dict
            ``{"block.port": value}`` for the declared external inputs.
        state : object, optional
            Modulating state shared by all blocks.

        Returns
        -------
        values : dict
            ``{"block.port": value}`` for all inputs and outputs.
        audit : PowerAudit
        """
        external = dict(external or {})
        missing = [k for k in self.external if k not in external]
        if missing:
            raise RejectedInput(f"missing external input(s) {missing}")
        ctxs = {name: {"state": state, "t": t, "cache": {}} for name in self.blocks}
        values = {}
        for node in self.order:
            bname, port = _split(node)
            block = self.blocks[bname]
            if port in block.inputs:
                src = self.sources.get(node)
                values[node] = values[src] if src is not None else external[node]
                continue
            out = block.outputs[port]
            ins = {k: values[f"{bname}.{k}"] for k in out.deps}
            values[node] = out.fn(ins, ctxs[bname])
        audit = PowerAudit()
        for bname, block in self.blocks.items():
            ins = {k: values[f"{bname}.{k}"] for k in block.inputs}
            outs = {k: values[f"{bname}.{k}"] for k in block.outputs}
            _finish(block, ins, outs, ctxs[bname], audit)
        return values, audit


def compose(blocks, wiring, external=()) -> Network:
    """Wire blocks into a network.

    Parameters
    ----------
    blocks : sequence of DiracBlock
    wiring : sequence of (str, str)
        ``("src.output", "dst.input")`` pairs. An output may feed several
        inputs; every input has exactly one source.
    external : sequence of str
        Inputs supplied at evaluation time (``"block.input"``).

    Raises
    ------
    RejectedInput
        Dangling inputs, unknown ports, tag mismatches or dependency cycles.
    """
    bmap = {}
    for b in blocks:
        if b.name in bmap:
            raise RejectedInput(f"duplicate block name {b.name!r}")
        bmap[b.name] = b
    sources = {}
    for src, dst in wiring:
        sb, sp = _split(src)
        db, dp = _split(dst)
        if sb not in bmap or sp not in bmap[sb].outputs:
            raise RejectedInput(f"unknown output port {src}")
        if db not in bmap or dp not in bmap[db].inputs:
            raise RejectedInput(f"unknown input port {dst}")
        if bmap[sb].outputs[sp].tag != bmap[db].inputs[dp]:
            raise RejectedInput(f"kind mismatch on wire {src} -> {dst}: "
                                f"{bmap[sb].outputs[sp].tag} vs {bmap[db].inputs[dp]}")
        if dst in sources:
            raise RejectedInput(f"input {dst} has more than one source")
        sources[dst] = src
    ext = {}
    for ref in external:
        b, p = _split(ref)
        if b not in bmap or p not in bmap[b].inputs:
            raise RejectedInput(f"unknown external input {ref}")
        if ref in sources:
            raise RejectedInput(f"input {ref} is both wired and external")
        ext[ref] = bmap[b].inputs[p]
    graph = {}
    for name, b in bmap.items():
        for p in b.inputs:
            ref = f"{name}.{p}"
            if ref not in sources and ref not in ext:
                raise RejectedInput(f"dangling input port {ref}")
            graph[ref] = {sources[ref]} if ref in sources else set()
        for p, o in b.outputs.items():
            graph[f"{name}.{p}"] = {f"{name}.{d}" for d in o.deps}
            for d in o.deps:
                if d not in b.inputs:
                    raise RejectedInput(f"output {name}.{p} depends on unknown input {d}")
    try:
        order = list(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError as exc:
        raise RejectedInput(f"dependency cycle through ports {exc.args[1]}") from None
    return Network(bmap, sources, ext, order)


def audit_power(evaluation) -> dict:
    """Report of a completed evaluation (``(values, audit)`` or a :class:`PowerAudit`)."""
    audit = evaluation[1] if isinstance(evaluation, tuple) else evaluation
    return audit.report()


# ---------------------------------------------------------------------------
# block catalog
# ---------------------------------------------------------------------------

def _tag(kind, degree):
    return f"{kind}-{degree}"


def _grid_h(grid):
    return max(grid.h)


def kinetic_block(params: Params, representation, scheme="identity", name="kinetic") -> DiracBlock:
    """Kinetic Dirac block of one representation.

    Input ``force`` (covector-valued top form). Outputs ``v`` (the velocity
    flow ``f_d`` sent to the stress block) and ``rates`` (state rates).
    The audited balance is the kinetic power identity with its boundary term.
    """
    grid = params.grid
    n = grid.n

    def efforts(ctx):
        if "eff" not in ctx["cache"]:
            st = ctx["state"]
            d = variational_derivatives(st, params)
            ctx["cache"]["eff"] = (d.first, d.momentum)
        return ctx["cache"]["eff"]

    def f_v(ins, ctx):
        return efforts(ctx)[1]

    def f_rates(ins, ctx):
        out = kinetic_dirac_apply(ctx["state"], params, efforts(ctx), ins["force"], scheme)
        ctx["cache"]["out"] = out
        return out.rates

    def bal(ins, outs, ctx):
        return kinetic_power_residual(ctx["state"], params, efforts(ctx), ctx["cache"]["out"], ins["force"])

    return DiracBlock(name, {"force": _tag("covector", n)},
                      {"v": Output(_tag("vector", 0), (), f_v),
                       "rates": Output("rates", ("force",), f_rates)},
                      bal, ALGEBRAIC if representation == "material" else MESH, True, h=_grid_h(grid))


def _boundary_values(inputs, face, t):
    val = inputs[face]
    return val(t) if callable(val) else val


def stokes_dirac_block(grid, metric_fn=None, velocity_in=None, traction_in=None, sbp=False,
                       traction_mode="strong", name="stokes") -> DiracBlock:
    """Stress-power Stokes-Dirac block.

    Inputs ``v`` (vector field) and ``T`` (covector-valued (n-1)-form);
    outputs ``grad = nabla v``, ``e_d = d_nabla T`` and ``v_imposed``.
    Boundary inputs (values or callables of time) are imposed on their
    faces: velocities strongly, tractions strongly or weakly (see
    :func:`phcm.stress.stokes_dirac_apply`). Corners shared by a velocity
    face and a traction face take velocity data. ``metric_fn(state)``
    returns the connection metric (``None``: Euclidean).
    """
    n = grid.n
    velocity_in = dict(velocity_in or {})
    traction_in = dict(traction_in or {})
    for face in velocity_in:
        if face not in grid.faces or grid.label(face) != VELOCITY:
            raise RejectedInput(f"velocity input on face {face}, which is not a velocity face")
    for face in traction_in:
        if face not in grid.faces or grid.label(face) != TRACTION:
            raise RejectedInput(f"traction input on face {face}, which is not a traction face")
    if traction_mode == "weak" and not sbp:
        raise RejectedInput("weak traction imposition needs the summation-by-parts closure")

    def metric(ctx):
        if "metric" not in ctx["cache"]:
            ctx["cache"]["metric"] = metric_fn(ctx["state"]) if metric_fn is not None else None
        return ctx["cache"]["metric"]

    def now(inputs, t):
        return {f: _boundary_values(inputs, f, t) for f in inputs}

    def f_vimp(ins, ctx):
        if "v" not in ctx["cache"]:
            ctx["cache"]["v"] = impose_velocity(ins["v"], grid, now(velocity_in, ctx["t"]))
        return ctx["cache"]["v"]

    def f_grad(ins, ctx):
        return mesh.covariant_derivative(BundleForm.field(grid, f_vimp(ins, ctx)), metric(ctx), sbp)

    def f_ed(ins, ctx):
        tin = now(traction_in, ctx["t"])
        Tb = impose_traction(ins["T"], tin)
        if traction_mode == "strong":
            ctx["cache"]["T"], ctx["cache"]["Ttr"] = Tb, None
            return mesh.exterior_covariant_d(Tb, metric(ctx), sbp)
        ctx["cache"]["T"], ctx["cache"]["Ttr"] = ins["T"], Tb
        return mesh.exterior_covariant_d(ins["T"], metric(ctx), sbp) + traction_lift(ins["T"], Tb, tin)

    def bal(ins, outs, ctx):
        out = StokesDiracOutput(outs["grad"], outs["e_d"], outs["v_imposed"], ctx["cache"]["T"],
                                T_trace=ctx["cache"]["Ttr"])
        res, terms = stress_power_balance(out)
        terms["boundary"] = terms["boundary_velocity_faces"] + terms["boundary_traction_faces"]
        return res, terms

    return DiracBlock(name, {"v": _tag("vector", 0), "T": _tag("covector", n - 1)},
                      {"grad": Output(_tag("vector", 1), ("v",), f_grad),
                       "e_d": Output(_tag("covector", n), ("T",), f_ed),
                       "v_imposed": Output(_tag("vector", 0), ("v",), f_vimp)},
                      bal, ALGEBRAIC if sbp else MESH, metric_fn is not None, h=_grid_h(grid))


def _metric_array(metric_fn, ctx, grid):
    m = metric_fn(ctx["state"]) if metric_fn is not None else None
    n = grid.n
    return m.g if m is not None else np.broadcast_to(np.eye(n), grid.shape + (n, n))


def sym_asym_block(grid, metric_fn=None, name="sym_asym") -> DiracBlock:
    """Symmetric/asymmetric split of the stress port.

    Inputs ``grad`` (vector-valued 1-form) and ``T`` (stress form). Outputs
    ``eps`` and ``w`` (fiber fields) and the dual parts ``Y_sym``, ``Y_asy``
    (coefficient fields, see :func:`phcm.stress.stress_coefficients`).
    Balance: largest pointwise ``|<Y|X> - <Y_sym|eps> - <Y_asy|w>|``.
    """
    n = grid.n

    def g(ctx):
        if "g" not in ctx["cache"]:
            ctx["cache"]["g"] = _metric_array(metric_fn, ctx, grid)
        return ctx["cache"]["g"]

    def X(ins):
        return mesh.bundle_to_fiber(ins["grad"])

    def f_eps(ins, ctx):
        return fiber.metric_sym(X(ins), g(ctx))

    def f_w(ins, ctx):
        return fiber.metric_asym(X(ins), g(ctx))

    def f_ys(ins, ctx):
        return fiber.dual_metric_sym(stress_coefficients(ins["T"]), g(ctx))

    def f_ya(ins, ctx):
        Y = stress_coefficients(ins["T"])
        return Y - fiber.dual_metric_sym(Y, g(ctx))

    def bal(ins, outs, ctx):
        Xa = X(ins)
        Y = stress_coefficients(ins["T"])
        tot = fiber.pair(Y, Xa)
        s = fiber.pair(outs["Y_sym"], outs["eps"])
        a = fiber.pair(outs["Y_asy"], outs["w"])
        r = tot - s - a
        k = int(np.argmax(np.abs(r)))
        return float(r.flat[k]), {"total": float(tot.flat[k]), "sym": float(s.flat[k]), "asy": float(a.flat[k])}

    fib = "fiber-mixed"
    dual = "fiber-dual"
    return DiracBlock(name, {"grad": _tag("vector", 1), "T": _tag("covector", n - 1)},
                      {"eps": Output(fib, ("grad",), f_eps), "w": Output(fib, ("grad",), f_w),
                       "Y_sym": Output(dual, ("T",), f_ys), "Y_asy": Output(dual, ("T",), f_ya)},
                      bal, ALGEBRAIC, metric_fn is not None)


def vol_dev_block(grid, name="vol_dev") -> DiracBlock:
    """Volumetric/deviatoric split of the symmetric stress port.

    Inputs ``eps`` and ``Y_sym``; outputs ``eps_vol`` (trace), ``eps_dev``,
    ``y_vol`` (trace over n) and ``Y_dev``. Balance: largest pointwise
    ``|<Y|eps> - y_vol eps_vol - <Y_dev|eps_dev>|``.
    """

    def f(which):
        def fn(ins, ctx):
            if which in ("eps_vol", "eps_dev"):
                ev, ed = fiber.vol_dev(ins["eps"])
                return ev if which == "eps_vol" else ed
            yv, yd = fiber.dual_vol_dev(ins["Y_sym"])
            return yv if which == "y_vol" else yd
        return fn

    def bal(ins, outs, ctx):
        tot = fiber.pair(ins["Y_sym"], ins["eps"])
        v = outs["y_vol"] * outs["eps_vol"]
        d = fiber.pair(outs["Y_dev"], outs["eps_dev"])
        r = tot - v - d
        k = int(np.argmax(np.abs(r)))
        return float(r.flat[k]), {"total": float(tot.flat[k]), "vol": float(v.flat[k]), "dev": float(d.flat[k])}

    return DiracBlock(name, {"eps": "fiber-mixed", "Y_sym": "fiber-dual"},
                      {"eps_vol": Output("fiber-scalar", ("eps",), f("eps_vol")),
                       "eps_dev": Output("fiber-mixed", ("eps",), f("eps_dev")),
                       "y_vol": Output("fiber-scalar", ("Y_sym",), f("y_vol")),
                       "Y_dev": Output("fiber-dual", ("Y_sym",), f("Y_dev"))},
                      bal, ALGEBRAIC)


def material_stress(tau, F, ghat: MetricField, mass: ScalarForm) -> BundleForm:
    """Material (first Piola) stress form: value push-forward of ``hodge_c(tau)``.

    ``tau`` is the convective intensive stress; the covector value index is
    mapped with ``F^-T``.
    """
    grid = mass.grid
    That = mesh.hodge_c(mesh.fiber_to_bundle(grid, tau), ghat, mass)
    Finv = np.linalg.inv(F)
    data = np.einsum("...Ii,Ic...->ic...", Finv, That.data)
    return BundleForm(grid, grid.n - 1, "covector", data)


def hyperelastic_block(params: Params, model, representation, sbp=False, name="constitutive") -> DiracBlock:
    """Energy-storing hyperelastic closure (no inputs).

    Output ``T``: the stress form of the current state; ``tau`` and ``psi``
    (specific energy times mass density) are exposed for bookkeeping.
    """
    grid = params.grid
    n = grid.n

    def ev(ctx):
        if "ev" not in ctx["cache"]:
            st = ctx["state"]
            if representation == "material":
                F, _ = deformation_gradient(st.u, grid, sbp=sbp)
                g = np.einsum("...iI,ij,...jJ->...IJ", F, params.g, F)
                ghat = MetricField(grid, g)
            else:
                F, ghat = None, st.ghat
            tau, psi, parts = evaluate_hyperelastic(model, ghat.g, params.G.g, params.rho)
            if representation == "material":
                T = material_stress(tau, F, ghat, params.mass)
            else:
                T = mesh.hodge_c(mesh.fiber_to_bundle(grid, tau), ghat, params.mass)
            ctx["cache"]["ev"] = (T, tau, psi, parts)
        return ctx["cache"]["ev"]

    return DiracBlock(name, {},
                      {"T": Output(_tag("covector", n - 1), (), lambda i, c: ev(c)[0]),
                       "tau": Output("fiber-mixed", (), lambda i, c: ev(c)[1]),
                       "psi": Output("field", (), lambda i, c: ev(c)[2])},
                      None, ALGEBRAIC, True)


def newtonian_block(grid, model, name="constitutive") -> DiracBlock:
    """Resistive Newtonian closure with pressure.

    Input ``eps`` (rate of strain, spatial). Outputs ``T`` (stress form),
    ``dissipation`` (density ``rho * (kappa eps_vol^2 + 2 theta |eps_dev|^2)``)
    and ``internal`` (density of the internal energy ``rho U(rho)``).
    """
    n = grid.n

    def ev(ins, ctx):
        if "ev" not in ctx["cache"]:
            mu = ctx["state"].mu
            rho = mu.data[0]
            tau, diss, _, _ = evaluate_newtonian(model, ins["eps"], rho)
            T = mesh.hodge_c(mesh.fiber_to_bundle(grid, tau), None, mu)
            U, _, _ = equation_of_state(rho, model.eos)
            ctx["cache"]["ev"] = (T, rho * diss, rho * U, tau)
        return ctx["cache"]["ev"]

    return DiracBlock(name, {"eps": "fiber-mixed"},
                      {"T": Output(_tag("covector", n - 1), ("eps",), lambda i, c: ev(i, c)[0]),
                       "dissipation": Output("field", ("eps",), lambda i, c: ev(i, c)[1]),
                       "internal": Output("field", ("eps",), lambda i, c: ev(i, c)[2]),
                       "tau": Output("fiber-mixed", ("eps",), lambda i, c: ev(i, c)[3])},
                      None, ALGEBRAIC, True)
