"""Tensor-calculus right-hand sides on raw difference stencils.

An independent discretization of the equations of motion in index
notation, used to cross-check the exterior-calculus block pipeline. Only
numpy differences and the pointwise constitutive laws are shared with the
rest of the package.

All rates are nodal coefficient arrays:

* material: ``phi`` ``[i, *nodes]`` and ``M`` (momentum density ``rho0 v_i``);
* spatial: ``mu`` (mass density rate) and ``M`` (``rho v_i`` rate);
* convective: ``ghat`` ``[*nodes, I, J]`` and ``M`` (``rho0 ghat_IJ vhat^J`` rate).
"""
from __future__ import annotations

import numpy as np

from phcm.constitutive import FluidModel, HyperelasticModel, evaluate_hyperelastic, evaluate_newtonian
from phcm.errors import RejectedInput
from phcm.states import ConvectiveState, MaterialState, Params, SpatialState

__all__ = ["oracle_rhs", "block_rates_as_arrays", "compare_rates"]


def _diff(f, axis, h, periodic):
    """Second-order central difference along ``axis``; one-sided second order at bounded ends."""
    f = np.asarray(f, dtype=float)
    if periodic:
        return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2 * h)
    return np.gradient(f, h, axis=axis, edge_order=2)


class _Stencil:
    def __init__(self, grid):
        self.n = grid.n
        self.h = grid.h
        self.periodic = grid.periodic

    def d(self, f, a):
        """Derivative along grid axis ``a`` (the last ``n`` axes of ``f`` are nodal)."""
        f = np.asarray(f, dtype=float)
        ax = f.ndim - self.n + a
        return _diff(f, ax, self.h[a], self.periodic[a])

    def d_fiber(self, A, a):
        """Derivative of a fiber-layout field ``[*nodes, ...]``."""
        return _diff(A, a, self.h[a], self.periodic[a])


def _christoffel(st: _Stencil, g):
    """``Gamma[*nodes, K, I, J] = 1/2 g^KL (d_I g_LJ + d_J g_LI - d_L g_IJ)``."""
    n = st.n
    dg = np.stack([st.d_fiber(g, a) for a in range(n)], axis=-3)  # [*, a, I, J]
    t = (np.einsum("...iLj->...Lij", dg) + np.einsum("...jLi->...Lij", dg) - dg)
    return 0.5 * np.einsum("...KL,...LIJ->...KIJ", np.linalg.inv(g), t)


def _velocity_density(M_values, rho, ginv):
    if ginv.ndim == 2:
        return np.einsum("ij,j...->i...", ginv, M_values) / rho
    return np.einsum("...ij,j...->i...", ginv, M_values) / rho


def _grad_vector(st, v):
    """``X[*nodes, i, j] = d_j v^i``."""
    return np.stack([np.stack([st.d(v[i], j) for j in range(st.n)], axis=-1) for i in range(st.n)], axis=-2)


def oracle_rhs(state, p: Params, model=None):
    """Rates of the tensor-calculus equations of motion.

    Parameters
    ----------
    state : MaterialState, SpatialState or ConvectiveState
    p : Params
    model : HyperelasticModel or FluidModel, optional
        Constitutive law of the stress term (none: no stress).

    Returns
    -------
    dict
        Nodal rate arrays, see the module docstring.
    """
    grid = state.grid
    st = _Stencil(grid)
    n = grid.n
    if isinstance(state, MaterialState):
        rho0 = p.rho
        v = _velocity_density(state.M.values, rho0, np.linalg.inv(p.g))
        rate = np.zeros_like(v)
        if model is not None:
            if not isinstance(model, HyperelasticModel):
                raise RejectedInput("material oracle needs a hyperelastic model")
            F = _grad_vector(st, state.u) + np.eye(n)
            ghat = np.einsum("...iI,ij,...jJ->...IJ", F, p.g, F)
            tau, _, _ = evaluate_hyperelastic(model, ghat, p.G.g)
            # first Piola coefficients P[*, i, J] = rho0 (g F tau ghat^-1)_iJ
            P = rho0[..., None, None] * np.einsum("ij,...jK,...KL,...LJ->...iJ", p.g, F, tau, np.linalg.inv(ghat))
            rate = np.stack([sum(st.d_fiber(P[..., i, J], J) for J in range(n)) for i in range(n)])
        return {"phi": v, "M": rate}
    if isinstance(state, SpatialState):
        rho = state.mu.data[0]
        g = p.g
        m = np.asarray(state.M.values)
        v = _velocity_density(m, rho, np.linalg.inv(g))
        drho = -sum(st.d(rho * v[j], j) for j in range(n))
        dm = np.stack([-sum(st.d(m[i] * v[j], j) for j in range(n)) for i in range(n)])
        if model is not None:
            if not isinstance(model, FluidModel):
                raise RejectedInput("spatial oracle needs a fluid model")
            X = _grad_vector(st, v)
            eps = 0.5 * (X + np.linalg.inv(g) @ np.swapaxes(X, -1, -2) @ g)
            tau, _, _, _ = evaluate_newtonian(model, eps, rho)
            sig = rho[..., None, None] * (g @ tau @ np.linalg.inv(g))  # sigma_i^j
            dm = dm + np.stack([sum(st.d_fiber(sig[..., i, j], j) for j in range(n)) for i in range(n)])
        return {"mu": drho, "M": dm}
    if isinstance(state, ConvectiveState):
        rho0 = p.rho
        g = np.asarray(state.ghat.g)
        ginv = np.linalg.inv(g)
        m = np.asarray(state.M.values)
        v = _velocity_density(m, rho0, ginv)
        # Lie derivative of the metric in coordinates
        dg = np.stack([st.d_fiber(g, a) for a in range(n)], axis=-3)
        X = _grad_vector(st, v)  # d_J v^K at [*, K, J]
        lie = (np.einsum("K...,...KIJ->...IJ", v, dg)
               + np.einsum("...KJ,...KI->...IJ", g, X)
               + np.einsum("...IK,...KJ->...IJ", g, X))
        ke = 0.5 * np.einsum("I...,...IJ,J...->...", v, g, v)
        dm = np.stack([rho0 * st.d(ke, I) for I in range(n)])
        if model is not None:
            if not isinstance(model, HyperelasticModel):
                raise RejectedInput("convective oracle needs a hyperelastic model")
            tau, _, _ = evaluate_hyperelastic(model, g, p.G.g)
            Y = rho0[..., None, None] * (g @ tau @ ginv)  # Y_I^J
            Gam = _christoffel(st, g)
            div = np.stack([sum(st.d_fiber(Y[..., I, J], J) for J in range(n)) for I in range(n)])
            div = div - np.moveaxis(np.einsum("...KJI,...KJ->...I", Gam, Y), -1, 0)
            dm = dm + div
        return {"ghat": lie, "M": dm}
    raise RejectedInput(f"not a state: {type(state).__name__}")


def block_rates_as_arrays(rates: dict):
    """Convert block-pipeline rates to the nodal arrays of :func:`oracle_rhs`."""
    out = {}
    for k, val in rates.items():
        if k == "mu":
            out[k] = np.asarray(val.data[0])
        elif k == "M":
            out[k] = np.asarray(val.values)
        else:
            out[k] = np.asarray(val)
    return out


def compare_rates(block: dict, oracle: dict, interior_only=False, grid=None):
    """Largest absolute difference per field.

    With ``interior_only`` the nodes on bounded faces are excluded.
    """
    res = {}
    for k in oracle:
        a = np.asarray(block[k])
        b = np.asarray(oracle[k])
        diff = np.abs(a - b)
        if interior_only and grid is not None:
            sl = tuple(slice(1, -1) if not p else slice(None) for p in grid.periodic)
            if k == "ghat":
                diff = diff[sl]
            else:
                diff = diff[(Ellipsis,) + sl]
        res[k] = float(np.max(diff))
    return res
