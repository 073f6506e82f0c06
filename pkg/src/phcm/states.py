"""Material, spatial and convective state spaces and the maps between them.

A configuration is stored as a displacement ``u = phi - X`` on the body grid.
Momenta are covector-valued top forms; their value index is spatial for the
material and spatial states and convective for the convective state.

The ambient metric ``g`` is constant (Cartesian ambient space).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from phcm import mesh
from phcm.errors import FoldOverError, RejectedInput
from phcm.mesh import (BundleForm, Grid, MassForm, MetricField, ScalarForm, exterior_covariant_d,
                       interior, interpolate)

__all__ = [
    "Params",
    "MaterialState",
    "SpatialState",
    "ConvectiveState",
    "deformation_gradient",
    "velocity",
    "velocity_representations",
    "to_convective",
    "from_convective",
    "spatial_grid_for",
    "invert_map",
    "to_spatial",
    "from_spatial",
    "reconstruct_configuration",
    "spatial_push",
    "spatial_pullback",
    "material_pairing",
    "spatial_pairing",
    "convective_push",
    "convective_push_fd",
    "convective_pullback",
    "convective_pairing",
    "write_state",
]


@dataclass(eq=False)
class Params:
    """Fixed parameters: body mass form, ambient metric and reference metric.

    Parameters
    ----------
    mass : MassForm
        Reference mass form on the body grid.
    g : ndarray, optional
        Constant ambient metric ``(n, n)``; identity by default.
    G : MetricField, optional
        Reference metric on the body; Euclidean by default.
    """

    mass: MassForm
    g: np.ndarray = None
    G: MetricField = None

    def __post_init__(self):
        n = self.grid.n
        self.g = np.eye(n) if self.g is None else np.asarray(self.g, dtype=float)
        if self.g.shape != (n, n):
            raise RejectedInput(f"ambient metric must be {n}x{n}")
        from phcm import fiber

        fiber.spd_check(self.g, "ambient metric")
        if self.G is None:
            self.G = MetricField.euclidean(self.grid)
        elif self.G.grid != self.grid:
            raise RejectedInput("reference metric lives on a different grid")

    @property
    def grid(self) -> Grid:
        return self.mass.grid

    @property
    def rho(self):
        return self.mass.data[0]


@dataclass(eq=False)
class MaterialState:
    """Displacement ``u[i, *nodes]`` and material momentum ``M`` on the body grid."""

    u: np.ndarray
    M: BundleForm

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.shape != (self.grid.n,) + self.grid.shape:
            raise RejectedInput("displacement shape does not match the grid")
        if self.M.kind != "covector" or self.M.degree != self.grid.n:
            raise RejectedInput("material momentum must be a covector-valued top form")

    @property
    def grid(self) -> Grid:
        return self.M.grid

    def phi(self):
        """Embedding coordinates ``X + u``."""
        return self.grid.points() + self.u


@dataclass(eq=False)
class SpatialState:
    mu: MassForm
    M: BundleForm

    @property
    def grid(self) -> Grid:
        return self.mu.grid


@dataclass(eq=False)
class ConvectiveState:
    ghat: MetricField
    M: BundleForm

    @property
    def grid(self) -> Grid:
        return self.M.grid


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------


def deformation_gradient(u, grid: Grid, check=True, sbp=False):
    """Deformation gradient ``F[*nodes, i, I]`` and ``det F``.

    ``sbp`` selects the summation-by-parts end closure of :meth:`Grid.d`.

    Raises
    ------
    FoldOverError
        If ``det F <= 0`` at some node (reported with the first such node).
    """
    u = np.asarray(u, dtype=float)
    n = grid.n
    F = np.empty(grid.shape + (n, n))
    for i in range(n):
        for I in range(n):
            F[..., i, I] = grid.d(u[i], I, sbp) + (1.0 if i == I else 0.0)
    J = np.linalg.det(F)
    if check and not np.all(J > 0):
        bad = np.unravel_index(np.argmin(J), J.shape)
        raise FoldOverError(f"det F = {J[bad]:.3e} <= 0 (fold-over)", node=tuple(int(b) for b in bad))
    return F, J


def velocity(M: BundleForm, mass, ginv):
    """Velocity ``v^i = g^ij M_j / rho``; ``ginv`` constant or fiber-layout field."""
    rho = mass.data[0] if isinstance(mass, ScalarForm) else np.asarray(mass)
    if not np.all(rho > 0):
        raise RejectedInput("non-positive mass density")
    ginv = np.asarray(ginv)
    if ginv.ndim == 2:
        return np.einsum("ij,j...->i...", ginv, M.values) / rho
    return np.einsum("...ij,j...->i...", ginv, M.values) / rho


def _apply(F, v):
    """``out[i, *nodes] = F[*nodes, i, j] v[j, *nodes]``."""
    return np.einsum("...ij,j...->i...", F, v)


def _apply_T(F, v):
    return np.einsum("...ji,j...->i...", F, v)


def to_convective(m: MaterialState, p: Params) -> ConvectiveState:
    """Convective metric ``F^T g F`` and momentum ``F^T M`` (value pullback)."""
    F, _ = deformation_gradient(m.u, m.grid)
    ghat = np.einsum("...iI,ij,...jJ->...IJ", F, p.g, F)
    Mhat = _apply_T(F, m.M.values)
    return ConvectiveState(MetricField(m.grid, ghat), BundleForm.top(m.grid, Mhat, "covector"))


def from_convective(c: ConvectiveState, u, p: Params) -> MaterialState:
    """Material state with displacement ``u`` whose convective image has momentum ``c.M``."""
    F, _ = deformation_gradient(u, c.grid)
    Mt = _apply_T(np.linalg.inv(F), c.M.values)
    return MaterialState(u, BundleForm.top(c.grid, Mt, "covector"))


def velocity_representations(m: MaterialState, p: Params, sgrid: Grid | None = None):
    """Material, spatial and convective velocities of a material state.

    Returns
    -------
    vt : ndarray
        Material velocity ``[i, *body]``.
    v : ndarray
        Spatial velocity ``[i, *spatial]`` on ``sgrid`` (``v = vt o phi^-1``).
    vhat : ndarray
        Convective velocity ``[I, *body]`` (``F^-1 vt``).
    """
    F, _ = deformation_gradient(m.u, m.grid)
    vt = velocity(m.M, p.mass, np.linalg.inv(p.g))
    vhat = _apply(np.linalg.inv(F), vt)
    sgrid = sgrid or spatial_grid_for(m)
    X = invert_map(m, sgrid.points())
    v = interpolate(m.grid, vt, X)
    return vt, v, vhat


# ---------------------------------------------------------------------------
# spatial representation
# ---------------------------------------------------------------------------


def spatial_grid_for(m: MaterialState) -> Grid:
    """Spatial sampling grid covering the image of the body.

    Periodic axes keep the body grid. A bounded axis requires the image of its
    two faces to be flat (constant displacement component across each face).
    """
    grid = m.grid
    lengths, origin = list(grid.lengths), list(grid.origin)
    for a in range(grid.n):
        if grid.periodic[a]:
            continue
        lo = m.u[a][grid.face_slice((a, 0))]
        hi = m.u[a][grid.face_slice((a, 1))]
        if np.ptp(lo) > 1e-12 * grid.h[a] or np.ptp(hi) > 1e-12 * grid.h[a]:
            raise RejectedInput("image of the body is not a box; pass a spatial grid explicitly")
        x0 = grid.origin[a] + float(np.mean(lo))
        x1 = grid.origin[a] + grid.lengths[a] + float(np.mean(hi))
        if not x1 > x0:
            raise FoldOverError("bounded axis collapses under the configuration")
        origin[a], lengths[a] = x0, x1 - x0
    labels = {(a, s): grid.label((a, s)) for a, s in grid.faces}
    return Grid.make(grid.cells, lengths, grid.periodic, origin, labels)


def invert_map(m: MaterialState, x, tol=1e-13, maxiter=50):
    """Material points ``X`` with ``phi(X) = x`` by Newton iteration.

    ``phi`` and ``F`` are linearly interpolated from the body grid. ``x`` has
    shape ``(n, *P)``.
    """
    grid = m.grid
    x = np.asarray(x, dtype=float)
    F, _ = deformation_gradient(m.u, grid)
    Fc = np.moveaxis(F, (-2, -1), (0, 1))
    lo = np.array(grid.origin)
    hi = lo + np.array(grid.lengths)
    X = x - interpolate(grid, m.u, _clip(grid, x, lo, hi))
    for _ in range(maxiter):
        Xc = _clip(grid, X, lo, hi)
        r = Xc + interpolate(grid, m.u, Xc) - x
        Fi = np.moveaxis(interpolate(grid, Fc, Xc), (0, 1), (-2, -1))
        step = np.moveaxis(np.linalg.solve(Fi, np.moveaxis(r, 0, -1)[..., None])[..., 0], -1, 0)
        X = Xc - step
        if np.max(np.abs(step)) <= tol * max(1.0, np.max(np.abs(X))):
            return _clip(grid, X, lo, hi)
    raise RejectedInput("inverse configuration map did not converge")


def _clip(grid, X, lo, hi):
    X = X.copy()
    for a in range(grid.n):
        if not grid.periodic[a]:
            X[a] = np.clip(X[a], lo[a], hi[a])
    return X


def _cumulative_mass_1d(grid, rho):
    """Nodal cumulative mass and a callable ``m(X)`` (cubic, trend-corrected if periodic)."""
    h = grid.h[0]
    if grid.periodic[0]:
        ext = np.append(rho, rho[0])
    else:
        ext = rho
    m = np.concatenate([[0.0], np.cumsum(0.5 * h * (ext[1:] + ext[:-1]))])
    X = grid.origin[0] + h * np.arange(m.size)
    if grid.periodic[0]:
        total = m[-1]
        slope = total / grid.lengths[0]
        s = CubicSpline(X, m - slope * (X - X[0]), bc_type="periodic")
        return lambda Y: s(Y) + slope * (Y - X[0])
    return CubicSpline(X, m)


def _to_spatial_1d(m, p, sgrid):
    grid = m.grid
    X = grid.coords(0)
    phi = X + m.u[0]
    if grid.periodic[0]:
        L = grid.lengths[0]
        spl = CubicSpline(np.append(X, X[0] + L), np.append(m.u[0], m.u[0][0]), bc_type="periodic")

        def phi_f(Y):
            return Y + spl(Y)

        def dphi_f(Y):
            return 1.0 + spl(Y, 1)
    else:
        spl = CubicSpline(X, phi)
        phi_f, dphi_f = spl, (lambda Y: spl(Y, 1))
    mass_at = _cumulative_mass_1d(grid, p.rho)
    xs = sgrid.coords(0)
    h = sgrid.h[0]
    if grid.periodic[0]:
        xc = np.append(xs, xs[-1] + h)
    else:
        xc = xs
    Y = np.interp(xc, phi, X)
    for _ in range(60):
        r = phi_f(Y) - xc
        Y = Y - r / dphi_f(Y)
        if np.max(np.abs(r)) < 1e-14 * max(1.0, np.max(np.abs(xc))):
            break
    if not grid.periodic[0]:
        Y[0], Y[-1] = X[0], X[-1]
    cell = np.diff(mass_at(Y)) / h
    if grid.periodic[0]:
        rho = 0.5 * (cell + np.roll(cell, 1))
        Yn = Y[:-1]
    else:
        rho = np.empty(sgrid.shape[0])
        rho[1:-1] = 0.5 * (cell[1:] + cell[:-1])
        rho[0], rho[-1] = cell[0], cell[-1]
        Yn = Y
    vt = velocity(m.M, p.mass, np.linalg.inv(p.g))
    v = interpolate(grid, vt, Yn[None])
    return rho, v


def to_spatial(m: MaterialState, p: Params, sgrid: Grid | None = None) -> SpatialState:
    """Push a material state to the spatial grid.

    In one dimension the density is transferred through the cumulative mass
    function, so the total mass is preserved to roundoff (end nodes of a
    bounded axis take the adjacent cell average). In higher dimensions
    ``rho = rho_t / J`` and the velocity are linearly interpolated at
    ``phi^-1(x)``.
    """
    sgrid = sgrid or spatial_grid_for(m)
    if sgrid.n != m.grid.n:
        raise RejectedInput("spatial grid dimension differs from the body")
    deformation_gradient(m.u, m.grid)
    if m.grid.n == 1:
        rho, v = _to_spatial_1d(m, p, sgrid)
    else:
        F, J = deformation_gradient(m.u, m.grid)
        X = invert_map(m, sgrid.points())
        rho = interpolate(m.grid, p.rho / J, X)
        v = interpolate(m.grid, velocity(m.M, p.mass, np.linalg.inv(p.g)), X)
    M = np.einsum("ij,j...->i...", p.g, v) * rho
    return SpatialState(MassForm.from_density(sgrid, rho), BundleForm.top(sgrid, M, "covector"))


def from_spatial(s: SpatialState, u, p: Params) -> MaterialState:
    """Pull a spatial state back along the configuration with displacement ``u``."""
    grid = p.grid
    F, J = deformation_gradient(u, grid)
    x = grid.points() + u
    rho = interpolate(s.grid, s.mu.data[0], x)
    v = interpolate(s.grid, velocity(s.M, s.mu, np.linalg.inv(p.g)), x)
    Mt = np.einsum("ij,j...->i...", p.g, v) * (J * rho)
    return MaterialState(u, BundleForm.top(grid, Mt, "covector"))


# ---------------------------------------------------------------------------
# configuration reconstruction
# ---------------------------------------------------------------------------


def reconstruct_configuration(vhat, grid: Grid, dt, steps, psi0, sgrid: Grid | None = None):
    """Integrate ``d/dt phi^-1 = -vhat o phi^-1`` with classical RK4.

    Parameters
    ----------
    vhat : callable or sequence
        ``vhat(t) -> [I, *body]``, or a sequence of ``steps + 1`` samples at the
        step times (stage values at half steps use the average of neighbours).
    grid : Grid
        Body grid carrying ``vhat``.
    dt : float
    steps : int
    psi0 : ndarray
        Initial inverse map ``phi^-1`` sampled at spatial points, ``(n, *P)``.
    sgrid : Grid, optional
        When the spatial points form this grid, ``det D(phi^-1) > 0`` is
        checked after every step.

    Returns
    -------
    ndarray
        History of ``phi^-1`` samples, shape ``(steps + 1, n, *P)``.

    Raises
    ------
    FoldOverError
        With the index of the first step producing a fold-over.
    """
    if callable(vhat):
        field_at = vhat
    else:
        samples = [np.asarray(v, dtype=float) for v in vhat]
        if len(samples) != steps + 1:
            raise RejectedInput(f"need {steps + 1} velocity samples, got {len(samples)}")

        def field_at(t):
            s = t / dt
            k = int(np.floor(s + 1e-12))
            if abs(s - k) < 1e-9:
                return samples[min(k, steps)]
            return 0.5 * (samples[k] + samples[min(k + 1, steps)])

    def rate(t, psi):
        return -interpolate(grid, field_at(t), psi)

    psi = np.asarray(psi0, dtype=float).copy()
    hist = [psi.copy()]
    for k in range(steps):
        t = k * dt
        k1 = rate(t, psi)
        k2 = rate(t + 0.5 * dt, psi + 0.5 * dt * k1)
        k3 = rate(t + 0.5 * dt, psi + 0.5 * dt * k2)
        k4 = rate(t + dt, psi + dt * k3)
        psi = psi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if sgrid is not None:
            _, J = deformation_gradient(psi - sgrid.points(), sgrid, check=False)
            if not np.all(J > 0):
                bad = np.unravel_index(np.argmin(J), J.shape)
                raise FoldOverError("inverse map folds over", step=k + 1, node=tuple(int(b) for b in bad))
        hist.append(psi.copy())
    return np.stack(hist)


# ---------------------------------------------------------------------------
# reduction maps: variations and their duals
# ---------------------------------------------------------------------------


def spatial_push(s: SpatialState, dphi, dM_push: BundleForm):
    """Tangent of the spatial reduction map.

    ``dmu = -d iota_dphi mu`` and ``dM = -d_nabla(iota_dphi M) + dM_push``, where
    ``dphi`` is the spatial variation field ``[i, *spatial]`` and ``dM_push`` the
    form-part pushforward of the material momentum variation.
    """
    dmu = -mesh.exterior_d(interior(dphi, s.mu))
    dM = -exterior_covariant_d(interior(dphi, s.M)) + dM_push
    return dmu, dM


def _inverse_columns(F):
    """Vector fields ``a_i = F^-1 e_i`` as an array ``[i, I, *nodes]``."""
    Fi = np.linalg.inv(F)
    return np.moveaxis(Fi, (-1, -2), (0, 1))


def spatial_pullback(m: MaterialState, p: Params, e_mu, e_M, boundary="stated"):
    """Pull spatial efforts back to the material representation.

    Parameters
    ----------
    m : MaterialState
    p : Params
    e_mu : ndarray
        Spatial effort ``e_mu o phi`` sampled on the body nodes.
    e_M : ndarray
        Spatial effort ``e_M o phi``, ``[i, *body]``.
    boundary : {"stated", "derived"}
        Boundary effort. ``"stated"`` uses ``-(e_mu mu + iota_{e_M} M)``;
        ``"derived"`` uses ``-(e_mu + <e_M, v_flat>) iota_{d_i} mu``, which is
        what integration by parts of the pushed pairing produces. The two
        coincide for n = 1.

    Returns
    -------
    e_phi : BundleForm
        Covector-valued top form on the body (spatial value index).
    e_Mt : BundleForm
        Vector field on the body.
    e_bnd : BundleForm
        Covector-valued (n-1)-form on the body; only its face traces matter.
    """
    grid = m.grid
    n = grid.n
    F, _ = deformation_gradient(m.u, grid)
    Finv = np.linalg.inv(F)
    rho = p.rho
    vflat = m.M.values / rho
    e_mu = np.asarray(e_mu, dtype=float)
    e_M = np.asarray(e_M, dtype=float)

    def spatial_grad(f):
        dX = np.stack([grid.d(f, I) for I in range(n)])
        return _apply_T(Finv, dX)

    e_phi = rho * spatial_grad(e_mu)
    for k in range(n):
        e_phi += rho * vflat[k] * spatial_grad(e_M[k])

    cols = _inverse_columns(F)  # [i, I, *nodes]
    mu = p.mass
    if n == 1:
        if boundary not in ("stated", "derived"):
            raise RejectedInput(f"unknown boundary variant {boundary!r}")
        bdata = -(e_mu + e_M[0] * vflat[0]) * rho * cols[0, 0]
        e_bnd = BundleForm(grid, 0, "covector", bdata[None, None])
    else:
        bnd = np.empty((n,) + (n,) + grid.shape)
        if boundary == "stated":
            ie = interior(_apply(Finv, e_M), mu).data  # iota_{F^-1 e} mu
            for i in range(n):
                bnd[i] = -(e_mu * interior(cols[i], mu).data + vflat[i] * ie)
        elif boundary == "derived":
            ev = np.einsum("i...,i...->...", e_M, vflat)
            for i in range(n):
                bnd[i] = -(e_mu + ev) * interior(cols[i], mu).data
        else:
            raise RejectedInput(f"unknown boundary variant {boundary!r}")
        e_bnd = BundleForm(grid, n - 1, "covector", bnd)
    return (BundleForm.top(grid, e_phi, "covector"), BundleForm.field(grid, e_M), e_bnd)


def material_pairing(pulled, dphi, dM: BundleForm):
    """``<pulled efforts, (dphi, dM)>`` on the body including the face term."""
    e_phi, e_Mt, e_bnd = pulled
    grid = e_phi.grid
    dphi_f = BundleForm.field(grid, dphi)
    total = mesh.integrate(mesh.wedge_dot(dphi_f, e_phi)) + mesh.integrate(mesh.wedge_dot(e_Mt, dM))
    if grid.faces:
        total += _face_pairing(dphi, e_bnd)
    return total


def _face_pairing(dphi, e_bnd: BundleForm):
    grid = e_bnd.grid
    if grid.n == 1:
        val = dphi[0] * e_bnd.data[0, 0]
        return float(val[-1] - val[0])
    beta = mesh.ScalarForm(grid, grid.n - 1, np.einsum("i...,ic...->c...", dphi, e_bnd.data))
    return mesh.boundary_integral(beta)


def spatial_pairing(e_mu, e_M, dmu: ScalarForm, dM: BundleForm):
    """``int e_mu dmu + e_M ^. dM`` on the spatial grid."""
    grid = dmu.grid
    return (mesh.integrate(mesh.ScalarForm.top(grid, np.asarray(e_mu) * dmu.data[0]))
            + mesh.integrate(mesh.wedge_dot(BundleForm.field(grid, e_M), dM)))


def convective_push(c: ConvectiveState, p: Params, dphi_hat, dM_pull: BundleForm):
    """Tangent of the convective reduction map.

    ``dghat = L_{dphi_hat} ghat`` (fiber layout) and
    ``dMhat = mu (x) (nabla dphi_hat ^. vhat_flat) + dM_pull``.
    """
    grid = c.grid
    n = grid.n
    dg = mesh.lie_metric(dphi_hat, c.ghat)
    grad = mesh.covariant_derivative(BundleForm.field(grid, dphi_hat), c.ghat).data  # [K, J]
    vflat = c.M.values / p.rho
    extra = np.stack([p.rho * sum(grad[K, J] * vflat[K] for K in range(n)) for J in range(n)])
    return dg, BundleForm.top(grid, extra, "covector") + dM_pull


def convective_push_fd(m: MaterialState, p: Params, du, dM: BundleForm, step=1e-5):
    """Central finite difference of :func:`to_convective` along ``(du, dM)``."""
    plus = to_convective(MaterialState(m.u + step * du, m.M + step * dM), p)
    minus = to_convective(MaterialState(m.u - step * du, m.M - step * dM), p)
    dg = (plus.ghat.g - minus.ghat.g) / (2 * step)
    return dg, (plus.M - minus.M) * (1.0 / (2 * step))


def convective_pullback(m: MaterialState, p: Params, c: ConvectiveState, B, e_M):
    """Pull convective efforts back to the material representation.

    Parameters
    ----------
    B : ndarray
        Symmetric ``[*body, I, J]``; the metric effort is ``B^IJ iota_J mu``.
    e_M : ndarray
        Convective velocity effort ``[I, *body]``.

    Returns
    -------
    (e_phi, e_Mt, e_bnd) in the layout of :func:`spatial_pullback`, with
    ``e_phi = -push_v(d_nabla E)``, ``e_bnd = push_v(E)``, ``e_Mt = F e_M`` and
    ``E = 2 ghat B iota mu + iota_{e_M} Mhat``.
    """
    grid = m.grid
    n = grid.n
    F, _ = deformation_gradient(m.u, grid)
    Finv = np.linalg.inv(F)
    mu = p.mass
    lowB = np.einsum("...KI,...IJ->KJ...", c.ghat.g, B)
    if n == 1:
        E = 2 * lowB[:, 0] * p.rho + c.M.values * np.asarray(e_M)[0]
        E = E[:, None]
    else:
        E = np.zeros((n, n) + grid.shape)
        for J in range(n):
            eJ = np.zeros((n,) + grid.shape)
            eJ[J] = 1.0
            iJ = interior(eJ, mu).data
            for K in range(n):
                E[K] += 2 * lowB[K, J] * iJ
        ie = interior(np.asarray(e_M), mu).data
        vflat = c.M.values / p.rho
        for K in range(n):
            E[K] += vflat[K] * ie
    Eform = BundleForm(grid, n - 1, "covector", E)
    dE = exterior_covariant_d(Eform, c.ghat).values
    e_phi = -_apply_T(Finv, dE)
    bnd = np.einsum("...Ki,Kc...->ic...", Finv, Eform.data)
    e_Mt = _apply(F, np.asarray(e_M))
    return (BundleForm.top(grid, e_phi, "covector"), BundleForm.field(grid, e_Mt),
            BundleForm(grid, n - 1, "covector", bnd))


def convective_pairing(p: Params, B, e_M, dg, dM: BundleForm):
    """``int B^IJ dg_IJ mu + e_M ^. dM`` on the body."""
    grid = dM.grid
    dens = np.einsum("...IJ,...IJ->...", B, dg) * p.rho
    return (mesh.integrate(ScalarForm.top(grid, dens))
            + mesh.integrate(mesh.wedge_dot(BundleForm.field(grid, e_M), dM)))


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


def write_state(directory, state, t=None, prefix=""):
    """Write every field of a state as a CSV file; returns the list of paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []

    def put(name, form):
        path = os.path.join(directory, f"{prefix}{name}.csv")
        mesh.write_form_csv(path, form, name=name, t=t)
        paths.append(path)

    if isinstance(state, MaterialState):
        put("u", BundleForm.field(state.grid, state.u))
        put("M_material", state.M)
    elif isinstance(state, SpatialState):
        put("mu", state.mu)
        put("M_spatial", state.M)
    elif isinstance(state, ConvectiveState):
        g = state.ghat.g
        n = state.grid.n
        put("ghat", BundleForm(state.grid, 1, "covector", np.moveaxis(np.asarray(g), (-2, -1), (0, 1))))
        put("M_convective", state.M)
    else:
        raise RejectedInput(f"unknown state type {type(state).__name__}")
    return paths
