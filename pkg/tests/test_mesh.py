import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import convergence_order, random_spd
from phcm import mesh as M
from phcm.errors import RejectedInput

TP = 2 * np.pi


def smooth_form(grid, k, seed=0):
    """Smooth scalar k-form on ``grid`` with per-component trigonometric data."""
    X = grid.points()
    rng = np.random.default_rng(seed)
    comps = []
    for c in range(len(M.combos(grid.n, k))):
        a = rng.integers(1, 3, size=grid.n)
        ph = rng.random(grid.n)
        comps.append(np.prod([np.sin(TP * a[i] * X[i] + ph[i]) + 0.5 for i in range(grid.n)], axis=0))
    return M.ScalarForm(grid, k, np.stack(comps))


def test_grid_shapes_and_validation():
    g = M.Grid.make((4, 8), 1.0, (True, False))
    assert g.shape == (4, 9)
    assert g.faces == [(1, 0), (1, 1)]
    with pytest.raises(RejectedInput):
        M.Grid.make(3)
    with pytest.raises(RejectedInput):
        M.Grid.make(8, -1.0)


def test_corner_nodes_belong_to_velocity_part():
    g = M.Grid.make((4, 4), 1.0, False, boundary={(0, 0): M.VELOCITY})
    vel = g.boundary_mask(M.VELOCITY)
    tra = g.boundary_mask(M.TRACTION)
    assert vel[0, 0] and vel[0, -1] and not tra[0, 0]
    assert not np.any(vel & tra)
    assert np.array_equal(vel | tra, g.boundary_mask())


def test_d_of_constant_is_zero():
    for per in (True, False):
        g = M.Grid.make((8, 8), 1.0, per)
        f = M.ScalarForm.function(g, np.full(g.shape, 3.0))
        assert np.abs(M.exterior_d(f).data).max() == 0.0


def test_d_second_order_periodic_1d():
    errs = []
    for N in (16, 32, 64):
        g = M.Grid.make(N, 1.0, True)
        x = g.coords(0)
        df = M.exterior_d(M.ScalarForm.function(g, np.sin(TP * x)))
        errs.append(np.abs(df.data[0] - TP * np.cos(TP * x)).max())
    assert convergence_order(errs).min() >= 1.9


def test_d_second_order_bounded():
    errs = []
    for N in (16, 32, 64):
        g = M.Grid.make(N, 1.0, False)
        x = g.coords(0)
        df = M.exterior_d(M.ScalarForm.function(g, np.exp(x)))
        errs.append(np.abs(df.data[0] - np.exp(x)).max())
    assert convergence_order(errs).min() >= 1.9


@pytest.mark.parametrize("n", [2, 3])
def test_dd_zero_periodic(n):
    g = M.Grid.make((16,) * n, 1.0, True)
    for k in range(n - 1):
        a = smooth_form(g, k, seed=k)
        assert np.abs(M.exterior_d(M.exterior_d(a)).data).max() <= 1e-13 * np.abs(a.data).max() * 16 ** 2


def test_dd_zero_on_bounded_grids():
    # per-axis stencils commute, one-sided end rows included
    for N in (16, 32, 64):
        g = M.Grid.make((N, N), 1.0, False)
        assert np.abs(M.exterior_d(M.exterior_d(smooth_form(g, 0))).data).max() <= 1e-12 * N ** 2


def test_d_of_top_form_rejected():
    g = M.Grid.make((4, 4), 1.0, True)
    with pytest.raises(RejectedInput):
        M.exterior_d(M.ScalarForm.zeros(g, 2))


def test_sbp_summation_by_parts_exact(rng):
    g = M.Grid.make(12, 1.3, False)
    u, v = rng.normal(size=(2,) + g.shape)
    w = g.weights
    lhs = np.sum(w * (u * g.d(v, 0, sbp=True) + v * g.d(u, 0, sbp=True)))
    assert abs(lhs - (u[-1] * v[-1] - u[0] * v[0])) <= 1e-13


def test_lift_is_boundary_operator(rng):
    g = M.Grid.make(10, 1.0, False)
    f, u = rng.normal(size=(2,) + g.shape)
    L = g.lift(f, 0)
    assert np.all(L[1:-1] == 0)
    assert np.sum(g.weights * u * L) == pytest.approx(u[-1] * f[-1] - u[0] * f[0], abs=1e-13)
    assert np.all(g.lift(f, 0, side=0)[-1] == 0)
    assert np.all(M.Grid.make(10, 1.0, True).lift(f[:-1], 0) == 0)


def test_boundary_lift_weak_traction_balance(rng):
    g = M.Grid.make((8, 8), 1.0, False)
    T = M.BundleForm(g, 1, "covector", rng.normal(size=(2, 2) + g.shape))
    L = M.boundary_lift(T, (0, 1))
    assert L.degree == 2 and L.kind == "covector"
    inner = L.data[:, 0, :-1]
    assert np.all(inner == 0)
    with pytest.raises(RejectedInput):
        M.boundary_lift(M.BundleForm.zeros(g, 0, "covector"), (0, 0))


def test_covariant_d_flat_constant_is_zero():
    g = M.Grid.make((8, 8), 1.0, False)
    u = M.BundleForm.field(g, np.ones((2,) + g.shape))
    assert np.abs(M.covariant_derivative(u).data).max() == 0.0


def test_covariant_d_1d_matches_christoffel_oracle():
    errs = []
    for N in (16, 32, 64):
        g = M.Grid.make(N, 1.0, True)
        x = g.coords(0)
        gm = 1.0 + 0.3 * np.sin(TP * x)
        u = np.cos(TP * x) + 0.2
        met = M.MetricField(g, gm[:, None, None])
        out = M.covariant_derivative(M.BundleForm.field(g, u[None]), met).data[0, 0]
        gamma = 0.5 * (0.3 * TP * np.cos(TP * x)) / gm
        exact = -TP * np.sin(TP * x) + gamma * u
        errs.append(np.abs(out - exact).max())
    assert convergence_order(errs).min() >= 1.9


def test_covariant_d_metric_grid_mismatch():
    g1 = M.Grid.make(8, 1.0, True)
    g2 = M.Grid.make(16, 1.0, True)
    with pytest.raises(RejectedInput):
        M.covariant_derivative(M.BundleForm.zeros(g1, 0, "vector"), M.MetricField.euclidean(g2))


def _ibp_residual(N):
    g = M.Grid.make((N, N), 1.0, False)
    X, Y = g.mesh()
    gh = np.zeros(g.shape + (2, 2))
    gh[..., 0, 0] = 1 + 0.2 * X * Y
    gh[..., 1, 1] = 1 + 0.1 * np.sin(X)
    gh[..., 0, 1] = gh[..., 1, 0] = 0.1 * np.cos(Y)
    met = M.MetricField(g, gh)
    v = M.BundleForm.field(g, np.stack([np.sin(2 * X) * np.cos(Y), X * Y ** 2]))
    T = M.BundleForm(g, 1, "covector", np.stack([np.stack([np.cos(X + Y), X * Y]),
                                                 np.stack([np.exp(X) * Y, np.sin(X * Y)])]))
    lhs = M.integrate(M.wedge_dot(M.covariant_derivative(v, met), T)) \
        + M.integrate(M.wedge_dot(v, M.exterior_covariant_d(T, met)))
    return abs(lhs - M.boundary_integral(M.wedge_dot(v, T)))


def test_integration_by_parts_second_order():
    errs = [_ibp_residual(N) for N in (16, 32, 64)]
    assert convergence_order(errs).min() >= 1.9


def test_hodge_c_examples(rng):
    g = M.Grid.make((6, 6), 1.0, True)
    mass = M.MassForm.from_density(g, 1.0)
    zero = M.BundleForm.zeros(g, 0, "vector")
    assert np.all(M.hodge_c(zero, mass=mass).data == 0)
    e1 = np.zeros((2,) + g.shape)
    e1[0] = 1.0
    out = M.hodge_c(M.BundleForm.field(g, e1), mass=mass)
    assert out.degree == 2 and out.kind == "covector"
    np.testing.assert_array_equal(out.values[0], 1.0)
    np.testing.assert_array_equal(out.values[1], 0.0)


@pytest.mark.parametrize("n,k", [(1, 0), (1, 1), (2, 0), (2, 1), (2, 2), (3, 1), (3, 2)])
def test_hodge_c_round_trip(n, k, rng):
    g = M.Grid.make((5,) * n, 1.0, True)
    met = M.MetricField(g, random_spd(rng, n, g.shape))
    mass = M.MassForm.from_density(g, 1 + rng.random(g.shape))
    phi = M.BundleForm(g, k, "vector", rng.normal(size=(n, len(M.combos(n, k))) + g.shape))
    back = M.hodge_c_inv(M.hodge_c(phi, met, mass), met, mass)
    assert np.abs(back.data - phi.data).max() <= 1e-13 * np.abs(phi.data).max()
    s = M.ScalarForm(g, k, rng.normal(size=(len(M.combos(n, k)),) + g.shape))
    back = M.hodge_inv(M.hodge(s, met), met)
    assert np.abs(back.data - s.data).max() <= 1e-13 * np.abs(s.data).max()


@pytest.mark.parametrize("k", [0, 1, 2])
def test_hodge_c_nonnegative_in_2d(k, rng):
    g = M.Grid.make((5, 5), 1.0, True)
    met = M.MetricField(g, random_spd(rng, 2, g.shape))
    phi = M.BundleForm(g, k, "vector", rng.normal(size=(2, len(M.combos(2, k))) + g.shape))
    assert np.all(M.wedge_dot(phi, M.hodge_c(phi, met)).data >= 0)


def test_kinetic_integrand_quadrature(rng):
    g = M.Grid.make((8, 8), 1.0, True)
    gm = random_spd(rng, 2, g.shape)
    met = M.MetricField(g, gm)
    rho = 1 + rng.random(g.shape)
    v = rng.normal(size=(2,) + g.shape)
    vv = M.BundleForm.field(g, v)
    lhs = M.integrate(M.wedge_dot(vv, M.hodge_c(vv, met, M.MassForm.from_density(g, rho))))
    ref = np.sum(np.einsum("i...,...ij,j...->...", v, gm, v) * rho) / 64
    assert lhs == pytest.approx(ref, rel=1e-13)


def test_non_positive_mass_rejected():
    g = M.Grid.make((4, 4), 1.0, True)
    with pytest.raises(RejectedInput):
        M.MassForm.from_density(g, 0.0)
    with pytest.raises(RejectedInput):
        M.hodge_c(M.BundleForm.zeros(g, 0, "vector"), mass=np.zeros(g.shape))


def test_wedge_examples(rng):
    g = M.Grid.make((5, 5), 1.0, True)
    f = rng.normal(size=g.shape)
    mu = 1 + rng.random(g.shape)
    out = M.wedge(M.ScalarForm.function(g, f), M.ScalarForm.top(g, mu))
    np.testing.assert_allclose(out.data[0], f * mu)
    v = rng.normal(size=(2,) + g.shape)
    Mf = M.BundleForm.top(g, v * mu, "covector")
    np.testing.assert_allclose(M.wedge_dot(M.BundleForm.field(g, v), Mf).data[0], (v * v).sum(0) * mu)
    with pytest.raises(RejectedInput):
        M.wedge_dot(M.BundleForm.field(g, v), M.BundleForm.field(g, v))


def test_wedge_bilinear_and_graded(rng):
    g = M.Grid.make((4, 4, 4), 1.0, True)
    a = M.ScalarForm(g, 1, rng.normal(size=(3,) + g.shape))
    b = M.ScalarForm(g, 1, rng.normal(size=(3,) + g.shape))
    c = M.ScalarForm(g, 2, rng.normal(size=(3,) + g.shape))
    np.testing.assert_allclose(M.wedge(a, b).data, -M.wedge(b, a).data)
    np.testing.assert_allclose(M.wedge(a, c).data, M.wedge(c, a).data)
    lhs = M.wedge(2 * a + b, c).data
    np.testing.assert_allclose(lhs, 2 * M.wedge(a, c).data + M.wedge(b, c).data, atol=1e-13)
    # two-loop oracle for a 1-form ^ 1-form in 3D: (a^b)_{ij} = a_i b_j - a_j b_i
    ref = [a.data[i] * b.data[j] - a.data[j] * b.data[i] for i, j in ((0, 1), (0, 2), (1, 2))]
    np.testing.assert_allclose(M.wedge(a, b).data, ref, atol=1e-13)


def test_interior_properties(rng):
    g = M.Grid.make((4, 4, 4), 1.0, True)
    u = rng.normal(size=(3,) + g.shape)
    for k in (2, 3):
        a = M.ScalarForm(g, k, rng.normal(size=(len(M.combos(3, k)),) + g.shape))
        assert np.abs(M.interior(u, M.interior(u, a)).data).max() <= 1e-13
        assert np.all(M.interior(np.zeros_like(u), a).data == 0)
        assert np.all(M.lie_derivative(np.zeros_like(u), a).data == 0)
    with pytest.raises(RejectedInput):
        M.interior(u, M.ScalarForm.zeros(g, 0))


def test_lie_transport_1d():
    errs = []
    for N in (16, 32, 64):
        g = M.Grid.make(N, 1.0, True)
        x = g.coords(0)
        rho = 1 + 0.5 * np.sin(TP * x)
        c = 0.7
        out = M.lie_derivative(np.full((1, N), c), M.ScalarForm.top(g, rho))
        errs.append(np.abs(out.data[0] - c * 0.5 * TP * np.cos(TP * x)).max())
    assert convergence_order(errs).min() >= 1.9


def test_lie_momentum_identity_matches_product_rule():
    # on a flat metric the two assemblies coincide up to roundoff
    for N in (16, 32, 64):
        g = M.Grid.make((N, N), 1.0, True)
        X, Y = g.mesh()
        u = np.stack([np.sin(TP * Y) + 0.3, np.cos(TP * X)])
        rho = 1 + 0.3 * np.sin(TP * X) * np.cos(TP * Y)
        v = np.stack([np.cos(TP * (X + Y)), np.sin(TP * X)])
        Mf = M.BundleForm.top(g, rho * v, "covector")
        a = M.lie_derivative_momentum(u, Mf, M.MassForm.from_density(g, rho), scheme="identity")
        b = M.lie_derivative_momentum(u, Mf, scheme="product")
        assert np.abs(a.data - b.data).max() <= 1e-12 * N


def test_lie_momentum_identity_curved_metric():
    # the Lie derivative is metric free: connection terms cancel node by node
    for N in (16, 32, 64):
        g = M.Grid.make((N, N), 1.0, True)
        X, Y = g.mesh()
        gh = np.zeros(g.shape + (2, 2))
        gh[..., 0, 0] = 1 + 0.2 * np.sin(TP * X)
        gh[..., 1, 1] = 1 + 0.1 * np.cos(TP * Y)
        gh[..., 0, 1] = gh[..., 1, 0] = 0.1 * np.sin(TP * (X + Y))
        met = M.MetricField(g, gh)
        u = np.stack([np.sin(TP * Y) + 0.3, np.cos(TP * X)])
        rho = 1 + 0.3 * np.sin(TP * X) * np.cos(TP * Y)
        vflat = np.stack([np.cos(TP * (X + Y)), np.sin(TP * X)])
        Mf = M.BundleForm.top(g, rho * vflat, "covector")
        a = M.lie_derivative_momentum(u, Mf, M.MassForm.from_density(g, rho), met, scheme="identity")
        b = M.lie_derivative_momentum(u, Mf, scheme="product")
        assert np.abs(a.data - b.data).max() <= 1e-12 * N


def test_integrate_examples(rng):
    g = M.Grid.make((8, 8), 1.0, True)
    assert M.integrate(M.ScalarForm.top(g, np.ones(g.shape))) == pytest.approx(1.0, abs=1e-15)
    beta = M.ScalarForm(g, 1, rng.normal(size=(2,) + g.shape))
    assert abs(M.integrate(M.exterior_d(beta))) <= 1e-12
    with pytest.raises(RejectedInput):
        M.integrate(beta)


def test_discrete_stokes_bounded_second_order():
    errs = []
    for N in (32, 64, 128):
        g = M.Grid.make((N, N), 1.0, False)
        X, Y = g.mesh()
        beta = M.ScalarForm(g, 1, np.stack([np.exp(X) * np.cos(Y), np.sin(X * Y) + X ** 3]))
        errs.append(abs(M.integrate(M.exterior_d(beta)) - M.boundary_integral(beta)))
    assert convergence_order(errs).min() >= 1.9


def test_discrete_stokes_exact_with_sbp(rng):
    g = M.Grid.make((9, 7), 1.0, False)
    beta = M.ScalarForm(g, 1, rng.normal(size=(2,) + g.shape))
    assert abs(M.integrate(M.exterior_d(beta, sbp=True)) - M.boundary_integral(beta)) <= 1e-12


def test_boundary_trace_keeps_tangential_components(rng):
    g = M.Grid.make((4, 5), 1.0, False)
    beta = M.ScalarForm(g, 1, rng.normal(size=(2,) + g.shape))
    tr = M.boundary_trace(beta, (0, 1))
    np.testing.assert_array_equal(tr, beta.data[1:2, -1])
    periodic = M.ScalarForm(M.Grid.make(4, 1.0, True), 0, np.zeros((1, 4)))
    with pytest.raises(RejectedInput):
        M.boundary_trace(periodic, (0, 0))


@given(st.floats(-0.5, 1.5), st.floats(0.0, 1.0))
def test_interpolate_linear_exact(x, y):
    g = M.Grid.make((4, 4), (2.0, 1.0), (True, False))
    X, Y = g.mesh()
    f = 2 * Y + 1
    out = M.interpolate(g, f, np.array([[x], [y]]))
    assert out[0] == pytest.approx(2 * y + 1, abs=1e-12)


def test_interpolate_rejects_outside():
    g = M.Grid.make(4, 1.0, False)
    with pytest.raises(RejectedInput):
        M.interpolate(g, np.zeros(5), np.array([[1.5]]))


def test_form_csv_round_trip(tmp_path, rng):
    g = M.Grid.make((4, 5), 1.0, (True, False), boundary={(1, 0): M.VELOCITY})
    forms = [M.BundleForm(g, 1, "covector", rng.normal(size=(2, 2) + g.shape)),
             M.MassForm.from_density(g, 1 + rng.random(g.shape)),
             M.ScalarForm.function(g, rng.normal(size=g.shape))]
    for i, f in enumerate(forms):
        p = tmp_path / f"f{i}.csv"
        M.write_form_csv(p, f, name="x", t=0.5)
        back, header = M.read_form_csv(p)
        assert type(back) is type(f)
        assert back.grid == f.grid
        np.testing.assert_array_equal(back.data, f.data)
        assert header["t"] == "0.5"
