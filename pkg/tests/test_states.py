import numpy as np
import pytest
from hypothesis import given, strategies as st

import cases
from phcm import kinetic as K
from phcm import states as S
from phcm.errors import FoldOverError, RejectedInput
from phcm.mesh import BundleForm, Grid, MassForm, integrate, interpolate

TP = 2 * np.pi


def material(grid, u, rho, vt):
    p = S.Params(MassForm.from_density(grid, rho))
    return S.MaterialState(u, BundleForm.top(grid, rho * vt, "covector")), p


def smooth_2d(N):
    g = Grid.make((N, N), 1.0, True)
    X = g.points()
    u = 0.05 * np.stack([np.sin(TP * X[1]), np.cos(TP * X[0])])
    rho = 1 + 0.2 * np.sin(TP * X[0])
    vt = np.stack([np.cos(TP * X[1]), np.ones_like(X[0])])
    return g, material(g, u, rho, vt)


def test_identity_map_to_spatial(rng):
    g = Grid.make((8, 8), 1.0, True)
    rho = 1 + rng.random(g.shape)
    m, p = material(g, np.zeros((2,) + g.shape), rho, rng.normal(size=(2,) + g.shape))
    s = S.to_spatial(m, p)
    np.testing.assert_allclose(s.mu.data, p.mass.data, atol=1e-12)
    np.testing.assert_allclose(s.M.data, m.M.data, atol=1e-12)


def test_identity_map_to_spatial_1d_conservative_remap():
    # 1D transfers cell masses, so the identity is recovered to O(h^2) with exact total mass
    errs = []
    for N in (32, 64, 128):
        g = Grid.make(N, 1.0, True)
        rho = 1 + 0.3 * np.sin(TP * g.coords(0))
        m, p = material(g, np.zeros((1,) + g.shape), rho, np.ones((1,) + g.shape))
        s = S.to_spatial(m, p)
        assert abs(integrate(s.mu) - integrate(p.mass)) <= 1e-13
        errs.append(np.abs(s.mu.data - p.mass.data).max())
    assert cases.orders(errs).min() >= 1.9


def test_stretch_halves_density():
    g = Grid.make(8, 1.0)
    X = g.points()
    m, p = material(g, X.copy(), np.ones(g.shape), np.zeros((1,) + g.shape))
    s = S.to_spatial(m, p)
    assert s.grid.lengths == (2.0,)
    np.testing.assert_allclose(s.mu.data, 0.5, atol=1e-14)


@given(st.integers(0, 2**32 - 1), st.booleans())
def test_spatial_mass_conserved_1d(seed, periodic):
    rng = np.random.default_rng(seed)
    g = Grid.make(48, 1.0, periodic)
    X = g.points()
    a, b = 0.04 * rng.random(2)
    u = a * np.sin(TP * X) + b * np.cos(2 * TP * X) + (0 if periodic else 0.3 * rng.random() * X)
    rho = 1 + 0.4 * rng.random() * np.cos(TP * X[0])
    m, p = material(g, u, rho, np.zeros((1,) + g.shape))
    s = S.to_spatial(m, p)
    assert abs(integrate(s.mu) - integrate(p.mass)) <= 1e-10


def test_round_trip_second_order():
    errs = []
    for N in (32, 64, 128):
        g, (m, p) = smooth_2d(N)
        back = S.from_spatial(S.to_spatial(m, p), m.u, p)
        errs.append(np.abs(back.M.values - m.M.values).max())
    assert cases.orders(errs).min() >= 1.9


def test_to_convective_examples():
    g = Grid.make(8, 1.0)
    X = g.points()
    m, p = material(g, np.zeros((1,) + g.shape), np.ones(g.shape), np.ones((1,) + g.shape))
    np.testing.assert_allclose(S.to_convective(m, p).ghat.g, 1.0)
    m, p = material(g, X.copy(), np.ones(g.shape), np.ones((1,) + g.shape))
    c = S.to_convective(m, p)
    np.testing.assert_allclose(c.ghat.g, 4.0, atol=1e-13)
    np.testing.assert_allclose(c.M.values, 2.0, atol=1e-13)


def test_convective_round_trip(rng):
    g, (m, p) = smooth_2d(16)
    back = S.from_convective(S.to_convective(m, p), m.u, p)
    np.testing.assert_allclose(back.M.data, m.M.data, atol=1e-13)


def test_kinetic_energy_invariant_material_convective():
    g, (m, p) = smooth_2d(24)
    Hm = K.kinetic_energy(m, p)
    Hc = K.kinetic_energy(S.to_convective(m, p), p)
    assert abs(Hm - Hc) <= 1e-10 * Hm


def test_kinetic_energy_spatial_within_quadrature():
    errs = []
    for N in (32, 64, 128):
        g, (m, p) = smooth_2d(N)
        errs.append(abs(K.kinetic_energy(S.to_spatial(m, p), p) - K.kinetic_energy(m, p)))
    assert errs[-1] <= 1e-3 and cases.orders(errs).min() >= 1.5


def test_velocity_representations_identity_and_translation(rng):
    g = Grid.make((8, 8), 1.0, True)
    vt = rng.normal(size=(2,) + g.shape)
    m, p = material(g, np.zeros((2,) + g.shape), np.ones(g.shape), vt)
    a, b, c = S.velocity_representations(m, p)
    np.testing.assert_allclose(a, vt)
    np.testing.assert_allclose(b, vt, atol=1e-12)
    np.testing.assert_allclose(c, vt, atol=1e-12)
    X = g.points()
    u = 0.05 * np.stack([np.sin(TP * X[1]), np.cos(TP * X[0])])
    const = np.ones((2,) + g.shape) * np.array([0.3, -0.2])[:, None, None]
    m, p = material(g, u, np.ones(g.shape), const)
    a, b, c = S.velocity_representations(m, p)
    np.testing.assert_allclose(b, const, atol=1e-12)
    F, _ = S.deformation_gradient(u, g)
    np.testing.assert_allclose(c, np.einsum("...ij,j...->i...", np.linalg.inv(F), const), atol=1e-13)


def test_density_relation_affine_exact(rng):
    g = Grid.make((8, 8), 1.0, False)
    X = g.points()
    s_ = 1 + 0.5 * rng.random(2)
    u = (s_[:, None, None] - 1) * X
    rho = 1 + 0.3 * rng.random(g.shape)
    m, p = material(g, u, rho, np.zeros((2,) + g.shape))
    s = S.to_spatial(m, p)
    _, J = S.deformation_gradient(u, g)
    back = interpolate(s.grid, s.mu.data[0], X + u)
    assert np.abs(J * back - rho).max() <= 1e-10


def test_density_relation_smooth_second_order():
    errs = []
    for N in (32, 64, 128):
        g, (m, p) = smooth_2d(N)
        s = S.to_spatial(m, p)
        _, J = S.deformation_gradient(m.u, g)
        errs.append(np.abs(J * interpolate(s.grid, s.mu.data[0], g.points() + m.u) - p.rho).max())
    assert cases.orders(errs).min() >= 1.9


def test_fold_over_rejected():
    g = Grid.make(8, 1.0, True)
    X = g.points()
    u = -np.sin(TP * X) / np.pi
    with pytest.raises(FoldOverError) as exc:
        S.deformation_gradient(u, g)
    assert exc.value.node is not None
    with pytest.raises(FoldOverError):
        S.to_convective(S.MaterialState(u, BundleForm.zeros(g, 1, "covector")),
                        S.Params(MassForm.from_density(g, 1.0)))


def test_params_validation():
    g = Grid.make((4, 4), 1.0, True)
    with pytest.raises(RejectedInput):
        S.Params(MassForm.from_density(g, 1.0), g=np.eye(3))
    with pytest.raises(RejectedInput):
        S.MaterialState(np.zeros((1, 4, 4)), BundleForm.zeros(g, 2, "covector"))


def test_reconstruct_zero_and_uniform():
    g = Grid.make(16, 1.0, True)
    X = g.points()
    hist = S.reconstruct_configuration(lambda t: np.zeros_like(X), g, 0.1, 5, X.copy(), sgrid=g)
    np.testing.assert_array_equal(hist[-1], X)
    hist = S.reconstruct_configuration(lambda t: np.full_like(X, 0.3), g, 0.1, 10, X.copy(), sgrid=g)
    np.testing.assert_allclose(hist[-1], X - 0.3, atol=1e-13)


def test_reconstruct_linear_field_fourth_order():
    g = Grid.make(16, 1.0)
    X = g.points()
    errs = []
    for dt in (0.1, 0.05, 0.025):
        hist = S.reconstruct_configuration(lambda t: 0.5 * X, g, dt, int(round(1 / dt)), X.copy(), sgrid=g)
        errs.append(np.abs(hist[-1] - X * np.exp(-0.5)).max())
    assert cases.orders(errs).min() >= 3.8


def test_reconstruct_from_samples_matches_callable():
    g = Grid.make(16, 1.0, True)
    X = g.points()
    samples = [np.full_like(X, 0.2)] * 6
    a = S.reconstruct_configuration(samples, g, 0.1, 5, X.copy())
    b = S.reconstruct_configuration(lambda t: np.full_like(X, 0.2), g, 0.1, 5, X.copy())
    np.testing.assert_allclose(a, b, atol=1e-15)
    with pytest.raises(RejectedInput):
        S.reconstruct_configuration(samples[:3], g, 0.1, 5, X.copy())


def test_reconstruct_fold_over_reports_step():
    g = Grid.make(16, 1.0, True)
    X = g.points()
    with pytest.raises(FoldOverError) as exc:
        S.reconstruct_configuration(lambda t: 5 * np.sin(TP * X), g, 0.5, 4, X.copy(), sgrid=g)
    assert exc.value.step == 1


def test_spatial_duality_periodic_second_order():
    r = [cases.spatial_duality_2d(N) for N in (16, 32, 64)]
    assert cases.orders(r).min() >= 1.9


def test_spatial_duality_bounded_stated_boundary_term_does_not_converge():
    # the face term as stated leaves an O(1) residual on bounded 2D grids
    r = [cases.spatial_duality_2d(N, periodic=False, boundary="stated") for N in (16, 32, 64)]
    assert min(abs(x) for x in r) > 1.0


def test_spatial_duality_bounded_derived_boundary_term():
    r = [cases.spatial_duality_2d(N, periodic=False, boundary="derived") for N in (64, 128, 256)]
    assert cases.orders(r).min() >= 1.9


def test_convective_duality_second_order():
    for periodic in (True, False):
        r = [cases.convective_duality_2d(N, periodic) for N in (16, 32, 64)]
        assert cases.orders(r).min() >= 1.9


def test_convective_push_matches_finite_difference():
    g, (m, p) = smooth_2d(32)
    X = g.points()
    c = S.to_convective(m, p)
    du = np.stack([np.sin(TP * (X[0] - X[1])), np.cos(TP * X[0])])
    dM = BundleForm.top(g, np.stack([np.cos(TP * X[0]), np.sin(TP * X[1])]), "covector")
    dg_fd, dM_fd = S.convective_push_fd(m, p, du, dM)
    F, _ = S.deformation_gradient(m.u, g)
    dphih = np.einsum("...ij,j...->i...", np.linalg.inv(F), du)
    pulled = BundleForm.top(g, np.einsum("...ji,j...->i...", F, dM.values), "covector")
    dg, dMh = S.convective_push(c, p, dphih, pulled)
    # the analytic push uses centered differences of the variation: O(h^2)
    assert np.abs(dg - dg_fd).max() <= 0.1
    assert np.abs(dMh.data - dM_fd.data).max() <= 0.1


def test_write_state(tmp_path):
    g, (m, p) = smooth_2d(8)
    paths = S.write_state(tmp_path, m, t=0.0)
    assert [p_.rsplit("/", 1)[1] for p_ in paths] == ["u.csv", "M_material.csv"]
    paths = S.write_state(tmp_path, S.to_convective(m, p), prefix="c_")
    assert len(paths) == 2
    with pytest.raises(RejectedInput):
        S.write_state(tmp_path, object())
