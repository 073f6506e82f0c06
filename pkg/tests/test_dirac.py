import warnings

import numpy as np
import pytest

from phcm import dirac, mesh
from phcm.constitutive import HyperelasticModel
from phcm.errors import RejectedInput
from phcm.mesh import VELOCITY, BundleForm, Grid, MassForm, MetricField
from phcm.states import MaterialState, Params

from test_stress import curved_case


def skew_block(name="skew", J=None):
    """Toy block ``f = J e`` with skew ``J``: power ``e . f`` vanishes."""
    J = np.array([[0.0, 2.0], [-2.0, 0.0]]) if J is None else J

    def bal(ins, outs, ctx):
        p = float(ins["e"] @ outs["f"])
        return p, {"e.f": p, "scale": float(ins["e"] @ ins["e"])}

    return dirac.DiracBlock(name, {"e": "vec"}, {"f": dirac.Output("vec", ("e",), lambda i, c: J @ i["e"])}, bal)


def source_block(name="src", value=(1.0, -0.5)):
    return dirac.DiracBlock(name, {"x": "vec"},
                            {"y": dirac.Output("vec", (), lambda i, c: np.array(value))})


def test_zero_efforts_zero_flows():
    out, audit = dirac.evaluate_block(skew_block(), {"e": np.zeros(2)})
    assert np.all(out["f"] == 0) and audit.aggregate == 0.0


def test_single_block_network_matches_block():
    b = skew_block()
    e = np.array([0.3, -1.2])
    out, a1 = dirac.evaluate_block(b, {"e": e})
    vals, a2 = dirac.compose([b], [], external=["skew.e"]).evaluate({"skew.e": e})
    np.testing.assert_array_equal(vals["skew.f"], out["f"])
    assert a1.report() == a2.report()


def test_mutual_feed_without_self_dependence():
    # src.y needs no input, so src <-> skew is not a cycle
    net = dirac.compose([source_block(), skew_block()], [("src.y", "skew.e"), ("skew.f", "src.x")])
    vals, audit = net.evaluate()
    np.testing.assert_allclose(vals["src.x"], [-1.0, -2.0])
    assert audit.aggregate <= 1e-15


def test_dependency_cycle_rejected():
    with pytest.raises(RejectedInput, match="cycle"):
        dirac.compose([skew_block("a"), skew_block("b")], [("a.f", "b.e"), ("b.f", "a.e")])


@pytest.mark.parametrize("wiring, external, msg", [
    ([], [], "dangling"),
    ([("skew.g", "src.x")], ["skew.e"], "unknown output"),
    ([("skew.f", "src.z")], ["skew.e"], "unknown input"),
    ([("skew.f", "src.x")], ["skew.e", "src.x"], "both wired and external"),
    ([("skew.f", "src.x")], ["skew.q"], "unknown external"),
])
def test_bad_wiring_rejected(wiring, external, msg):
    with pytest.raises(RejectedInput, match=msg):
        dirac.compose([skew_block(), source_block()], wiring, external)


def test_kind_mismatch_and_duplicates_rejected():
    other = dirac.DiracBlock("o", {}, {"y": dirac.Output("covector-1", (), lambda i, c: 0)})
    with pytest.raises(RejectedInput, match="mismatch"):
        dirac.compose([other, skew_block()], [("o.y", "skew.e")])
    with pytest.raises(RejectedInput, match="duplicate"):
        dirac.compose([skew_block(), skew_block()], [])
    with pytest.raises(RejectedInput, match="more than one source"):
        dirac.compose([source_block("s1"), source_block("s2"), skew_block()],
                      [("s1.y", "skew.e"), ("s2.y", "skew.e"), ("skew.f", "s1.x"), ("skew.f", "s2.x")])


def test_missing_inputs_and_state_rejected():
    with pytest.raises(RejectedInput, match="missing input"):
        dirac.evaluate_block(skew_block(), {})
    net = dirac.compose([skew_block()], [], external=["skew.e"])
    with pytest.raises(RejectedInput, match="missing external"):
        net.evaluate({})
    b = dirac.DiracBlock("m", {}, {"y": dirac.Output("vec", (), lambda i, c: c["state"])}, modulated=True)
    with pytest.raises(RejectedInput, match="no state"):
        dirac.evaluate_block(b, {})


def test_violated_balance_is_flagged():
    J = np.array([[1.0, 2.0], [-2.0, 0.0]])  # not skew
    with pytest.warns(RuntimeWarning, match="power balance of block skew"):
        _, audit = dirac.evaluate_block(skew_block(J=J), {"e": np.array([1.0, 0.0])})
    rep = dirac.audit_power(audit)
    assert rep["flagged"] == ["skew"]
    assert rep["blocks"][0]["residual"] == 1.0 and rep["by_class"]["algebraic"] == 1.0


def test_mesh_threshold_scales_with_h():
    b = dirac.DiracBlock("b", {}, {}, tolerance=dirac.MESH, h=0.1)
    assert b.threshold(1.0) == pytest.approx(50 * 0.01)
    assert b.threshold(4.0) == pytest.approx(4 * 50 * 0.01)
    assert skew_block().threshold(0.5) == dirac.ALGEBRAIC_TOL


def test_power_port_pairing():
    g = Grid.make((8, 8), 1.0, True)
    rng = np.random.default_rng(0)
    f = BundleForm(g, 1, "vector", rng.normal(size=(2, 2) + g.shape))
    e = BundleForm(g, 1, "covector", rng.normal(size=(2, 2) + g.shape))
    port = dirac.PowerPort("p", f, e)
    assert port.pairing() == pytest.approx(mesh.integrate(mesh.wedge_dot(f, e)), abs=1e-14)
    with pytest.raises(RejectedInput, match="not dual"):
        dirac.PowerPort("q", f, f)


@pytest.mark.parametrize("n, N", [(1, 1000), (2, 32), (3, 10)])
def test_port_splits_are_algebraic(n, N):
    g = Grid.make((N,) * n, 1.0, True)
    rng = np.random.default_rng(n)
    A = rng.normal(size=g.shape + (n, n))
    gm = A @ np.swapaxes(A, -1, -2) + np.eye(n)
    grad = BundleForm(g, 1, "vector", rng.normal(size=(n, n) + g.shape))
    T = BundleForm(g, n - 1, "covector", rng.normal(size=(n, n) + g.shape))
    net = dirac.compose([dirac.sym_asym_block(g, lambda s: MetricField(g, gm)), dirac.vol_dev_block(g)],
                        [("sym_asym.eps", "vol_dev.eps"), ("sym_asym.Y_sym", "vol_dev.Y_sym")],
                        external=["sym_asym.grad", "sym_asym.T"])
    vals, audit = net.evaluate({"sym_asym.grad": grad, "sym_asym.T": T}, state=object())
    assert not audit.report()["flagged"]
    for e in audit.entries:
        assert abs(e.residual) <= 1e-12 * max(1.0, max(abs(v) for v in e.terms.values()))
    np.testing.assert_allclose(vals["sym_asym.eps"] + vals["sym_asym.w"], mesh.bundle_to_fiber(grad), atol=1e-12)


def _stokes_residual(N):
    g, metric, v, T = curved_case(N)
    b = dirac.stokes_dirac_block(g, lambda s: metric)
    _, audit = dirac.evaluate_block(b, {"v": v, "T": T}, state=object())
    return audit.entries[0].residual


def test_stokes_block_balance_converges():
    r = np.abs([_stokes_residual(N) for N in (16, 32, 64)])
    assert np.all(np.log2(r[:-1] / r[1:]) >= 1.9)


def test_stokes_block_sbp_is_algebraic():
    g, metric, v, T = curved_case(24)
    b = dirac.stokes_dirac_block(g, lambda s: metric, sbp=True)
    assert b.tolerance == dirac.ALGEBRAIC
    _, audit = dirac.evaluate_block(b, {"v": v, "T": T}, state=object())
    e = audit.entries[0]
    assert abs(e.residual) <= 1e-12 * max(1.0, abs(e.terms["interior"]))


def test_stokes_block_input_checks():
    g = Grid.make((8, 8), 1.0, False, boundary={(0, 0): VELOCITY})
    with pytest.raises(RejectedInput, match="not a velocity face"):
        dirac.stokes_dirac_block(g, velocity_in={(1, 0): np.zeros(2)})
    with pytest.raises(RejectedInput, match="not a traction face"):
        dirac.stokes_dirac_block(g, traction_in={(0, 0): np.zeros(1)})
    with pytest.raises(RejectedInput, match="summation-by-parts"):
        dirac.stokes_dirac_block(g, traction_mode="weak")


def test_kinetic_and_hyperelastic_blocks_at_rest():
    g = Grid.make((12,), 1.0, True)
    p = Params(MassForm.from_density(g, np.ones(g.shape)), np.eye(1))
    s = MaterialState(np.zeros((1,) + g.shape), BundleForm.zeros(g, 1, "covector"))
    kb = dirac.kinetic_block(p, "material")
    hb = dirac.hyperelastic_block(p, HyperelasticModel("hencky-finite", kappa=1.0, theta=1.0), "material")
    st = dirac.stokes_dirac_block(g)
    net = dirac.compose([kb, hb, st], [("kinetic.v", "stokes.v"), ("stokes.e_d", "kinetic.force"),
                                       ("constitutive.T", "stokes.T")])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        vals, audit = net.evaluate(state=s)
    assert np.abs(vals["constitutive.T"].data).max() <= 1e-12
    assert np.abs(vals["kinetic.rates"]["M"].data).max() <= 1e-12
    assert audit.aggregate <= 1e-12
    assert {e.block for e in audit.entries} == {"kinetic", "stokes"}
