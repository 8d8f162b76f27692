import numpy as np
import pytest
from hypothesis import given, strategies as st

from qld.constitutive import SurfaceEnergyModel
from qld.errors import NoRealRoot, OffsetOutsideDomain, SelfIntersection
from qld.interface import (InterfaceCurve, bilinear, circle_radius, coherence_residual, dissipation,
                           evolve_interface, interfacial_residuals, normal_speed, sample_jumps, stable_dt)
from qld.kinematics import FieldState, Grid
from qld.suites import circle_flow, planar_two_phase, two_phase_models, traction_matched_jump


def test_circle_geometry():
    c = InterfaceCurve.circle((0.3, -0.1), 0.8, 64)
    np.testing.assert_allclose(c.curvature(), -1 / 0.8, rtol=1e-12)
    m = c.normal()[:, :2]
    radial = (c.points - [0.3, -0.1]) / 0.8
    np.testing.assert_allclose(np.sum(m * radial, axis=1), 1.0, rtol=1e-12)
    assert c.perimeter() == pytest.approx(2 * np.pi * 0.8, rel=1e-3)
    assert circle_radius(c) == pytest.approx(0.8)


def test_line_geometry():
    c = InterfaceCurve.line((0.5, 0.2), (0.5, 0.8), 7)
    np.testing.assert_allclose(c.curvature(), 0.0, atol=1e-14)
    np.testing.assert_allclose(c.normal(), np.tile([1.0, 0.0, 0.0], (7, 1)))
    np.testing.assert_allclose(c.surface_derivative(c.points[:, 1]), 1.0, rtol=1e-12)


def test_curve_validation():
    with pytest.raises(ValueError):
        InterfaceCurve.circle((0, 0), 1.0, 4)
    with pytest.raises(ValueError):
        InterfaceCurve.circle((0, 0), 1.0, 20, f_tilde=0.0)


def test_figure_eight_intersects():
    th = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    c = InterfaceCurve(np.stack([np.sin(th), np.sin(th) * np.cos(th)], -1))
    with pytest.raises(SelfIntersection):
        c.check_simple()
    InterfaceCurve.circle((0, 0), 1.0, 40).check_simple()


def test_resample_equalizes_spacing():
    rng = np.random.default_rng(4)
    th = np.sort(rng.uniform(0, 2 * np.pi, 80))
    c = InterfaceCurve(np.stack([np.cos(th), np.sin(th)], -1))
    assert not c.spacing_ok((0.8, 1.2))
    r = c.resample()
    assert r.spacing_ok((0.95, 1.05))
    np.testing.assert_allclose(np.linalg.norm(r.points, axis=1), 1.0, atol=2e-3)


def test_bilinear_exact_for_bilinear_data():
    g = Grid((5, 7), (1.0, 1.4), False)
    X = g.reference_coords()
    f = (1 + 2 * X[..., 0] - X[..., 1] + 3 * X[..., 0] * X[..., 1])[..., None]
    p = np.array([[0.13, 0.2], [0.99, 1.39], [0.5, 0.7]])
    np.testing.assert_allclose(bilinear(g, f, p)[:, 0], 1 + 2 * p[:, 0] - p[:, 1] + 3 * p[:, 0] * p[:, 1])
    with pytest.raises(OffsetOutsideDomain):
        bilinear(g, f, np.array([[1.2, 0.3]]))


def _grid_fields(n, u_fn, w_fn=None):
    g = Grid((n, n), 1.0, False)
    X = g.reference_coords()
    w = np.zeros(X.shape) if w_fn is None else w_fn(X)
    return g, FieldState.from_displacement(g, u_fn(X), w)


def test_smooth_field_has_small_jumps():
    n = 64
    g, state = _grid_fields(n, lambda X: 0.1 * np.stack([np.sin(3 * X[..., 0]), X[..., 1] ** 2, 0 * X[..., 0]], -1))
    c = InterfaceCurve.circle((0.5, 0.5), 0.25, 40)
    js = sample_jumps(state, g, c)
    eps = 1.5 / n
    x_true = np.zeros((c.n, 3))
    x_true[:, :2] = c.points
    x_true += 0.1 * np.stack([np.sin(3 * c.points[:, 0]), c.points[:, 1] ** 2, 0 * c.points[:, 0]], -1)
    # x = X + u is sampled 2 eps apart, so its jump is bounded by 2 eps |F|
    assert np.abs(js.jump("x")).max() <= 2 * eps * 1.3
    assert np.abs(js.jump("w")).max() == 0.0
    assert np.abs(js.avg("x") - x_true).max() <= 10 * eps ** 2
    assert np.abs(js.jump("F")).max() < 1e-2


def test_manufactured_jump_recovered():
    # w jumps by j(X2) across X1 = a: the recovered jump is within 2% at eps = 1.5 h
    a = 0.5 + 0.3 / 64

    def w(X):
        j = 0.05 * (1 + 0.5 * np.sin(2 * np.pi * X[..., 1]))
        return np.stack([(X[..., 0] > a) * j, 0.01 * X[..., 0], 0 * j], -1)

    errs = []
    for n in (32, 64, 128):
        g, state = _grid_fields(n, lambda X: 0 * X, w)
        c = InterfaceCurve.line((a, 0.2), (a, 0.8), 21)
        js = sample_jumps(state, g, c)
        j = 0.05 * (1 + 0.5 * np.sin(2 * np.pi * c.points[:, 1]))
        errs.append(np.abs(js.jump("w")[:, 0] - j).max() / 0.05)
    assert errs[1] <= 0.02
    assert errs[2] < errs[0]


def test_eps_below_bound_rejected():
    g, state = _grid_fields(16, lambda X: 0 * X)
    with pytest.raises(ValueError):
        sample_jumps(state, g, InterfaceCurve.circle((0.5, 0.5), 0.2, 20), eps=1.0 / 16)


def test_offset_outside_domain():
    g, state = _grid_fields(16, lambda X: 0 * X)
    with pytest.raises(OffsetOutsideDomain):
        sample_jumps(state, g, InterfaceCurve.line((0.02, 0.2), (0.02, 0.8), 10))


@given(st.integers(0, 2 ** 32 - 1))
def test_jump_product_rule_exact(seed):
    rng = np.random.default_rng(seed)
    n = 12
    g = Grid((n, n), 1.0, True)
    shp = g.shape + (3,)
    state = FieldState.from_displacement(g, 0.05 * rng.standard_normal(shp), 0.1 * rng.standard_normal(shp),
                                         xdot=rng.standard_normal(shp), wdot=rng.standard_normal(shp))
    js = sample_jumps(state, g, InterfaceCurve.circle((0.5, 0.5), 0.3, 17))
    assert js.product_rule_residual() <= 1e-12


def test_planar_coherent_shock_kinematics():
    # u = d (X1 - a)^+ moving with normal speed U: xdot = -U d on the + side
    a, U = 0.5 + 0.2 / 32, 0.3
    d = np.array([0.02, -0.01, 0.005])
    g = Grid((32, 32), 1.0, False)
    X = g.reference_coords()
    s = np.maximum(X[..., 0] - a, 0.0)[..., None]
    state = FieldState.from_displacement(g, s * d, xdot=-U * (X[..., :1] > a) * d)
    js = sample_jumps(state, g, InterfaceCurve.line((a, 0.2), (a, 0.8), 9))
    coh, kin = coherence_residual(js, np.full(9, U))
    assert coh.max() < 1e-13 and kin.max() < 1e-13
    _, kin_wrong = coherence_residual(js, np.zeros(9))
    assert kin_wrong.min() > 1e-3


def test_traction_matched_jump_balances():
    minus, plus = two_phase_models()
    m = np.array([1.0, 0.0, 0.0])
    F = np.eye(3) + 0.03
    N = np.full((3, 3), 0.02)
    d, gj = traction_matched_jump(minus, plus, F, N, m)
    from qld.constitutive import stresses
    from qld.kinematics import DeformationPoint
    bm = stresses(minus, DeformationPoint(F, N), np.zeros(3))
    bp = stresses(plus, DeformationPoint(F + np.outer(d, m), N + np.outer(gj, m)), np.zeros(3))
    np.testing.assert_allclose(bp.P @ m, bm.P @ m, atol=1e-13)
    np.testing.assert_allclose(bp.S @ m, bm.S @ m, atol=1e-13)


def test_two_phase_residuals_shrink():
    r16, r32 = planar_two_phase(16), planar_two_phase(32)
    assert r32[0] < r16[0] / 2 and r32[1] < r16[1] / 2
    assert max(r16[2], r32[2]) <= 1e-12


def test_normal_speed_roots():
    G = np.array([0.5, -0.2, 0.0])
    np.testing.assert_allclose(normal_speed(G, 2.0), G / 2.0)
    fm, gw, wsq = 0.3, 0.1, 0.2
    U = normal_speed(G, 2.0, rho0=1.0, rho_bar=0.5, fm=fm, gw=gw, wsq=wsq)
    a, b, c = 0.5 * fm, -2.0 - 0.5 * gw, G - 0.25 * wsq
    np.testing.assert_allclose(a * U ** 2 + b * U + c, 0.0, atol=1e-15)
    small = normal_speed(G, 2.0, rho0=1e-8, rho_bar=0.0, fm=fm)
    np.testing.assert_allclose(small, G / 2.0, rtol=1e-6)


def test_normal_speed_without_real_root():
    with pytest.raises(NoRealRoot) as exc:
        normal_speed(np.array([0.0, 10.0]), 1.0, rho0=2.0, fm=1.0)
    assert exc.value.marker == 1


def test_static_circle_configurational_balance():
    sem = SurfaceEnergyModel("constant", phi0=0.7)
    c = InterfaceCurve.circle((0, 0), 0.5, 100, sem=sem, f_tilde=2.0)
    res = interfacial_residuals(None, c)
    np.testing.assert_allclose(res.G, -0.7 / 0.5, rtol=1e-10)
    res = interfacial_residuals(None, c, U=res.G / 2.0)
    np.testing.assert_allclose(res.config, 0.0, atol=1e-12)


def test_evolution_step():
    sem = SurfaceEnergyModel("constant", phi0=1.0)
    c = InterfaceCurve.circle((0, 0), 1.0, 50, sem=sem)
    with pytest.raises(ValueError):
        evolve_interface(c, None, dt=0.0)
    dt = stable_dt(c)
    assert stable_dt(InterfaceCurve.circle((0, 0), 1.0, 100, sem=sem)) == pytest.approx(dt / 4, rel=1e-3)
    nxt = evolve_interface(c, None, dt=dt)
    assert np.all(dissipation(nxt) <= 0)
    assert circle_radius(nxt) < 1.0
    assert stable_dt(InterfaceCurve.circle((0, 0), 1.0, 50, sem=SurfaceEnergyModel("constant", phi0=0.0))) == np.inf


def test_shrinking_circle_short():
    err, diss_ok, steps = circle_flow(markers=60, stop=0.6)
    assert err < 0.01 and diss_ok and steps > 10
