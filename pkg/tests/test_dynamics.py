import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rng_for
from qld.constitutive import MaterialModel
from qld.dynamics import (BoundaryConditions, ChannelBC, DiagnosticsLog, SimConfig, minimize_energy,
                          residual_report, simulate, stability_bounds, step_conservative, step_dissipative,
                          total_energy)
from qld.errors import NoConvergence, OrientationViolation, StabilityViolation
from qld.kinematics import FieldState, Grid

PER = BoundaryConditions.periodic()


def iic(kind="IIC_quadratic", R=0.0, **kw):
    kw.setdefault("rho_bar", 0.7)
    return MaterialModel.icosahedral(kind, 1.0, 1.0, 0.5, 0.1, R, **kw)


def wave(grid, amp=0.01, phason=0.01, k=1, vel=0.0):
    X = grid.reference_coords()
    ph = 2 * np.pi * k * X[..., 0] / grid.length[0]
    u = np.zeros(X.shape)
    w = np.zeros(X.shape)
    u[..., 0] = amp * np.sin(ph)
    u[..., 1] = 0.5 * amp * np.cos(ph)
    w[..., 0] = phason * np.cos(ph)
    w[..., 2] = 0.3 * phason * np.sin(ph)
    return FieldState.from_displacement(grid, u, w, xdot=vel * u, wdot=vel * w)


def test_natural_state_is_fixed_point():
    g = Grid((16, 8), 1.0, True)
    s0 = FieldState.natural(g)
    s1 = step_conservative(s0, g, iic(), PER, 0.01)
    assert np.array_equal(s1.x, s0.x) and np.array_equal(s1.w, s0.w)
    assert np.all(s1.xdot == 0) and s1.t == pytest.approx(0.01)


def test_stability_violation():
    g = Grid((32,), 1.0, True)
    with pytest.raises(StabilityViolation):
        step_conservative(wave(g), g, iic(), PER, 1.0)
    m = MaterialModel.icosahedral("IQ_quadratic", c_star=1.0)
    _, par = stability_bounds(g, m)
    with pytest.raises(StabilityViolation):
        step_dissipative(wave(g), g, m, PER, 2 * par, scheme="split")


def test_conservative_rejects_friction():
    g = Grid((16,), 1.0, True)
    with pytest.raises(ValueError):
        step_conservative(wave(g), g, iic(c_star=1.0), PER, 1e-3)


def test_orientation_violation_in_step():
    g = Grid((16,), 1.0, True)
    s = wave(g, amp=0.2)
    with pytest.raises(OrientationViolation):
        simulate(s, g, iic(), PER, SimConfig(dt=1e-3, t_end=1e-3))


def fourier_phase(field, grid, k=1):
    X = grid.reference_coords()[..., 0]
    return np.angle(np.sum(field * np.exp(-2j * np.pi * k * X)))


@pytest.mark.parametrize("channel", ["phonon", "phason"])
def test_decoupled_wave_speed(channel):
    m = iic(R=0.0, rho0=1.3, rho_bar=0.6)
    g = Grid((256,), 1.0, True)
    X = g.reference_coords()
    k = 2 * np.pi
    c = np.sqrt((m.C[0, 0, 0, 0] / m.rho0) if channel == "phonon" else (m.K[0, 0, 0, 0] / m.rho_bar))
    prof = 1e-3 * np.sin(k * X)
    vel = -1e-3 * c * k * np.cos(k * X)
    z = np.zeros(X.shape)
    u, ud, w, wd = z.copy(), z.copy(), z.copy(), z.copy()
    if channel == "phonon":
        u[:, 0], ud[:, 0] = prof[:, 0], vel[:, 0]
    else:
        w[:, 0], wd[:, 0] = prof[:, 0], vel[:, 0]
    s0 = FieldState.from_displacement(g, u, w, ud, wd)
    hyp, _ = stability_bounds(g, m)
    dt = 0.2 * hyp
    n = int(round(0.25 / (c * dt)))
    s1, _, _ = simulate(s0, g, m, PER, SimConfig(dt=dt, t_end=n * dt))
    f0 = (s0.displacement(g) if channel == "phonon" else s0.w)[:, 0]
    f1 = (s1.displacement(g) if channel == "phonon" else s1.w)[:, 0]
    shift = (fourier_phase(f0, g) - fourier_phase(f1, g)) % (2 * np.pi)
    speed = shift / (k * n * dt)
    assert speed == pytest.approx(c, rel=0.01)


def test_momentum_and_energy_conservation():
    m = iic("IIC_stvenant", R=0.2)
    g = Grid((64,), 1.0, True)
    hyp, _ = stability_bounds(g, m)
    dt = 0.2 * hyp
    _, log, _ = simulate(wave(g, 0.002, 0.002, vel=0.5), g, m, PER, SimConfig(dt=dt, t_end=400 * dt))
    H = log.column("H")
    # Verlet keeps H within its bounded O((omega dt)^2) oscillation
    omega_dt = 2 * np.pi * max(m.wave_speeds(1)) * dt
    assert np.abs(H - H[0]).max() <= omega_dt ** 2 * H[0]
    for col in ("px", "py", "pz", "mux", "muy", "muz"):
        p = log.column(col)
        scale = max(np.abs(log.column("px")).max(), np.abs(log.column("mux")).max(), 1e-3)
        assert np.abs(np.diff(p)).max() <= 1e-12 * scale


def test_energy_drift_is_second_order():
    m = iic("IIC_stvenant", R=0.2)
    g = Grid((32,), 1.0, True)
    hyp, _ = stability_bounds(g, m)
    drift = []
    for frac in (0.4, 0.2, 0.1):
        dt = frac * hyp
        _, log, _ = simulate(wave(g, vel=0.5), g, m, PER, SimConfig(dt=dt, t_end=0.5))
        H = log.column("H")
        drift.append(np.abs(H - H[0]).max())
    orders = np.log2(np.array(drift[:-1]) / np.array(drift[1:]))
    assert orders.min() >= 1.8


def test_phason_momentum_needs_alpha_zero():
    g = Grid((32,), 1.0, True)
    m = iic(alpha=0.5)
    hyp, _ = stability_bounds(g, m)
    s = wave(g, phason=0.05)
    s.w[..., 0] += 0.05  # d(mu)/dt = -alpha * integral of w
    _, log, _ = simulate(s, g, m, PER, SimConfig(dt=0.3 * hyp, t_end=30 * 0.3 * hyp))
    mu = log.column("mux")
    assert np.abs(np.diff(mu)).max() > 1e-6
    assert np.abs(np.diff(log.column("px"))).max() <= 1e-15


def test_total_energy_examples():
    g = Grid((8, 4), (2.0, 1.0), True)
    m = iic(rho0=1.7)
    assert total_energy(FieldState.natural(g), g, m, PER) == 0
    v0 = np.array([0.3, -0.2, 0.5])
    s = FieldState.from_displacement(g, 0.0, xdot=v0)
    assert total_energy(s, g, m, PER) == pytest.approx(0.5 * 1.7 * v0 @ v0 * 2.0, rel=1e-14)


def test_uniform_phason_is_equilibrium_of_iq():
    g = Grid((32,), 1.0, True)
    m = MaterialModel.icosahedral("IQ_quadratic", c_star=1.0)
    s = FieldState.from_displacement(g, 0.0, w=(0.1, -0.2, 0.3))
    for scheme in ("discrete_gradient", "split"):
        s1 = step_dissipative(s, g, m, PER, 1e-4, scheme=scheme)
        assert np.abs(s1.w - s.w).max() <= 1e-15
        assert np.abs(s1.wdot).max() <= 1e-12


def decay_rate(m, n=256, scheme="discrete_gradient", steps=200):
    g = Grid((n,), 1.0, True)
    X = g.reference_coords()
    w = np.zeros(X.shape)
    w[:, 0] = 0.01 * np.sin(2 * np.pi * X[:, 0])
    s = FieldState.from_displacement(g, 0.0, w=w)
    dt = min(stability_bounds(g, m, safety=0.4))
    a0 = np.abs(np.sum(s.w[:, 0] * np.exp(-2j * np.pi * X[:, 0])))
    for _ in range(steps):
        s = step_dissipative(s, g, m, PER, dt, scheme=scheme)
    a1 = np.abs(np.sum(s.w[:, 0] * np.exp(-2j * np.pi * X[:, 0])))
    return -np.log(a1 / a0) / s.t


@pytest.mark.parametrize("scheme", ["discrete_gradient", "split"])
def test_iq_fourier_decay(scheme):
    m = MaterialModel.icosahedral("IQ_quadratic", 1.0, 1.0, 0.5, 0.1, 0.0, c_star=2.0)
    k = 2 * np.pi
    expected = m.K[0, 0, 0, 0] * k ** 2 / 2.0
    assert decay_rate(m, scheme=scheme) == pytest.approx(expected, rel=0.01)


def test_iq_gradient_friction_decay():
    # c* wdot - omega wdot'' = K w''  gives rate K k^2 / (c* + omega k^2)
    m = MaterialModel.icosahedral("IQ_quadratic", 1.0, 1.0, 0.5, 0.1, 0.0, c_star=2.0, omega=0.01)
    k = 2 * np.pi
    expected = m.K[0, 0, 0, 0] * k ** 2 / (2.0 + 0.01 * k ** 2)
    assert decay_rate(m) == pytest.approx(expected, rel=0.02)


@settings(max_examples=6)
@given(st.sampled_from(["IIC_quadratic", "IIC_stvenant", "IQ_quadratic"]), st.integers(0, 1000),
       st.booleans())
def test_discrete_gradient_never_raises_energy(kind, seed, clamped):
    rng = rng_for(seed)
    if kind == "IQ_quadratic":
        m = MaterialModel.icosahedral(kind, R=0.2, c_star=float(rng.uniform(0.1, 2)), omega=0.01)
    else:
        m = iic(kind, R=0.2, alpha=0.3, c_star=float(rng.uniform(0.01, 1)), omega=0.001)
    if clamped:
        g = Grid((24,), 1.0, False)
        fix = {"phonon": ChannelBC("dirichlet"), "phason": ChannelBC("dirichlet")}
        bc = BoundaryConditions({"xmin": fix, "xmax": {"phonon": ChannelBC("potential", stiffness=2.0)}})
    else:
        g, bc = Grid((24,), 1.0, True), PER
    X = g.reference_coords()
    bump = np.sin(np.pi * X[:, :1]) if clamped else np.sin(2 * np.pi * X[:, :1])
    u = 0.03 * bump * rng.standard_normal(3)
    w = 0.03 * bump * rng.standard_normal(3)
    s = FieldState.from_displacement(g, u, w, xdot=0.1 * u, wdot=0.1 * w if m.rho_bar else 0)
    hyp, _ = stability_bounds(g, m)
    _, log, _ = simulate(s, g, m, bc, SimConfig(dt=0.5 * hyp, t_end=60 * 0.5 * hyp,
                                                integrator="discrete_gradient"))
    H = log.column("H")
    assert np.all(np.diff(H) <= 1e-10 * np.abs(H[:-1]))
    assert log.column("dissipation_min").min() >= 0


def test_diagnostics_log_columns():
    g = Grid((16,), 1.0, True)
    from qld.dynamics import RESIDUAL_COLUMNS
    log = DiagnosticsLog(RESIDUAL_COLUMNS)
    _, log, _ = simulate(wave(g), g, iic("IIC_stvenant"), PER, SimConfig(dt=1e-3, t_end=5e-3), log=log)
    assert log.columns[:10] == ("t", "H", "px", "py", "pz", "mux", "muy", "muz", "dissipation", "dissipation_min")
    assert len(log) == 6
    t = log.column("t")
    assert np.all(np.diff(t) > 0)
    assert log.column("max_moment").max() <= 1e-12


def test_minimize_natural():
    g = Grid((8,), 1.0, False)
    m = iic()
    bc = BoundaryConditions({"xmin": {"phonon": ChannelBC("dirichlet"), "phason": ChannelBC("dirichlet")}})
    s = minimize_energy(g, m, bc, FieldState.natural(g))
    assert np.abs(s.displacement(g)).max() <= 1e-12 and np.abs(s.w).max() <= 1e-12


def test_minimize_stretch_matches_block_solve():
    m = iic(R=0.3)
    g = Grid((20,), 2.0, False)
    delta = 0.04
    bc = BoundaryConditions({
        "xmin": {"phonon": ChannelBC("dirichlet"), "phason": ChannelBC("dirichlet")},
        "xmax": {"phonon": ChannelBC("dirichlet", value=(delta * 2.0, 0.0, 0.0))},
    })
    s = minimize_energy(g, m, bc, FieldState.natural(g), tol=1e-12)
    # traction-free phason end: S = K n + R^T h = 0 with uniform h = delta e1
    h = np.array([delta, 0.0, 0.0])
    Kb = m.K[:, 0, :, 0]
    Rb = m.R[:, 0, :, 0]
    n = np.linalg.solve(Kb, -Rb.T @ h)
    gw = np.diff(s.w, axis=0) / g.h[0]
    assert np.abs(gw - n).max() <= 1e-8
    assert np.abs(n).max() > 1e-3  # the coupling actually drives the phason


def test_minimize_reports_failure():
    m = iic(R=0.3)
    g = Grid((16, 16), 1.0, False)
    bc = BoundaryConditions.clamped_affine(g, np.eye(3) + 0.05, np.zeros(3), np.zeros((3, 3)) + 0.05,
                                           np.zeros(3))
    X = g.reference_coords()
    s0 = FieldState.from_displacement(g, 0.02 * np.sin(7 * X), 0.02 * np.cos(5 * X))
    with pytest.raises(NoConvergence) as exc:
        minimize_energy(g, m, bc, s0, tol=1e-14, max_iter=1)
    assert exc.value.state is not None and "phonon_residual" in exc.value.report


def test_equilibrium_is_fixed_point_of_dynamics():
    m = iic("IIC_stvenant", R=0.2)
    g = Grid((12, 12), 1.0, False)
    A = np.eye(3)
    A[:2, :2] += [[0.03, 0.01], [-0.02, 0.02]]
    Gw = np.zeros((3, 3))
    Gw[:, :2] = 0.03
    bc = BoundaryConditions.clamped_affine(g, A, np.zeros(3), Gw, np.zeros(3))
    X = g.reference_coords()
    bump = (np.sin(np.pi * X[..., 0]) * np.sin(np.pi * X[..., 1]))[..., None]
    s = minimize_energy(g, m, bc, FieldState.from_displacement(g, 0.01 * bump, 0.01 * bump))
    rx, rw = residual_report(s, g, m, bc)
    assert max(rx, rw) <= 1e-8 * m.modulus_scale
    hyp, _ = stability_bounds(g, m)
    s1 = step_conservative(s, g, m, bc, 0.5 * hyp)
    assert np.abs(s1.x - s.x).max() <= 1e-10 and np.abs(s1.w - s.w).max() <= 1e-10
