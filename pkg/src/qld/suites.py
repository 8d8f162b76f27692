"""Verification suites run by ``qld verify``.

Each suite returns rows ``{"check", "value", "threshold", "passed"}``.
Finite-difference oracles here differentiate the energy itself and never
reuse the analytic partials they are compared against.
"""

import numpy as np

from . import algebra as alg
from .constitutive import MaterialModel, SurfaceEnergyModel, metric_relation_residual, stresses, surface_eval
from .dynamics import BoundaryConditions, SimConfig, simulate, stability_bounds
from .interface import (InterfaceCurve, circle_radius, evolve_interface, interfacial_residuals, sample_jumps,
                        stable_dt)
from .kinematics import DeformationPoint, FieldState, Grid
from .verify import (SymmetryGenerator, conservation_residual, invariance_probe, refinement_order,
                     universal_affine_check)


def row(check, value, threshold, passed):
    return {"check": check, "value": float(value), "threshold": float(threshold), "passed": bool(passed)}


def random_point(rng, amplitude=0.2):
    F = alg.EYE + amplitude * rng.standard_normal((3, 3))
    while alg.det(F) < 0.3:
        F = alg.EYE + amplitude * rng.standard_normal((3, 3))
    return F, amplitude * rng.standard_normal((3, 3)), rng.standard_normal(3) * amplitude


def fd_partials(fn, args, h=1e-6):
    """Central differences of a scalar function with respect to each array argument."""
    out = []
    for k, a in enumerate(args):
        a = np.asarray(a, float)
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            step = h * max(1.0, abs(a[idx]))
            ap = a.copy()
            am = a.copy()
            ap[idx] += step
            am[idx] -= step
            lp = list(args)
            lm = list(args)
            lp[k] = ap
            lm[k] = am
            g[idx] = (fn(*lp) - fn(*lm)) / (2 * step)
        out.append(g)
    return out


def _rel(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-12))


def derivative_errors(model, rng, n_samples=100):
    """Max relative error of (P, z_eq, S) against differences of the density."""
    worst = 0.0
    for _ in range(n_samples):
        F, N, w = random_point(rng)
        _, P, z, S = model.density_derivs(F, w, N)
        fF, fw, fN = fd_partials(lambda F_, w_, N_: float(model.density(F_, w_, N_)), (F, w, N))
        for an, fd in ((P, fF), (z, fw), (S, fN)):
            worst = max(worst, _rel(an, fd))
    return worst


def surface_derivative_errors(sem, rng, n_samples=100):
    """Max relative error of (TT, SS, zz) against differences of phi."""
    worst = 0.0
    for _ in range(n_samples):
        th = rng.uniform(0, 2 * np.pi)
        m = np.array([np.cos(th), np.sin(th), 0.0])
        Pi = alg.EYE - np.outer(m, m)
        F, N, w = random_point(rng)
        FF, NN = F @ Pi, N @ Pi
        _, TT, SS, zz, _ = surface_eval(sem, m, FF, w, NN)
        fF, fw, fN = fd_partials(lambda a, b, c: float(surface_eval(sem, m, a, b, c)[0]), (FF, w, NN))
        for an, fd in ((TT, -fF), (zz, fw), (SS, -fN)):
            worst = max(worst, _rel(an, fd))
    return worst


def suite_derivatives(model, rng, n_samples=100, tol=1e-6):
    rows = [row("derivatives_bulk", derivative_errors(model, rng, n_samples), tol, None)]
    sem = SurfaceEnergyModel("anisotropic_quadratic", phi0=1.0, delta=0.3, k_F=0.7, k_w=0.4, k_N=0.5)
    rows.append(row("derivatives_surface", surface_derivative_errors(sem, rng, n_samples), tol, None))
    for r in rows:
        r["passed"] = r["value"] <= tol
    return rows


def invariant_kind(model):
    return model.kind == "IIC_stvenant"


def suite_moment(model, rng, n_samples=100):
    rep = invariance_probe(model, n_samples, rng)
    if invariant_kind(model):
        return [row("moment_residual", rep.moment_residual, 1e-10, rep.moment_residual <= 1e-10),
                row("rotation_invariance", rep.invariance_residual, 1e-10, rep.invariance_residual <= 1e-10),
                row("nonconvexity_gap", rep.witness_gap, 0.0, rep.witness_gap > 0)]
    return [row("moment_residual_control", rep.moment_residual, 1e-3, rep.moment_residual > 1e-3)]


def random_metric(rng, amplitude=0.2):
    A = amplitude * rng.standard_normal((3, 3))
    return alg.EYE + alg.sym(A) + A @ A.T * 0.5


def metric_errors(model, rng, n_samples=100):
    r1 = r2 = 0.0
    for _ in range(n_samples):
        F, N, w = random_point(rng)
        gamma = random_metric(rng)
        dp = DeformationPoint(F, N, gamma)
        res, skw = metric_relation_residual(model, dp, w)
        scale = float(alg.norm(stresses(model, dp, w).Pesh))
        r1 = max(r1, float(alg.norm(res)) / scale)
        r2 = max(r2, float(alg.norm(skw)) / scale)
    return r1, r2


def suite_metric(model, rng, n_samples=100, tol=1e-6):
    if not invariant_kind(model):
        return []
    r1, r2 = metric_errors(model, rng, n_samples)
    return [row("metric_relation", r1, tol, r1 <= tol), row("metric_skew", r2, tol, r2 <= tol)]


def suite_affine(model, rng, cells=32):
    if model.kind == "IIC_stvenant":
        return []
    grid = Grid((cells, cells), 1.0, False)
    det, sdet, dev = universal_affine_check(model, grid, rng)
    if abs(sdet) <= 1e-6:
        return [row("affine_block_det", sdet, 1e-6, True)]
    return [row("affine_block_det", sdet, 1e-6, True),
            row("affine_deviation", dev, 1e-8, bool(dev <= 1e-8))]


def _wave_state(grid, amplitude=0.02):
    X = grid.reference_coords()
    ph = 2 * np.pi * sum(X[..., a] / grid.length[a] for a in range(grid.dim))
    u = np.stack([amplitude * np.sin(ph), 0.7 * amplitude * np.cos(ph), 0.3 * amplitude * np.sin(ph)], -1)
    w = np.stack([amplitude * np.cos(ph), 0.5 * amplitude * np.sin(ph), amplitude * np.cos(ph)], -1)
    return FieldState.from_displacement(grid, u, w, xdot=0.1 * u, wdot=0.1 * w)


def branch_wave(model, grid, amplitude, branch=-1, mode=1):
    """Travelling wave on one branch of the discrete 1-D dispersion relation.

    The polarization is an eigenvector of the mass-scaled 6x6 acoustic
    matrix along ``x``; the frequency uses the lattice symbol
    ``(2/h) sin(kh/2)``, so the linearized scheme carries a single branch.
    """
    T = model.tangent().reshape(2, 3, 3, 2, 3, 3)[:, :, 0, :, :, 0]
    A = T.reshape(6, 6)
    mass = np.r_[np.full(3, model.rho0), np.full(3, model.rho_bar)]
    s = mass ** -0.5
    lam, V = np.linalg.eigh(s[:, None] * A * s[None, :])
    v = s * V[:, branch]
    v = v / np.abs(v).max()
    h = grid.h[0]
    k = 2 * np.pi * mode / grid.length[0]
    om = np.sqrt(lam[branch]) * 2 / h * np.sin(k * h / 2)
    X = grid.reference_coords()[..., 0]
    f = amplitude * np.cos(k * X)[..., None] * v
    fd = amplitude * om * np.sin(k * X)[..., None] * v
    return FieldState.from_displacement(grid, f[..., :3], f[..., 3:], fd[..., :3], fd[..., 3:])


def noether_levels(model, cells, dim, generators, steps=4, cfl=0.2):
    """Max residual per generator on three jointly refined periodic grids."""
    out = {i: [] for i in range(len(generators))}
    hs = []
    for n in (cells // 4, cells // 2, cells):
        grid = Grid((n,) * dim, 1.0, True)
        dt = cfl / n
        _, _, tr = simulate(_wave_state(grid), grid, model, BoundaryConditions.periodic(),
                            SimConfig(dt=dt, t_end=steps * cfl / (cells // 4), record_every=1), record=True)
        hs.append(1.0 / n)
        for i, gen in enumerate(generators):
            rep = conservation_residual(tr, grid, model, gen)
            out[i].append((rep.max_residual, rep.scale))
    return hs, out


def suite_noether(model, cells=128, dim=2):
    if model.rho_bar == 0:
        return []
    gens = [SymmetryGenerator("spatial_translation", c=(1.0, 0.5, 0.2)),
            SymmetryGenerator("phason_translation", c=(0.3, 1.0, 0.5)),
            SymmetryGenerator("spatial_rotation", qdot=(0.0, 0.0, 1.0), pivot=(0.5, 0.5, 0.0)),
            SymmetryGenerator("relabeling", relabel="rotation", qdot=(0.0, 0.0, 1.0), pivot=(0.5, 0.5, 0.0))]
    hs, out = noether_levels(model, cells, dim, gens)
    rows = []
    tr = max(r / s for r, s in out[0])
    rows.append(row("noether_translation", tr, 1e-12, tr <= 1e-12))
    if model.alpha == 0:
        pt = max(r / s for r, s in out[1])
        rows.append(row("noether_phason_translation", pt, 1e-12, pt <= 1e-12))
    if invariant_kind(model):
        for i, name in ((2, "noether_rotation_order"), (3, "noether_relabeling_order")):
            errs = [r for r, _ in out[i]]
            if max(errs) < 1e-12:
                rows.append(row(name, np.inf, 1.8, True))
            else:
                k = refinement_order(errs, hs)
                rows.append(row(name, k, 1.8, k >= 1.8))
    return rows


def circle_flow(phi0=1.0, f_tilde=1.0, R0=1.0, markers=200, stop=0.3):
    """Max relative deviation of R^2 from the exact curvature-flow law."""
    sem = SurfaceEnergyModel("constant", phi0=phi0)
    c = InterfaceCurve.circle((0.0, 0.0), R0, markers, sem=sem, f_tilde=f_tilde)
    worst = 0.0
    diss_ok = True
    n = 0
    while True:
        c = evolve_interface(c, None, dt=stable_dt(c), check=(n % 100 == 0))
        n += 1
        diss_ok &= bool(np.all(-c.f_tilde * c.U ** 2 <= 0))
        R = circle_radius(c)
        exact = R0 ** 2 - 2 * phi0 / f_tilde * c.t
        worst = max(worst, abs(R ** 2 - exact) / exact)
        if R < stop * R0:
            return worst, diss_ok, n


def suite_circle():
    err, diss_ok, _ = circle_flow()
    return [row("circle_radius_law", err, 0.01, err <= 0.01),
            row("interface_dissipation", 0.0 if diss_ok else 1.0, 0.0, diss_ok)]


def suite_interface(markers=200):
    c = InterfaceCurve.circle((0.1, -0.2), 0.7, markers)
    k = c.curvature()
    err = float(np.abs(k * 0.7 + 1.0).max())
    return [row("circle_curvature", err, 1e-3, err <= 1e-3)] + suite_two_phase()


def two_phase_models():
    return (MaterialModel.icosahedral("IIC_stvenant", 1.0, 1.0, 0.5, 0.1, 0.2, rho_bar=0.8),
            MaterialModel.icosahedral("IIC_stvenant", 2.0, 1.5, 0.7, 0.2, 0.1, rho_bar=0.8))


def traction_matched_jump(minus, plus, F, N, m):
    """``(d, g)`` with ``P+(F + d m, N + g m) m = P-(F, N) m`` and likewise for S."""
    w = np.zeros(3)
    b = stresses(minus, DeformationPoint(F, N), w)
    target = np.concatenate([b.P @ m, b.S @ m])

    def resid(v):
        bp = stresses(plus, DeformationPoint(F + np.outer(v[:3], m), N + np.outer(v[3:], m)), w)
        return np.concatenate([bp.P @ m, bp.S @ m]) - target

    # Newton with a difference Jacobian; the unknowns are small strains
    v = np.zeros(6)
    for _ in range(30):
        r = resid(v)
        if np.abs(r).max() <= 1e-14:
            break
        J = np.empty((6, 6))
        for k in range(6):
            e = np.zeros(6)
            e[k] = 1e-7
            J[:, k] = (resid(v + e) - resid(v - e)) / 2e-7
        v = v - np.linalg.solve(J, r)
    if np.abs(resid(v)).max() > 1e-12:
        raise RuntimeError("no traction-matched jump found")
    return v[:3], v[3:]


def planar_two_phase(cells, markers=25, bump=0.5, models=None, eps_cells=2.0):
    """Interface residuals for a static coherent planar interface on an n x n grid.

    Each side is affine plus ``bump (X1 - a)^2 s(X2)``, which leaves the
    exact jumps untouched, so the residuals measure sampling error only.
    With ``eps`` a whole number of cells every normal sample sits at the
    same place inside its cell and the interpolation error is common-mode.
    Returns ``(phonon, phason, product_rule)`` with the balances relative to
    the traction scale.
    """
    minus, plus = two_phase_models() if models is None else models
    # same position inside its cell on every grid, so refinement is self-similar
    a = 0.5 + 0.37 / cells
    m = np.array([1.0, 0.0, 0.0])
    Hm = np.array([[0.04, 0.02, 0.0], [-0.01, 0.03, 0.0], [0.02, 0.01, 0.0]])
    Gm = np.array([[0.03, -0.02, 0.0], [0.01, 0.02, 0.0], [-0.02, 0.01, 0.0]])
    d, g = traction_matched_jump(minus, plus, alg.EYE + Hm, Gm, m)
    grid = Grid((cells, cells), 1.0, False)
    X = grid.reference_coords()
    s1 = X[..., 0] - a
    prof = np.stack([np.sin(2 * np.pi * X[..., 1]), np.cos(2 * np.pi * X[..., 1]), 0.5 + 0 * s1], -1)
    side = (s1 > 0)[..., None]
    u = X @ Hm.T + side * s1[..., None] * d + bump * s1[..., None] ** 2 * prof
    w = X @ Gm.T + side * s1[..., None] * g + bump * s1[..., None] ** 2 * prof[..., ::-1]
    state = FieldState.from_displacement(grid, u, w)
    curve = InterfaceCurve.line((a, 0.2), (a, 0.8), markers, sem=SurfaceEnergyModel("constant", phi0=1.0))
    js = sample_jumps(state, grid, curve, eps=eps_cells / cells, model=(minus, plus))
    res = interfacial_residuals(js, curve)
    scale = float(np.linalg.norm(stresses(minus, DeformationPoint(alg.EYE + Hm, Gm), np.zeros(3)).P @ m))
    ph = float(np.linalg.norm(res.phonon, axis=1).max()) / scale
    pw = float(np.linalg.norm(res.phason, axis=1).max()) / scale
    return ph, pw, js.product_rule_residual()


def suite_two_phase(levels=(16, 32, 64, 128)):
    hs, ph, pw, pr = [], [], [], 0.0
    for n in levels:
        a, b, c = planar_two_phase(n)
        hs.append(1.0 / n)
        ph.append(a)
        pw.append(b)
        pr = max(pr, c)
    kp = refinement_order(ph, hs)
    kw = refinement_order(pw, hs)
    return [row("two_phase_phonon_order", kp, 1.0, kp >= 1.0),
            row("two_phase_phason_order", kw, 1.0, kw >= 1.0),
            row("jump_product_rule", pr, 1e-12, pr <= 1e-12)]


def dissipative_run(model, grid, steps=400, kind="discrete_gradient"):
    """Max relative per-step H increase and the smallest pointwise dissipation density."""
    hyp, par = stability_bounds(grid, model, safety=0.5, implicit_phason=kind == "discrete_gradient")
    dt = min(hyp, par)
    _, log, _ = simulate(_wave_state(grid, 0.05), grid, model, BoundaryConditions.periodic(),
                         SimConfig(dt=dt, t_end=steps * dt, integrator=kind))
    H = log.column("H")
    rise = float(np.max(np.diff(H) / np.abs(H[:-1]))) if len(H) > 1 else 0.0
    return rise, float(log.column("dissipation_min").min())


def suite_dissipativity(model, grid):
    rise, dmin = dissipative_run(model, grid)
    return [row("H_monotone", rise, 1e-10, rise <= 1e-10),
            row("dissipation_min", dmin, 0.0, dmin >= 0.0)]


def default_models():
    return {
        "IIC_quadratic": MaterialModel.icosahedral("IIC_quadratic", 1.0, 1.0, 0.5, 0.1, 0.2, rho_bar=0.8),
        "IIC_stvenant": MaterialModel.icosahedral("IIC_stvenant", 1.0, 1.0, 0.5, 0.1, 0.2, rho_bar=0.8,
                                                  alpha=0.3),
        "IQ_quadratic": MaterialModel.icosahedral("IQ_quadratic", 1.0, 1.0, 0.5, 0.1, 0.2, c_star=1.0),
    }
