"""Command line driver: ``qld {simulate,minimize,verify,interface} scenario.yaml``.

Every stage writes into the scenario's output directory (``--out`` wins).
Outputs depend only on the scenario and its seed.
"""

import argparse
import os
import sys

import numpy as np

from . import io as qio
from . import suites
from .dynamics import RESIDUAL_COLUMNS, DiagnosticsLog, minimize_energy, residual_report, simulate
from .errors import NoConvergence, QLDError
from .interface import InterfaceCurve, circle_radius, evolve_interface, sample_jumps, stable_dt
from .scenario import load_scenario

COMMANDS = ("simulate", "minimize", "verify", "interface")


def _snapshot(out, k, grid, state, model):
    qio.write_vtk(os.path.join(out, "snap_%06d.vtk" % k), grid, state, model)


def run_simulate(sc, out):
    grid, model, bc = sc.grid(), sc.model(), sc.bc()
    cfg = sc.sim_config(grid, model)
    state = sc.initial_state(grid, model)
    every = sc.data["sim"]["snapshot_every"]
    _snapshot(out, 0, grid, state, model)

    def on_step(n, st):
        if every > 0 and (n % every == 0 or n == cfg.n_steps):
            _snapshot(out, n, grid, st, model)

    state, log, _ = simulate(state, grid, model, bc, cfg, log=DiagnosticsLog(RESIDUAL_COLUMNS), on_step=on_step)
    if every == 0 and cfg.n_steps > 0:
        _snapshot(out, cfg.n_steps, grid, state, model)
    qio.write_diagnostics(os.path.join(out, "diagnostics.csv"), log)
    rows = []
    H = log.column("H")
    closed = not bc.faces and not np.any(bc.body_force)
    if len(H) > 1 and cfg.integrator == "verlet" and closed:
        drift = float(np.max(np.abs(H - H[0])) / max(abs(H[0]), 1e-300))
        rows.append(suites.row("energy_drift", drift, 1e-6, drift <= 1e-6))
    if len(H) > 1 and cfg.integrator != "verlet":
        rise = float(np.max(np.diff(H) / np.maximum(np.abs(H[:-1]), 1e-300)))
        rows.append(suites.row("H_monotone", rise, 1e-10, rise <= 1e-10))
        dmin = float(log.column("dissipation_min").min())
        rows.append(suites.row("dissipation_min", dmin, 0.0, dmin >= 0.0))
    return rows


def run_minimize(sc, out):
    grid, model, bc = sc.grid(), sc.model(), sc.bc()
    init = sc.initial_state(grid, model)
    opts = sc.data["minimize"]
    tol = opts.get("tol", 1e-8 * model.modulus_scale)
    try:
        state = minimize_energy(grid, model, bc, init, tol=tol, max_iter=opts["max_iter"])
        ok = True
    except NoConvergence as exc:
        state, ok = exc.state, False
    qio.write_vtk(os.path.join(out, "equilibrium.vtk"), grid, state, model)
    rx, rw = residual_report(state, grid, model, bc)
    return [suites.row("equilibrium_phonon", rx, tol, ok and rx <= tol),
            suites.row("equilibrium_phason", rw, tol, ok and rw <= tol)]


def run_verify(sc, out):
    model = sc.model()
    v = sc.data["verify"]
    n = v["n_samples"]
    rng = sc.rng(1)
    rows = []
    for name in v["suites"]:
        if name == "derivatives":
            rows += suites.suite_derivatives(model, rng, n)
        elif name == "moment":
            rows += suites.suite_moment(model, rng, n)
        elif name == "metric":
            rows += suites.suite_metric(model, rng, n)
        elif name == "affine":
            rows += suites.suite_affine(model, rng)
        elif name == "noether":
            rows += suites.suite_noether(model)
        elif name == "interface":
            rows += suites.suite_interface()
        elif name == "circle":
            rows += suites.suite_circle()
        elif name == "dissipativity":
            rows += suites.suite_dissipativity(model, sc.grid())
    return rows


def build_curve(sc):
    itf = sc.data["interface"]
    kw = dict(sem=sc.surface_model(), f_tilde=itf.get("f_tilde", 1.0))
    if itf.get("shape", "circle") == "circle":
        return InterfaceCurve.circle(tuple(itf.get("center", (0.0, 0.0))), itf["radius"],
                                     itf.get("markers", 200), **kw)
    return InterfaceCurve.line(tuple(itf["start"]), tuple(itf["end"]), itf.get("markers", 50), **kw)


def run_interface(sc, out):
    """Evolve the interface; with ``bulk`` the jumps come from the (frozen) initial fields."""
    itf = sc.data.get("interface")
    if itf is None:
        raise QLDError("interface: scenario has no interface section")
    curve = build_curve(sc)
    js_state = None
    model = sc.model()
    if itf.get("bulk", False):
        grid = sc.grid()
        js_state = (sc.initial_state(grid, model), grid)
    t_end = itf.get("t_end", np.inf)
    stop = itf.get("stop_radius", 0.0)
    max_steps = itf.get("max_steps", 100000)
    write_every = itf.get("write_every", 1)
    snaps = [curve]
    diss_ok = True
    k = 0
    while k < max_steps and curve.t < t_end:
        js = None
        if js_state is not None:
            js = sample_jumps(js_state[0], js_state[1], curve, eps=itf.get("eps"), model=model)
        dt = itf.get("dt") or stable_dt(curve, js=js)
        dt = min(dt, t_end - curve.t) if np.isfinite(t_end) else dt
        curve = evolve_interface(curve, js, dt=dt, rho0=model.rho0 if js is not None else 0.0,
                                 rho_bar=model.rho_bar if js is not None else 0.0, check=(k % 50 == 0))
        k += 1
        diss_ok &= bool(np.all(-curve.f_tilde * curve.U ** 2 <= 0))
        if k % write_every == 0:
            snaps.append(curve)
        if curve.closed and stop > 0 and circle_radius(curve) < stop:
            break
    if snaps[-1] is not curve:
        snaps.append(curve)
    qio.write_interface(os.path.join(out, "interface.csv"), snaps)
    return [suites.row("interface_dissipation", 0.0 if diss_ok else 1.0, 0.0, diss_ok)]


STAGES = {"simulate": run_simulate, "minimize": run_minimize, "verify": run_verify,
          "interface": run_interface}


def run(scenario, command):
    """Execute one stage; returns ``(exit code, report rows)``.

    Each stage writes ``report.csv``; the exit code is 1 when any row failed.
    """
    out = qio.ensure_dir(scenario.data["output"])
    rows = STAGES[command](scenario, out)
    qio.write_report(os.path.join(out, "report.csv"), rows)
    return (0 if all(r["passed"] for r in rows) else 1), rows


def parser():
    p = argparse.ArgumentParser(prog="qld", description="Phonon-phason continuum simulations.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("scenario", help="YAML or JSON scenario file")
    p.add_argument("--out", help="output directory (overrides the scenario)")
    p.add_argument("--seed", type=int, help="random seed (overrides the scenario)")
    p.add_argument("--max-steps", type=int, help="cap on time steps")
    return p


def main(argv=None):
    args = parser().parse_args(argv)
    try:
        sc = load_scenario(args.scenario).with_overrides(args.seed, args.out, args.max_steps)
        code, rows = run(sc, args.command)
    except QLDError as exc:
        print(f"qld {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for r in rows:
        print("%-28s %-4s value=%.6g threshold=%.3g" % (r["check"], "PASS" if r["passed"] else "FAIL",
                                                        r["value"], r["threshold"]))
    return code


if __name__ == "__main__":
    sys.exit(main())
