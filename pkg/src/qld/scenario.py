"""Scenario files: schema, validation, defaults and object builders.

A scenario is YAML (or JSON) with top-level keys ``seed``, ``output``,
``grid``, ``material``, ``bc``, ``initial``, ``sim``, ``minimize``,
``interface`` and ``verify``.  Every mapping rejects unknown keys and all
violations are reported together.  Random draws use
``numpy.random.Generator(Philox(seed))``.
"""

import copy
from dataclasses import dataclass

import jsonschema
import numpy as np
import yaml

from .constitutive import (SURFACE_KINDS, MaterialModel, SurfaceEnergyModel, isotropic_coupling,
                           isotropic_phason, isotropic_phonon)
from .dynamics import FACES, INTEGRATORS, BoundaryConditions, ChannelBC, SimConfig, stability_bounds
from .errors import SchemaError, UnitInconsistency, UnknownKey
from .kinematics import FieldState, Grid

MODEL_KINDS = ("IIC_quadratic", "IIC_stvenant", "IQ_quadratic")
IC_PRESETS = ("natural", "traveling_wave", "standing_wave", "fourier_mode", "random_smooth", "affine")
SUITES = ("derivatives", "noether", "moment", "affine", "metric", "interface", "circle", "dissipativity")


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_mat9 = {"type": "array", "items": _num, "minItems": 9, "maxItems": 9}
_t81 = {"type": "array", "items": _num, "minItems": 81, "maxItems": 81}
_axes = {"type": "array", "minItems": 1, "maxItems": 2}

_channel = _obj({
    "kind": {"enum": ["dirichlet", "traction", "potential"]},
    "value": _vec3,
    "affine": _obj({"A": _mat9, "c": _vec3}, ["A", "c"]),
    "stiffness": _nonneg,
    "anchor": _vec3,
}, ["kind"])

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "output": {"type": "string"},
    "grid": _obj({
        "cells": dict(_axes, items={"type": "integer", "minimum": 4}),
        "length": dict(_axes, items=_pos),
        "periodic": dict(_axes, items={"type": "boolean"}),
        "origin": dict(_axes, items=_num),
    }, ["cells"]),
    "material": _obj({
        "kind": {"enum": list(MODEL_KINDS)},
        "rho0": _pos,
        "rho_bar": _nonneg,
        "alpha": _nonneg,
        "c_star": {"oneOf": [_nonneg, _mat9]},
        "omega": _nonneg,
        "preset": _obj({"lam": _num, "mu": _num, "K1": _num, "K2": _num, "R": _num}),
        "C": _t81,
        "K": _t81,
        "R": _t81,
    }, ["kind"]),
    "bc": _obj({
        "body_force": _vec3,
        "faces": _obj({f: _obj({"phonon": _channel, "phason": _channel}) for f in FACES}),
    }),
    "initial": _obj({
        "preset": {"enum": list(IC_PRESETS)},
        "amplitude": _num,
        "phason_amplitude": _num,
        "wavenumber": {"type": "integer", "minimum": 1},
        "component": {"type": "integer", "minimum": 0, "maximum": 2},
        "gradient": _mat9,
        "phason_gradient": _mat9,
        "perturbation": _nonneg,
    }),
    "sim": _obj({
        "integrator": {"enum": list(INTEGRATORS)},
        "dt": _pos,
        "cfl": _pos,
        "t_end": _nonneg,
        "steps": {"type": "integer", "minimum": 0},
        "safety": _pos,
        "output_every": {"type": "integer", "minimum": 1},
        "snapshot_every": {"type": "integer", "minimum": 0},
        "implicit_phason": {"type": "boolean"},
        "max_steps": {"type": "integer", "minimum": 1},
    }),
    "minimize": _obj({"tol": _pos, "max_iter": {"type": "integer", "minimum": 1}}),
    "interface": _obj({
        "shape": {"enum": ["circle", "line"]},
        "center": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "radius": _pos,
        "start": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "end": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "markers": {"type": "integer", "minimum": 5},
        "f_tilde": _pos,
        "surface": _obj({
            "kind": {"enum": list(SURFACE_KINDS)},
            "phi0": _nonneg, "delta": {"type": "number", "minimum": -1},
            "k_F": _nonneg, "k_w": _nonneg, "k_N": _nonneg,
        }),
        "dt": _pos,
        "t_end": _nonneg,
        "stop_radius": _nonneg,
        "max_steps": {"type": "integer", "minimum": 1},
        "write_every": {"type": "integer", "minimum": 1},
        "bulk": {"type": "boolean"},
        "eps": _pos,
    }),
    "verify": _obj({
        "suites": {"type": "array", "items": {"enum": list(SUITES)}, "uniqueItems": True},
        "n_samples": {"type": "integer", "minimum": 1},
    }),
}, ["grid", "material"])

DEFAULTS = {
    "seed": 0,
    "output": "out",
    "material": {"rho0": 1.0, "rho_bar": 0.0, "alpha": 0.0, "omega": 0.0},
    "bc": {"body_force": [0.0, 0.0, 0.0], "faces": {}},
    "initial": {"preset": "natural", "amplitude": 0.0, "phason_amplitude": 0.0, "wavenumber": 1,
                "component": 0, "perturbation": 0.0},
    "sim": {"t_end": 0.0, "safety": 0.5, "output_every": 1, "snapshot_every": 0,
            "implicit_phason": False},
    "minimize": {"max_iter": 2000},
    "verify": {"suites": ["derivatives", "moment", "metric"], "n_samples": 100},
}


def _fill(data, defaults):
    out = copy.deepcopy(data)
    for k, v in defaults.items():
        if k not in out:
            out[k] = copy.deepcopy(v)
        elif isinstance(v, dict) and isinstance(out[k], dict):
            out[k] = _fill(out[k], v)
    return out


def _resolve(d):
    """Make implicit defaults explicit so serialized scenarios reparse unchanged."""
    g = d["grid"]
    dim = len(g["cells"])
    g.setdefault("length", [1.0] * dim)
    g.setdefault("periodic", [True] * dim)
    g.setdefault("origin", [0.0] * dim)
    if "integrator" not in d["sim"]:
        m = d["material"]
        friction = np.any(np.asarray(m["c_star"], float) != 0) or m["omega"] > 0
        d["sim"]["integrator"] = "discrete_gradient" if friction else "verlet"
    return d


def _path(err):
    return "/".join(str(p) for p in err.absolute_path)


def _semantic(d):
    """Cross-field consistency; returns a list of (path, message)."""
    bad = []
    g = d["grid"]
    dim = len(g["cells"])
    for key in ("length", "periodic", "origin"):
        if g.get(key) is not None and len(g[key]) != dim:
            bad.append((f"grid/{key}", f"needs {dim} entries to match grid/cells"))
    m = d["material"]
    iq = m["kind"].startswith("IQ")
    if iq and m["rho_bar"] != 0:
        bad.append(("material/rho_bar", "IQ kinds carry no phason inertia; rho_bar must be 0"))
    if iq and m["alpha"] != 0:
        bad.append(("material/alpha", "IQ energy depends on grad w only; alpha must be 0"))
    if not iq and not m["rho_bar"] > 0:
        bad.append(("material/rho_bar", "IIC kinds need rho_bar > 0"))
    if iq and np.all(np.asarray(m["c_star"], float) == 0):
        bad.append(("material/c_star", "IQ phason diffusion needs c_star > 0"))
    if "preset" in m and any(k in m for k in ("C", "K", "R")):
        bad.append(("material", "give either preset or explicit C/K/R tensors, not both"))
    integ = d["sim"].get("integrator")
    if integ is not None:
        if iq and integ not in ("explicit_phason_diffusion", "discrete_gradient"):
            bad.append(("sim/integrator", "IQ kinds evolve with explicit_phason_diffusion or discrete_gradient"))
        if not iq and integ == "explicit_phason_diffusion":
            bad.append(("sim/integrator", "explicit_phason_diffusion is for IQ kinds"))
    if "dt" in d["sim"] and "cfl" in d["sim"]:
        bad.append(("sim", "give dt or cfl, not both"))
    periodic = g.get("periodic", [True] * dim)
    for face, chans in d["bc"]["faces"].items():
        axis = FACES[face][0]
        if axis >= dim:
            bad.append((f"bc/faces/{face}", f"face lies on an axis the {dim}-D grid lacks"))
        elif axis < len(periodic) and periodic[axis]:
            bad.append((f"bc/faces/{face}", "face lies on a periodic axis"))
    itf = d.get("interface")
    if itf is not None:
        if dim != 2:
            bad.append(("interface", "interfaces need a 2-D grid"))
        shape = itf.get("shape", "circle")
        if shape == "circle" and "radius" not in itf:
            bad.append(("interface/radius", "circle needs a radius"))
        if shape == "line" and not ("start" in itf and "end" in itf):
            bad.append(("interface", "line needs start and end"))
    return bad


@dataclass(frozen=True, eq=False)
class Scenario:
    data: dict

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.data == other.data

    @property
    def seed(self):
        return int(self.data["seed"])

    def rng(self, stream=0):
        return np.random.Generator(np.random.Philox(key=self.seed + (stream << 32)))

    def with_overrides(self, seed=None, output=None, max_steps=None):
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["seed"] = int(seed)
        if output is not None:
            d["output"] = str(output)
        if max_steps is not None:
            d["sim"]["max_steps"] = int(max_steps)
            if "interface" in d:
                d["interface"]["max_steps"] = int(max_steps)
        return Scenario(d)

    # -- builders ------------------------------------------------------------

    def grid(self):
        g = self.data["grid"]
        return Grid(tuple(g["cells"]), tuple(g["length"]), tuple(g["periodic"]), tuple(g["origin"]))

    def model(self):
        m = self.data["material"]
        cs = m["c_star"]
        cs = float(cs) if np.ndim(cs) == 0 else np.asarray(cs, float).reshape(3, 3)
        common = dict(rho0=m["rho0"], rho_bar=m["rho_bar"], alpha=m["alpha"], c_star=cs, omega=m["omega"])
        if "C" in m or "K" in m or "R" in m:
            z = np.zeros(81)
            return MaterialModel(kind=m["kind"], C=np.asarray(m.get("C", z), float).reshape(3, 3, 3, 3),
                                 K=np.asarray(m.get("K", z), float).reshape(3, 3, 3, 3),
                                 R=np.asarray(m.get("R", z), float).reshape(3, 3, 3, 3), **common)
        p = {"lam": 1.0, "mu": 1.0, "K1": 0.5, "K2": 0.1, "R": 0.0}
        p.update(m.get("preset", {}))
        form = "symmetric" if m["kind"] == "IIC_stvenant" else "navier"
        return MaterialModel(kind=m["kind"], C=isotropic_phonon(p["lam"], p["mu"], form),
                             K=isotropic_phason(p["K1"], p["K2"]), R=isotropic_coupling(p["R"]), **common)

    def bc(self):
        b = self.data["bc"]
        faces = {}
        for face, chans in b["faces"].items():
            faces[face] = {}
            for ch, chan_bc in chans.items():
                kw = {"kind": chan_bc["kind"]}
                if "value" in chan_bc:
                    kw["value"] = tuple(chan_bc["value"])
                if "affine" in chan_bc:
                    kw["affine"] = (np.asarray(chan_bc["affine"]["A"], float).reshape(3, 3),
                                    np.asarray(chan_bc["affine"]["c"], float))
                if "stiffness" in chan_bc:
                    kw["stiffness"] = float(chan_bc["stiffness"])
                if "anchor" in chan_bc:
                    kw["anchor"] = tuple(chan_bc["anchor"])
                faces[face][ch] = ChannelBC(**kw)
        return BoundaryConditions(faces, tuple(b["body_force"]))

    def integrator(self):
        return self.data["sim"]["integrator"]

    def sim_config(self, grid=None, model=None):
        s = self.data["sim"]
        grid = self.grid() if grid is None else grid
        model = self.model() if model is None else model
        integ = self.integrator()
        if "dt" in s:
            dt = s["dt"]
        else:
            hyp, par = stability_bounds(grid, model, safety=1.0, implicit_phason=s["implicit_phason"])
            bound = min(hyp, par) if integ == "explicit_phason_diffusion" else hyp
            dt = s.get("cfl", 0.1) * bound
        t_end = s["t_end"]
        if "steps" in s:
            t_end = s["steps"] * dt
        return SimConfig(dt=dt, t_end=t_end, integrator=integ, safety=s["safety"],
                         output_every=s["output_every"], implicit_phason=s["implicit_phason"],
                         max_steps=s.get("max_steps"))

    def initial_state(self, grid=None, model=None):
        ic = self.data["initial"]
        grid = self.grid() if grid is None else grid
        model = self.model() if model is None else model
        X = grid.reference_coords()
        L = grid.length[0]
        k = 2 * np.pi * ic["wavenumber"] / L
        s = X[..., 0] - grid.origin[0]
        e = np.zeros(3)
        e[ic["component"]] = 1.0
        A, B = ic["amplitude"], ic["phason_amplitude"]
        u = np.zeros(X.shape)
        w = np.zeros(X.shape)
        xd = np.zeros(X.shape)
        wd = np.zeros(X.shape)
        preset = ic["preset"]
        if preset in ("traveling_wave", "standing_wave", "fourier_mode"):
            u = A * np.sin(k * s)[..., None] * e
            w = B * np.sin(k * s)[..., None] * e
            if preset == "traveling_wave":
                c_ph, c_w = model.wave_speeds(grid.dim)
                xd = -c_ph * A * k * np.cos(k * s)[..., None] * e
                wd = -c_w * B * k * np.cos(k * s)[..., None] * e
        elif preset == "affine":
            Fm = np.asarray(ic.get("gradient", np.eye(3).ravel()), float).reshape(3, 3)
            Nm = np.asarray(ic.get("phason_gradient", np.zeros(9)), float).reshape(3, 3)
            u = X @ (Fm - np.eye(3)).T
            w = X @ Nm.T
        elif preset == "random_smooth":
            rng = self.rng(1)
            for mode in range(1, 4):
                km = 2 * np.pi * mode / L
                for field_, amp in ((u, A), (w, B)):
                    a, b = rng.standard_normal((2, 3)) / mode
                    field_ += amp * (np.sin(km * s)[..., None] * a + np.cos(km * s)[..., None] * b)
        if ic["perturbation"] > 0:
            rng = self.rng(2)
            bump = np.ones(grid.shape)
            for a in range(grid.dim):
                xa = (X[..., a] - grid.origin[a]) / grid.length[a]
                bump *= np.sin(np.pi * xa)
            kick = ic["perturbation"] * rng.standard_normal((2, 3))
            kick[:, grid.dim:] = 0.0
            u = u + bump[..., None] * kick[0]
            w = w + bump[..., None] * kick[1]
        if self.data["material"]["kind"].startswith("IQ"):
            wd = np.zeros_like(wd)
        return FieldState.from_displacement(grid, u, w, xd, wd)

    def surface_model(self):
        s = self.data.get("interface", {}).get("surface", {})
        return SurfaceEnergyModel(s.get("kind", "constant"), s.get("phi0", 1.0), s.get("delta", 0.0),
                                  s.get("k_F", 0.0), s.get("k_w", 0.0), s.get("k_N", 0.0))


def validate(data):
    """All schema and consistency violations of a scenario mapping."""
    if not isinstance(data, dict):
        return [("", "scenario must be a mapping")], False
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(data), key=lambda e: (_path(e), e.message))
    out = [(_path(e), e.message) for e in errs]
    unknown = any(e.validator == "additionalProperties" for e in errs)
    return out, unknown


def parse_scenario(text):
    """Parse and validate scenario text; raise with every violation found."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError([("", f"not valid YAML/JSON: {exc}")]) from None
    errs, unknown = validate(data)
    if errs:
        raise (UnknownKey if unknown else SchemaError)(errs)
    filled = _fill(data, DEFAULTS)
    mat = filled["material"]
    if "c_star" not in mat and isinstance(mat.get("kind"), str):
        # friction is on by default only where the phason law is first order
        mat["c_star"] = 1.0 if mat["kind"].startswith("IQ") else 0.0
    bad = _semantic(filled)
    if bad:
        raise UnitInconsistency(bad)
    return Scenario(_resolve(filled))


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def serialize(scenario):
    """YAML text that reparses to an equal scenario."""
    return yaml.safe_dump(scenario.data, sort_keys=True, default_flow_style=None)
