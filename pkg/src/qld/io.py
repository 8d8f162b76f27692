"""Plain-text writers: legacy VTK snapshots and fixed-column CSV tables.

Numbers are written with ``%.17g`` so files round-trip exactly and repeated
runs are byte-identical.
"""

import csv
import os

import numpy as np

from .constitutive import energy
from .kinematics import gradients

FMT = "%.17g"
INTERFACE_COLUMNS = ("t", "marker", "X1", "X2", "m1", "m2", "kappa", "U", "G")


def _num(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return FMT % float(v)


def write_csv(path, columns, rows):
    """Write a header row then one line per row (sequences or dicts)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else r
            wr.writerow([v if isinstance(v, str) else _num(v) for v in vals])


def read_csv(path):
    """Columns of a CSV written by :func:`write_csv` as float arrays (strings kept as-is)."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = list(rd)
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = col
    return header, out


def write_diagnostics(path, log):
    write_csv(path, log.columns, log.rows)


def write_interface(path, snapshots):
    """One row per (time, marker): position, normal, curvature, speed, driving traction."""
    rows = []
    for c in snapshots:
        m = c.normal()
        k = c.curvature()
        for i in range(c.n):
            rows.append((c.t, i, c.points[i, 0], c.points[i, 1], m[i, 0], m[i, 1], k[i], c.U[i], c.G[i]))
    write_csv(path, INTERFACE_COLUMNS, rows)


def write_report(path, rows):
    """Verification table: check, measured value, threshold, pass flag."""
    write_csv(path, ("check", "value", "threshold", "passed"),
              [(r["check"], r["value"], r["threshold"], "1" if r["passed"] else "0") for r in rows])


def write_vtk(path, grid, state, model=None, title="qld snapshot"):
    """Legacy ASCII STRUCTURED_POINTS file with e, u, w, xdot and wdot.

    The strain energy per unit mass ``e`` is zero when no model is given.
    1-D grids become a single row of points.
    """
    shape = grid.shape
    dims = list(shape) + [1] * (3 - len(shape))
    spacing = list(grid.h) + [1.0] * (3 - grid.dim)
    origin = list(grid.origin) + [0.0] * (3 - grid.dim)
    n = grid.n_nodes
    if model is not None:
        e = energy(model, gradients(state, grid), state.w).reshape(n)
    else:
        e = np.zeros(n)

    # VTK wants x fastest; node arrays are indexed [i, j] with i along x
    def order(a):
        a = np.asarray(a).reshape(shape + a.shape[len(shape):])
        return np.ascontiguousarray(np.moveaxis(a, list(range(grid.dim)), list(range(grid.dim))[::-1])
                                    ).reshape(n, -1)

    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_POINTS",
             "DIMENSIONS %d %d %d" % tuple(dims),
             "SPACING " + " ".join(FMT % v for v in spacing),
             "ORIGIN " + " ".join(FMT % v for v in origin),
             "POINT_DATA %d" % n,
             "SCALARS e double 1", "LOOKUP_TABLE default"]
    lines += [FMT % v for v in order(e.reshape(shape))[:, 0]]
    for name, arr in (("u", state.displacement(grid)), ("w", state.w),
                      ("xdot", state.xdot), ("wdot", state.wdot)):
        lines.append(f"VECTORS {name} double")
        lines += [" ".join(FMT % v for v in row) for row in order(arr)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_header(path):
    """``{'DIMENSIONS': [...], 'SPACING': [...], 'ORIGIN': [...]}`` of a legacy file."""
    out = {}
    with open(path) as fh:
        for line in fh:
            key = line.split(" ", 1)[0]
            if key in ("DIMENSIONS", "SPACING", "ORIGIN"):
                out[key] = [float(v) for v in line.split()[1:]]
            if key == "POINT_DATA":
                break
    return out


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
