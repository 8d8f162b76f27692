"""Time integration and static equilibria of the coupled balance laws.

The spatial discretization is variational: the total potential energy is the
corner quadrature of ``rho0 e`` (see :mod:`qld.stencil`) plus body-force,
traction and boundary-potential terms, and nodal forces are its exact
negative gradient.  Momentum balance therefore reads

    M rho0 xddot = -dV/dx,        M rho_bar wddot = -dV/dw

with lumped nodal volumes ``M``; interior rows are the flux-difference forms
of ``rho0 b + Div P`` and ``-z + Div S``.
"""

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import algebra as alg
from .constitutive import moment_residual
from .errors import NoConvergence, OrientationViolation, StabilityViolation
from .kinematics import DeformationPoint, FieldState, compatibility_residual
from .stencil import CornerOperator

FACES = {"xmin": (0, 0), "xmax": (0, 1), "ymin": (1, 0), "ymax": (1, 1)}
BC_KINDS = ("dirichlet", "traction", "potential", "periodic")
INTEGRATORS = ("verlet", "split_verlet_friction", "explicit_phason_diffusion", "discrete_gradient")
# Gauss nodes on [0, 1]; exact for the averaged force of energies up to quartic
_GAUSS = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


# ---------------------------------------------------------------- boundary data

@dataclass(frozen=True)
class ChannelBC:
    """Boundary condition of one channel on one face.

    dirichlet: ``value`` (constant Vec3 displacement / phason value), or
        ``affine = (A, c)`` giving ``A X + c`` (placement for the phonon
        channel, phason field for the phason channel), or ``fn(X, t)``
        returning the same.
    traction: dead load ``value`` per unit reference area.
    potential: quadratic well ``1/2 stiffness |f - anchor|^2`` per unit area,
        where ``f`` is the placement (phonon) or phason field, and ``anchor``
        defaults to the reference position (phonon) or zero (phason).
    """

    kind: str = "traction"
    value: tuple = (0.0, 0.0, 0.0)
    affine: tuple = None
    fn: object = None
    stiffness: float = 0.0
    anchor: tuple = None

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "potential" and self.stiffness < 0:
            raise ValueError("boundary potential stiffness must be non-negative")


@dataclass(frozen=True, eq=False)
class BoundaryConditions:
    """Per-face, per-channel conditions plus a uniform body force.

    ``faces`` maps a face name (xmin, xmax, ymin, ymax) to a dict with keys
    ``phonon`` and ``phason`` holding :class:`ChannelBC`.  Omitted bounded
    faces are traction-free; faces of periodic axes must be periodic.
    Dirichlet data win at nodes shared by two faces.
    """

    faces: dict = field(default_factory=dict)
    body_force: tuple = (0.0, 0.0, 0.0)

    def channel(self, face, ch):
        return self.faces.get(face, {}).get(ch)

    @classmethod
    def periodic(cls, body_force=(0.0, 0.0, 0.0)):
        return cls({}, body_force)

    @classmethod
    def clamped_affine(cls, grid, A, a, Gw, c):
        """Dirichlet on every bounded face: ``x = A X + a`` and ``w = Gw X + c``."""
        faces = {}
        for name, (axis, _) in FACES.items():
            if axis < grid.dim and not grid.periodic[axis]:
                faces[name] = {"phonon": ChannelBC("dirichlet", affine=(np.asarray(A), np.asarray(a))),
                               "phason": ChannelBC("dirichlet", affine=(np.asarray(Gw), np.asarray(c)))}
        return cls(faces)


@dataclass
class SimConfig:
    dt: float
    t_end: float
    integrator: str = "verlet"
    safety: float = 0.5
    output_every: int = 1
    record_every: int = 0
    implicit_phason: bool = False
    max_steps: int = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.safety <= 0:
            raise ValueError("safety factor must be positive")

    @property
    def n_steps(self):
        n = int(round(self.t_end / self.dt))
        return n if self.max_steps is None else min(n, self.max_steps)


DIAG_COLUMNS = ("t", "H", "px", "py", "pz", "mux", "muy", "muz", "dissipation", "dissipation_min")
RESIDUAL_COLUMNS = ("max_moment", "max_compat_u", "max_compat_w")


class DiagnosticsLog:
    """Append-only time series of integral quantities."""

    def __init__(self, extra_columns=()):
        self.columns = DIAG_COLUMNS + tuple(extra_columns)
        self.rows = []

    def append(self, **row):
        if self.rows and not row["t"] >= self.rows[-1][0]:
            raise ValueError("diagnostics time stamps must be monotone")
        self.rows.append(tuple(float(row.get(c, 0.0)) for c in self.columns))

    def column(self, name):
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def __len__(self):
        return len(self.rows)


# ---------------------------------------------------------------- assembled system

def _face_nodes(grid, face):
    axis, side = FACES[face]
    idx = np.arange(grid.n_nodes).reshape(grid.shape)
    sl = [slice(None)] * grid.dim
    sl[axis] = -1 if side else 0
    nodes = idx[tuple(sl)].ravel()
    # tributary area of each face node (trapezoid along the face)
    if grid.dim == 1:
        area = np.ones(1)
    else:
        other = 1 - axis
        area = np.full(grid.shape[other], grid.h[other])
        if not grid.periodic[other]:
            area[0] *= 0.5
            area[-1] *= 0.5
    return nodes, area


class System:
    """Grid, model and boundary data bound together with cached operators."""

    def __init__(self, grid, model, bc, gamma=None, g=None):
        self.grid, self.model, self.bc = grid, model, bc
        self.gamma, self.g = gamma, g
        self.op = CornerOperator(grid)
        self.n = grid.n_nodes
        self.X = grid.reference_coords().reshape(self.n, 3)
        self.M = self.op.mass
        self.body = np.asarray(bc.body_force, float)
        self._check_faces()
        self.fixed = {"phonon": np.zeros(self.n, bool), "phason": np.zeros(self.n, bool)}
        self.dirichlet = {"phonon": [], "phason": []}
        self.loads = {"phonon": np.zeros((self.n, 3)), "phason": np.zeros((self.n, 3))}
        self.well_k = {"phonon": np.zeros(self.n), "phason": np.zeros(self.n)}
        self.well_anchor = {"phonon": self.X.copy(), "phason": np.zeros((self.n, 3))}
        for face in FACES:
            axis, _ = FACES[face]
            if axis >= grid.dim or grid.periodic[axis]:
                continue
            nodes, area = _face_nodes(grid, face)
            for ch in ("phonon", "phason"):
                chan_bc = bc.channel(face, ch)
                if chan_bc is None or chan_bc.kind == "traction":
                    if chan_bc is not None:
                        self.loads[ch][nodes] += area[:, None] * np.asarray(chan_bc.value, float)
                elif chan_bc.kind == "dirichlet":
                    self.fixed[ch][nodes] = True
                    self.dirichlet[ch].append((nodes, chan_bc))
                elif chan_bc.kind == "potential":
                    self.well_k[ch][nodes] += area * chan_bc.stiffness
                    if chan_bc.anchor is not None:
                        self.well_anchor[ch][nodes] = np.asarray(chan_bc.anchor, float)
        for ch in ("phonon", "phason"):
            fx = self.fixed[ch]
            self.loads[ch][fx] = 0.0
            self.well_k[ch][fx] = 0.0
        self.free = {ch: ~self.fixed[ch] for ch in self.fixed}

    def _check_faces(self):
        for face, chans in self.bc.faces.items():
            if face not in FACES:
                raise ValueError(f"unknown face {face!r}")
            axis, _ = FACES[face]
            if axis >= self.grid.dim:
                raise ValueError(f"face {face!r} does not exist on a {self.grid.dim}-D grid")
            for ch, chan_bc in chans.items():
                if ch not in ("phonon", "phason"):
                    raise ValueError(f"unknown channel {ch!r}")
                per = self.grid.periodic[axis]
                if per != (chan_bc.kind == "periodic"):
                    raise ValueError(f"face {face!r}: periodic kind must match the grid's periodic flag")

    # -- boundary values ---------------------------------------------------

    def dirichlet_values(self, ch, t):
        """Prescribed placement (phonon) or phason value at fixed nodes."""
        out = {}
        for nodes, chan_bc in self.dirichlet[ch]:
            X = self.X[nodes]
            if chan_bc.fn is not None:
                val = np.asarray(chan_bc.fn(X, t), float)
            elif chan_bc.affine is not None:
                A, c = chan_bc.affine
                val = X @ np.asarray(A, float).T + np.asarray(c, float)
            else:
                val = np.broadcast_to(np.asarray(chan_bc.value, float), X.shape)
                if ch == "phonon":
                    val = X + val
            out_nodes = nodes
            for k, nd in enumerate(out_nodes):
                out[int(nd)] = val[k]
        if not out:
            return np.zeros(0, int), np.zeros((0, 3))
        nodes = np.array(sorted(out))
        return nodes, np.array([out[k] for k in nodes])

    def apply_dirichlet(self, x, w, t, xdot=None, wdot=None, dt=None):
        for ch, f, fd in (("phonon", x, xdot), ("phason", w, wdot)):
            nodes, vals = self.dirichlet_values(ch, t)
            if nodes.size:
                if fd is not None and dt is not None:
                    _, prev = self.dirichlet_values(ch, t - dt)
                    fd[nodes] = (vals - prev) / dt
                f[nodes] = vals

    # -- fields and energy -------------------------------------------------

    def corner_fields(self, x, w):
        op = self.op
        F = alg.EYE + op.corner_gradient(x - self.X)
        N = op.corner_gradient(w)
        wc = op.corner_values(w)
        J = alg.det(F)
        if np.any(~(J > 0)):
            c = int(np.argmin(J))
            raise OrientationViolation(f"det F <= 0 at corner of node {op.corner_node[c]}",
                                       node=int(op.corner_node[c]))
        return F, N, wc

    def potential(self, x, w):
        """Total potential energy: bulk + body force + tractions + wells."""
        F, N, wc = self.corner_fields(x, w)
        W = self.model.density(F, wc, N, self.gamma, self.g)
        u = x - self.X
        V = self.op.weight * np.sum(W)
        V -= self.model.rho0 * np.sum(self.M * (u @ self.body))
        V -= np.sum(self.loads["phonon"] * u) + np.sum(self.loads["phason"] * w)
        V += 0.5 * np.sum(self.well_k["phonon"] * np.sum((x - self.well_anchor["phonon"]) ** 2, axis=1))
        V += 0.5 * np.sum(self.well_k["phason"] * np.sum((w - self.well_anchor["phason"]) ** 2, axis=1))
        return V

    def forces(self, x, w, want_energy=False):
        """Nodal ``(-dV/dx, -dV/dw)`` and optionally ``V``."""
        F, N, wc = self.corner_fields(x, w)
        W, P, z, S = self.model.density_derivs(F, wc, N, self.gamma, self.g)
        op = self.op
        fx = op.flux_divergence(P)
        fw = op.flux_divergence(S) - op.scatter(z)
        fx += self.model.rho0 * self.M[:, None] * self.body + self.loads["phonon"]
        fw += self.loads["phason"]
        fx -= self.well_k["phonon"][:, None] * (x - self.well_anchor["phonon"])
        fw -= self.well_k["phason"][:, None] * (w - self.well_anchor["phason"])
        if not want_energy:
            return fx, fw
        u = x - self.X
        V = op.weight * np.sum(W)
        V -= self.model.rho0 * np.sum(self.M * (u @ self.body))
        V -= np.sum(self.loads["phonon"] * u) + np.sum(self.loads["phason"] * w)
        V += 0.5 * np.sum(self.well_k["phonon"] * np.sum((x - self.well_anchor["phonon"]) ** 2, axis=1))
        V += 0.5 * np.sum(self.well_k["phason"] * np.sum((w - self.well_anchor["phason"]) ** 2, axis=1))
        return fx, fw, V

    def kinetic(self, xdot, wdot):
        m = self.model
        return 0.5 * np.sum(self.M * (m.rho0 * np.sum(xdot ** 2, axis=1)
                                      + m.rho_bar * np.sum(wdot ** 2, axis=1)))

    # -- linear operators ----------------------------------------------------

    @functools.cached_property
    def laplacian(self):
        """Scalar stiffness ``G^T W G`` acting on one component."""
        return self.op.stiffness().tocsr()

    def viscous_matrix(self):
        """``c* M + omega L`` on flattened phason dofs (n*3)."""
        m = self.model
        cs = np.asarray(m.c_star, float)
        cmat = cs if cs.ndim == 2 else cs * np.eye(3)
        A = sp.kron(sp.diags(self.M), sp.csr_matrix(cmat))
        if m.omega > 0:
            A = A + m.omega * sp.kron(self.laplacian, sp.identity(3))
        return A.tocsc()

    @functools.cached_property
    def tangent_matrix(self):
        """Natural-state Hessian of the bulk energy on ``[x (n*3), w (n*3)]``."""
        d = self.grid.dim
        T = self.model.tangent().reshape(2, 3, 3, 2, 3, 3)  # (field, i, A, field, j, B)
        Tr = T[:, :, :d][..., :d]  # active reference axes only
        # corner block rows ordered (field, a, i)
        blk = np.transpose(Tr, (0, 2, 1, 3, 5, 4)).reshape(2 * d * 3, 2 * d * 3)
        op = self.op
        Gf = sp.kron(op.G, sp.identity(3)).tocsr()
        nc = op.n_corners
        # reorder per-corner rows from (field, corner, a, i) to (corner, field, a, i)
        rows = np.arange(2 * nc * d * 3).reshape(2, nc, d * 3)
        perm = np.transpose(rows, (1, 0, 2)).ravel()
        G2 = sp.block_diag([Gf, Gf]).tocsr()[perm]
        D = sp.kron(sp.identity(nc), sp.csr_matrix(blk)) * op.weight
        H = (G2.T @ D @ G2).tocsr()
        if self.model.alpha > 0:
            a = self.model.alpha * np.concatenate([np.zeros(3 * self.n), np.repeat(self.M, 3)])
            H = H + sp.diags(a)
        wells = np.concatenate([np.repeat(self.well_k["phonon"], 3), np.repeat(self.well_k["phason"], 3)])
        return (H + sp.diags(wells)).tocsr()


@functools.lru_cache(maxsize=16)
def _system(grid, model, bc):
    return System(grid, model, bc)


def system_for(grid, model, bc):
    return _system(grid, model, bc)


def _flat(state, sysm):
    n = sysm.n
    return (state.x.reshape(n, 3).copy(), state.xdot.reshape(n, 3).copy(),
            state.w.reshape(n, 3).copy(), state.wdot.reshape(n, 3).copy())


def _to_state(sysm, x, xd, w, wd, t):
    s = sysm.grid.shape + (3,)
    return FieldState(x.reshape(s), xd.reshape(s), w.reshape(s), wd.reshape(s), float(t))


# ---------------------------------------------------------------- stability

def stability_bounds(grid, model, safety=0.5, implicit_phason=False):
    """``(hyperbolic bound, parabolic bound)``; ``inf`` where not applicable."""
    hmin = min(grid.h)
    c_ph, c_w = model.wave_speeds(grid.dim)
    c_max = max(c_ph, c_w)
    hyp = safety * hmin / c_max if c_max > 0 else math.inf
    par = math.inf
    if model.rho_bar == 0 and not implicit_phason:
        Kmax = model.phason_stiffness_max()
        cs = np.asarray(model.c_star, float)
        cmin = float(np.linalg.eigvalsh(cs).min()) if cs.ndim == 2 else float(cs)
        if Kmax > 0:
            par = safety * (cmin * hmin ** 2 + 4 * grid.dim * model.omega) / (2 * grid.dim * Kmax)
    return hyp, par


def check_stability(grid, model, dt, safety=0.5, implicit_phason=False):
    hyp, par = stability_bounds(grid, model, safety, implicit_phason)
    if dt > hyp:
        raise StabilityViolation(f"dt = {dt:.3e} exceeds the wave bound {hyp:.3e}")
    if dt > par:
        raise StabilityViolation(f"dt = {dt:.3e} exceeds the diffusion bound {par:.3e}")


# ---------------------------------------------------------------- integrators

class _Stepper:
    """Integrator state shared by the public step functions and :func:`simulate`."""

    def __init__(self, sysm, integrator, dt, implicit_phason=False):
        self.s, self.dt, self.kind = sysm, dt, integrator
        self.implicit = implicit_phason
        m = sysm.model
        self.inv_mx = 1.0 / (m.rho0 * sysm.M)
        self.inv_mw = 1.0 / (m.rho_bar * sysm.M) if m.rho_bar > 0 else None
        self._solver = None
        self.cache = None  # forces at the current state

    def _free_solver(self, A):
        idx = np.flatnonzero(np.repeat(self.s.free["phason"], 3))
        sol = spla.factorized(A[idx][:, idx].tocsc())
        return idx, sol

    def _rate_solver(self):
        """Solver for the first-order phason law ``A wdot = f_w``."""
        if self._solver is None:
            A = self.s.viscous_matrix()
            if self.implicit:
                H = self.s.tangent_matrix
                nw = 3 * self.s.n
                A = (A + self.dt * H[nw:, nw:]).tocsc()
            self._solver = self._free_solver(A)
        return self._solver

    def _friction_solver(self):
        """Implicit half-step ``(rho_bar M + dt/2 A) wdot' = rho_bar M wdot``."""
        if self._solver is None:
            A = self.s.viscous_matrix()
            B = sp.kron(sp.diags(self.s.model.rho_bar * self.s.M), sp.identity(3)) + 0.5 * self.dt * A
            self._solver = self._free_solver(B.tocsc())
        return self._solver

    def phason_rate(self, fw):
        idx, sol = self._rate_solver()
        wd = np.zeros(3 * self.s.n)
        wd[idx] = sol(fw.ravel()[idx])
        return wd.reshape(-1, 3)

    def _friction(self, wd):
        m = self.s.model
        cs = np.asarray(m.c_star, float)
        if m.omega == 0 and cs.ndim == 0:
            return wd * math.exp(-float(cs) * 0.5 * self.dt / m.rho_bar)
        idx, sol = self._friction_solver()
        rhs = (np.repeat(m.rho_bar * self.s.M, 3) * wd.ravel())
        out = wd.ravel().copy()
        out[idx] = sol(rhs[idx])
        return out.reshape(-1, 3)

    def forces(self, x, w):
        fx, fw, self.V = self.s.forces(x, w, want_energy=True)
        return fx, fw

    def _dg_setup(self):
        """Free-dof index and factorized quasi-Newton matrix ``D + H/2``."""
        if self._solver is None:
            s, dt, m = self.s, self.dt, self.s.model
            Mx = np.repeat(s.M, 3)
            dx = 2 * m.rho0 * Mx / dt ** 2
            Aw = s.viscous_matrix() / dt if (m.omega > 0 or np.any(np.asarray(m.c_star) != 0)) \
                else sp.csc_matrix((3 * s.n, 3 * s.n))
            Dw = sp.diags(2 * m.rho_bar * Mx / dt ** 2) + Aw
            D = sp.block_diag([sp.diags(dx), Dw]).tocsr()
            free = np.concatenate([np.repeat(s.free["phonon"], 3), np.repeat(s.free["phason"], 3)])
            idx = np.flatnonzero(free)
            J = (D + 0.5 * s.tangent_matrix).tocsr()[idx][:, idx].tocsc()
            self._solver = (idx, spla.factorized(J), Aw.tocsr())
        return self._solver

    def _avf(self, x, w, dx, dw):
        """Averaged force along the straight path from ``(x, w)`` to ``(x+dx, w+dw)``."""
        fx = np.zeros_like(x)
        fw = np.zeros_like(w)
        for sg in _GAUSS:
            gx, gw = self.s.forces(x + sg * dx, w + sg * dw)
            fx += 0.5 * gx
            fw += 0.5 * gw
        return fx, fw

    def _dg_step(self, x, xd, w, wd, t, tol=1e-13, max_iter=60):
        """Energy-stable step: the energy change equals minus the friction work exactly.

        Unknowns are the increments ``dx, dw``; rates at the new step follow the
        trapezoidal rule (IIC) or equal the mean rate ``dw/dt`` (IQ).
        """
        s, dt, m = self.s, self.dt, self.s.model
        idx, solve, Aw = self._dg_setup()
        n3 = 3 * s.n
        Mx = np.repeat(s.M, 3)
        xe, we = x.copy(), w.copy()
        s.apply_dirichlet(xe, we, t + dt)
        d = np.concatenate([(xe - x).ravel(), (we - w).ravel()])
        d[idx] = 0.0
        d[idx[idx < n3]] = dt * xd.ravel()[idx[idx < n3]]
        if m.rho_bar > 0:
            d[idx[idx >= n3]] = dt * wd.ravel()[idx[idx >= n3] - n3]
        inertia_x = 2 * m.rho0 * Mx * xd.ravel() / dt
        inertia_w = 2 * m.rho_bar * Mx * wd.ravel() / dt
        dx2 = 2 * m.rho0 * Mx / dt ** 2
        dw2 = 2 * m.rho_bar * Mx / dt ** 2
        scale = None
        prev = np.inf
        for _ in range(max_iter):
            dx, dw = d[:n3], d[n3:]
            fx, fw = self._avf(x, w, dx.reshape(-1, 3), dw.reshape(-1, 3))
            r = np.concatenate([dx2 * dx - inertia_x - fx.ravel(),
                                dw2 * dw + Aw @ dw - inertia_w - fw.ravel()])[idx]
            if scale is None:
                scale = max(np.abs(inertia_x).max(), np.abs(inertia_w).max(), np.abs(fx).max(),
                            np.abs(fw).max(), np.abs(dx2 * dx).max(), 1e-300)
            res = np.abs(r).max()
            # stop at the tolerance, or once rounding makes the residual stagnate
            if res <= tol * scale or (res <= 1e-10 * scale and res >= 0.5 * prev):
                break
            prev = res
            d[idx] -= solve(r)
        else:
            raise NoConvergence(f"discrete-gradient solve stalled at residual {np.abs(r).max():.3e}; "
                                "reduce dt")
        dx, dw = d[:n3].reshape(-1, 3), d[n3:].reshape(-1, 3)
        x_new, w_new = x + dx, w + dw
        xd_new = 2 * dx / dt - xd
        wd_new = 2 * dw / dt - wd if m.rho_bar > 0 else dw / dt
        # rates of prescribed dofs are the mean rates of the data
        fixed_x, fixed_w = s.fixed["phonon"], s.fixed["phason"]
        xd_new[fixed_x] = dx[fixed_x] / dt
        wd_new[fixed_w] = dw[fixed_w] / dt
        self.cache = self.forces(x_new, w_new)
        return x_new, xd_new, w_new, wd_new, dx / dt, dw / dt

    def step(self, x, xd, w, wd, t):
        """Advance one step; returns new arrays plus half-step velocities."""
        if self.kind == "discrete_gradient":
            return self._dg_step(x, xd, w, wd, t)
        s, dt = self.s, self.dt
        fx, fw = self.cache if self.cache is not None else self.forces(x, w)
        fixed_x, fixed_w = s.fixed["phonon"], s.fixed["phason"]
        if self.kind == "split_verlet_friction":
            wd = self._friction(wd)
        vh = xd + 0.5 * dt * fx * self.inv_mx[:, None]
        vh[fixed_x] = 0.0
        if self.kind == "explicit_phason_diffusion":
            wdh = self.phason_rate(fw)
            w_new = w + dt * wdh
        else:
            wdh = wd + 0.5 * dt * fw * self.inv_mw[:, None]
            wdh[fixed_w] = 0.0
            w_new = w + dt * wdh
        x_new = x + dt * vh
        xd_new = vh.copy()
        wd_new = wdh.copy()
        s.apply_dirichlet(x_new, w_new, t + dt, xd_new, wd_new, dt)
        vh_rec = xd_new.copy()
        wdh_rec = wd_new.copy()
        fx, fw = self.forces(x_new, w_new)
        xd_new = xd_new + 0.5 * dt * fx * self.inv_mx[:, None]
        xd_new[fixed_x] = vh_rec[fixed_x]
        if self.kind == "explicit_phason_diffusion":
            wd_new = self.phason_rate(fw)
            wd_new[fixed_w] = wdh_rec[fixed_w]
        else:
            wd_new = wd_new + 0.5 * dt * fw * self.inv_mw[:, None]
            wd_new[fixed_w] = wdh_rec[fixed_w]
            if self.kind == "split_verlet_friction":
                wd_new = self._friction(wd_new)
        self.cache = (fx, fw)
        return x_new, xd_new, w_new, wd_new, vh_rec, wdh_rec


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


def step_conservative(state, grid, model, bc, dt, safety=0.5):
    """One velocity-Verlet step of the conservative IIC equations."""
    _require(model.rho_bar > 0, "conservative stepping needs phason inertia (IIC kind)")
    _require(float(np.max(model.c_star)) == 0 and model.omega == 0,
             "conservative stepping needs c_star = omega = 0")
    check_stability(grid, model, dt, safety)
    sysm = system_for(grid, model, bc)
    st = _Stepper(sysm, "verlet", dt)
    x, xd, w, wd = _flat(state, sysm)
    x, xd, w, wd, _, _ = st.step(x, xd, w, wd, state.t)
    return _to_state(sysm, x, xd, w, wd, state.t + dt)


def _has_friction(model):
    return float(np.max(model.c_star)) > 0 or model.omega > 0


def step_dissipative(state, grid, model, bc, dt, safety=0.5, implicit_phason=False, scheme="discrete_gradient"):
    """One step with phason friction.

    The default ``scheme="discrete_gradient"`` solves the implicit
    averaged-force step, whose energy drop equals the friction work so H
    never rises.  ``scheme="split"`` keeps velocity Verlet in the phonon
    channel and advances the phason by forward Euler (IQ, or backward Euler
    on the natural stiffness with ``implicit_phason``) or by Strang
    splitting with the friction flow (IIC).  Verlet only conserves a nearby
    energy, so H then oscillates at O(dt^2) on top of the decay.
    """
    sysm = system_for(grid, model, bc)
    if model.rho_bar == 0:
        _require(_has_friction(model), "IQ stepping needs c_star > 0")
    if scheme == "discrete_gradient":
        kind = scheme
        implicit_phason = True
    elif scheme == "split":
        kind = "explicit_phason_diffusion" if model.rho_bar == 0 else "split_verlet_friction"
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    check_stability(grid, model, dt, safety, implicit_phason)
    st = _Stepper(sysm, kind, dt, implicit_phason and kind != "discrete_gradient")
    x, xd, w, wd = _flat(state, sysm)
    x, xd, w, wd, _, _ = st.step(x, xd, w, wd, state.t)
    return _to_state(sysm, x, xd, w, wd, state.t + dt)


def total_energy(state, grid, model, bc):
    """Kinetic plus potential energy (bulk, body force, tractions, wells)."""
    sysm = system_for(grid, model, bc)
    x, xd, w, wd = _flat(state, sysm)
    return sysm.kinetic(xd, wd) + sysm.potential(x, w)


def dissipation_rate(sysm, state_arrays):
    """Total viscous dissipation ``int z_v . wdot + S_v : grad wdot`` and its nodal density."""
    x, xd, w, wd = state_arrays
    m = sysm.model
    op = sysm.op
    F, N, wc = sysm.corner_fields(x, w)
    Nd = op.corner_gradient(wd)
    _, _, dens = m.viscous(F, wc, N, op.corner_values(wd), Nd)
    return op.weight * float(np.sum(dens)), dens


@dataclass
class Frame:
    """Recorded step: state at ``t`` and the half-step velocities leaving it."""

    t: float
    x: np.ndarray
    xdot: np.ndarray
    w: np.ndarray
    wdot: np.ndarray
    v_half: np.ndarray = None
    wdot_half: np.ndarray = None


@dataclass
class Trajectory:
    grid: object
    model: object
    bc: object
    dt: float
    frames: list = field(default_factory=list)


def simulate(state, grid, model, bc, config, log=None, record=False, on_step=None):
    """Integrate from ``state`` per ``config``.

    Returns ``(final state, DiagnosticsLog, Trajectory or None)``.  The
    trajectory (when ``record``) stores every ``record_every``-th step (every
    step if 0) with the half-step velocities the Noether checks use.
    """
    sysm = system_for(grid, model, bc)
    kind = config.integrator
    if kind == "verlet":
        _require(model.rho_bar > 0, "verlet needs phason inertia (IIC kind)")
    if kind == "explicit_phason_diffusion":
        _require(model.rho_bar == 0, "explicit phason diffusion is the IQ integrator")
    if kind == "split_verlet_friction":
        _require(model.rho_bar > 0, "split friction needs phason inertia (IIC kind)")
    if kind == "discrete_gradient":
        _require(model.rho_bar > 0 or _has_friction(model), "IQ stepping needs c_star > 0")
    implicit = config.implicit_phason or kind == "discrete_gradient"
    check_stability(grid, model, config.dt, config.safety, implicit)
    st = _Stepper(sysm, kind, config.dt, config.implicit_phason)
    x, xd, w, wd = _flat(state, sysm)
    t = state.t
    sysm.apply_dirichlet(x, w, t)
    if kind == "explicit_phason_diffusion":
        st.cache = st.forces(x, w)
        wd = st.phason_rate(st.cache[1])
    log = DiagnosticsLog() if log is None else log
    traj = Trajectory(grid, model, bc, config.dt) if record else None
    every = max(config.record_every, 1)

    def emit(t, x, xd, w, wd):
        if st.cache is None:
            st.cache = st.forces(x, w)
        H = sysm.kinetic(xd, wd) + st.V
        p = model.rho0 * (sysm.M @ xd)
        mu = model.rho_bar * (sysm.M @ wd)
        diss, dmin = 0.0, 0.0
        if kind != "verlet":
            diss, dens = dissipation_rate(sysm, (x, xd, w, wd))
            dmin = float(np.min(dens))
        extra = {}
        if any(c in log.columns for c in RESIDUAL_COLUMNS):
            extra = residual_columns(sysm, x, w)
        log.append(t=t, H=H, px=p[0], py=p[1], pz=p[2], mux=mu[0], muy=mu[1], muz=mu[2],
                   dissipation=diss, dissipation_min=dmin, **extra)

    emit(t, x, xd, w, wd)
    for n in range(config.n_steps):
        xn, xdn, wn, wdn = x, xd, w, wd
        x, xd, w, wd, vh, wdh = st.step(x, xd, w, wd, t)
        if record and n % every == 0:
            traj.frames.append(Frame(t, xn, xdn, wn, wdn, vh, wdh))
        t = state.t + (n + 1) * config.dt
        if (n + 1) % max(config.output_every, 1) == 0:
            emit(t, x, xd, w, wd)
        if on_step is not None:
            on_step(n + 1, _to_state(sysm, x, xd, w, wd, t))
    if record:
        traj.frames.append(Frame(t, x, xd, w, wd))
    return _to_state(sysm, x, xd, w, wd, t), log, traj


def residual_columns(sysm, x, w):
    """Max moment-balance residual over corners and max nodal incompatibilities."""
    F, N, wc = sysm.corner_fields(x, w)
    mom = float(alg.norm(moment_residual(sysm.model, DeformationPoint(F, N), wc)).max())
    st = _to_state(sysm, x, np.zeros_like(x), w, np.zeros_like(w), 0.0)
    ru, rw = compatibility_residual(st, sysm.grid)
    return {"max_moment": mom, "max_compat_u": float(ru.max()), "max_compat_w": float(rw.max())}


# ---------------------------------------------------------------- minimization

def minimize_energy(grid, model, bc, init, tol=None, max_iter=2000, gamma=None):
    """Static equilibrium by preconditioned nonlinear conjugate gradients.

    Polak-Ribiere+ directions, a secant line search safeguarded by Armijo
    backtracking, and the sparse natural-state Hessian as preconditioner.
    Converged when the nodal force per unit volume is below ``tol`` (default
    ``1e-8`` times the modulus scale) on both channels.  Raises
    NoConvergence carrying the best state and a residual report.
    """
    sysm = System(grid, model, bc, gamma=gamma) if gamma is not None else system_for(grid, model, bc)
    tol = 1e-8 * model.modulus_scale if tol is None else tol
    n = sysm.n
    x, _, w, _ = _flat(init, sysm)
    sysm.apply_dirichlet(x, w, init.t)
    try:
        sysm.corner_fields(x, w)
    except OrientationViolation:
        x, w = harmonic_lift(sysm, x, w)
    free = np.concatenate([np.repeat(sysm.free["phonon"], 3), np.repeat(sysm.free["phason"], 3)])
    idx = np.flatnonzero(free)
    Mfull = np.concatenate([np.repeat(sysm.M, 3), np.repeat(sysm.M, 3)])

    def unpack(z):
        return z[:3 * n].reshape(n, 3), z[3 * n:].reshape(n, 3)

    def evaluate(z):
        xx, ww = unpack(z)
        fx, fw, V = sysm.forces(xx, ww, want_energy=True)
        g = np.concatenate([fx.ravel(), fw.ravel()])
        return V, g

    H = sysm.tangent_matrix[idx][:, idx]
    reg = 1e-10 * model.modulus_scale * sp.diags(Mfull[idx])
    precond = spla.factorized((H + reg).tocsc())

    def residual(g):
        r = np.abs(g[idx]) / Mfull[idx]
        rx = r[idx < 3 * n]
        rw = r[idx >= 3 * n]
        return (float(rx.max()) if rx.size else 0.0), (float(rw.max()) if rw.size else 0.0)

    z = np.concatenate([x.ravel(), w.ravel()])
    V, g = evaluate(z)
    r = g[idx]
    best = (max(residual(g)), z.copy())
    if max(residual(g)) <= tol:
        return _state_from(sysm, z, init.t)
    pr = precond(r)
    d = pr.copy()
    it = 0
    for it in range(1, max_iter + 1):
        slope0 = -float(r @ d)
        if slope0 >= 0:
            d = pr.copy()
            slope0 = -float(r @ d)
        alpha, V_new, g_new, z_new = _line_search(evaluate, z, idx, d, V, slope0)
        if z_new is None:
            break
        z, V, g = z_new, V_new, g_new
        res = max(residual(g))
        if res < best[0]:
            best = (res, z.copy())
        if res <= tol:
            return _state_from(sysm, z, init.t)
        r_new = g[idx]
        pr_new = precond(r_new)
        beta = max(0.0, float(r_new @ (pr_new - pr)) / float(r @ pr))
        d = pr_new + beta * d
        r, pr = r_new, pr_new
        if float(r @ d) <= 0:
            d = pr.copy()
    rx, rw = residual(evaluate(best[1])[1])
    report = {"iterations": it, "phonon_residual": rx, "phason_residual": rw, "tol": tol}
    raise NoConvergence(f"minimizer stalled at residual {max(rx, rw):.3e} (tol {tol:.3e})",
                        state=_state_from(sysm, best[1], init.t), report=report)


def harmonic_lift(sysm, x, w):
    """Replace free nodal values by the discrete harmonic extension of the fixed ones."""
    L = sysm.laplacian
    out = []
    for ch, f in (("phonon", x - sysm.X), ("phason", w)):
        fr = sysm.free[ch]
        fx = ~fr
        f = f.copy()
        if fx.any() and fr.any():
            Lff = L[fr][:, fr].tocsc()
            rhs = -(L[fr][:, fx] @ f[fx])
            f[fr] = spla.splu(Lff).solve(rhs)
        out.append(f)
    return out[0] + sysm.X, out[1]


def _state_from(sysm, z, t):
    n = sysm.n
    x = z[:3 * n].reshape(n, 3)
    w = z[3 * n:].reshape(n, 3)
    zero = np.zeros((n, 3))
    return _to_state(sysm, x.copy(), zero, w.copy(), zero.copy(), t)


def _line_search(evaluate, z, idx, d, V0, slope0, max_secant=8, max_backtrack=40):
    """Secant iterations on ``phi'(a) = 0`` followed by Armijo backtracking."""
    step = np.zeros_like(z)

    def phi(a):
        step[:] = 0.0
        step[idx] = a * d
        try:
            V, g = evaluate(z + step)
        except OrientationViolation:
            return math.inf, None, None
        return V, g, -float(g[idx] @ d)

    a_prev, s_prev = 0.0, slope0
    a = 1.0
    V, g, s = phi(a)
    for _ in range(max_secant):
        if g is None:
            a *= 0.5
            V, g, s = phi(a)
            continue
        if abs(s) <= 1e-3 * abs(slope0) or s == s_prev:
            break
        a_next = a - s * (a - a_prev) / (s - s_prev)
        if not np.isfinite(a_next) or a_next <= 0:
            break
        a_prev, s_prev = a, s
        a = a_next
        V, g, s = phi(a)
    tol_round = 1e-13 * (abs(V0) + 1.0)
    for _ in range(max_backtrack):
        if g is not None and V <= V0 + 1e-4 * a * slope0 + tol_round:
            out = z.copy()
            out[idx] += a * d
            return a, V, g, out
        a *= 0.5
        V, g, s = phi(a)
    return None, None, None, None


def residual_report(state, grid, model, bc):
    """Max nodal ``|rho0 b + Div P|`` and ``|Div S - z|`` over free nodes."""
    sysm = system_for(grid, model, bc)
    x, _, w, _ = _flat(state, sysm)
    fx, fw = sysm.forces(x, w)
    rx = np.abs(fx) / sysm.M[:, None]
    rw = np.abs(fw) / sysm.M[:, None]
    fxm = rx[sysm.free["phonon"]]
    fwm = rw[sysm.free["phason"]]
    return (float(fxm.max()) if fxm.size else 0.0, float(fwm.max()) if fwm.size else 0.0)
