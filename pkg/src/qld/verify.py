"""Numerical certification of conservation laws and structural identities.

Noether checks compare the discrete charge rate with the discrete flux
divergence.  Charges are built from the half-step velocities that velocity
Verlet produces, so for translation generators the two sides agree to
rounding; other generators converge at the stencil's order.
"""

from dataclasses import dataclass, field

import numpy as np

from . import algebra as alg
from .constitutive import energy, moment_residual, stresses
from .dynamics import (BoundaryConditions, Trajectory, minimize_energy, system_for)
from .errors import NoConvergence
from .kinematics import DeformationPoint, FieldState, gradients, nodal_gradient

GENERATOR_KINDS = ("spatial_translation", "spatial_rotation", "phason_translation",
                   "phason_rotation", "relabeling")


# ---------------------------------------------------------------- generators

@dataclass(frozen=True)
class SymmetryGenerator:
    """Infinitesimal change of observer or relabeling.

    ``spatial_translation``: v = c.  ``spatial_rotation``: v = qdot ^ (x - pivot)
    together with the induced action qdot ^ w on the phason field.
    ``phason_translation``: xi = c.  ``phason_rotation``: xi = qdot ^ w.
    ``relabeling``: material field ``wf`` that is constant (``c``), a rigid
    rotation ``qdot ^ (X - pivot)``, or the discrete curl of a periodic
    stream function (``modes`` = rows of (amplitude, kx, ky, phase)).
    """

    kind: str
    c: tuple = (0.0, 0.0, 0.0)
    qdot: tuple = (0.0, 0.0, 0.0)
    pivot: tuple = (0.0, 0.0, 0.0)
    relabel: str = "constant"
    modes: tuple = ()

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.relabel not in ("constant", "rotation", "curl"):
            raise ValueError(f"unknown relabeling form {self.relabel!r}")

    @property
    def periodic_safe(self):
        """True when the generator fields are periodic in the reference body."""
        if self.kind == "spatial_rotation":
            return False
        if self.kind == "relabeling" and self.relabel == "rotation":
            return False
        return True

    @classmethod
    def curl_of_random_potential(cls, rng, grid, n_modes=3, amplitude=0.1):
        if grid.dim != 2 or not all(grid.periodic):
            raise ValueError("curl relabeling needs a doubly periodic 2-D grid")
        rows = []
        for _ in range(n_modes):
            kx, ky = rng.integers(1, 3, size=2)
            rows.append((amplitude * rng.standard_normal(),
                         2 * np.pi * kx / grid.length[0], 2 * np.pi * ky / grid.length[1],
                         rng.uniform(0, 2 * np.pi)))
        return cls("relabeling", relabel="curl", modes=tuple(rows))

    def material_field(self, grid, X):
        """Nodal relabeling field (zero for observer changes)."""
        out = np.zeros(X.shape)
        if self.kind != "relabeling":
            return out
        if self.relabel == "constant":
            return out + np.asarray(self.c, float)
        if self.relabel == "rotation":
            return alg.cross(np.asarray(self.qdot, float), X - np.asarray(self.pivot, float))
        psi = np.zeros(X.shape[:-1])
        for a, kx, ky, ph in self.modes:
            psi += a * np.sin(kx * X[..., 0] + ph) * np.sin(ky * X[..., 1])
        # discrete curl: its central-difference divergence vanishes identically
        d = nodal_gradient(np.repeat(psi[..., None], 3, axis=-1), grid)[..., 0, :]
        out[..., 0] = d[..., 1]
        out[..., 1] = -d[..., 0]
        return out

    def spatial_field(self, x):
        if self.kind == "spatial_translation":
            return np.zeros_like(x) + np.asarray(self.c, float)
        if self.kind == "spatial_rotation":
            return alg.cross(np.asarray(self.qdot, float), x - np.asarray(self.pivot, float))
        return np.zeros_like(x)

    def phason_action(self, w):
        if self.kind == "phason_translation":
            return np.zeros_like(w) + np.asarray(self.c, float)
        if self.kind in ("phason_rotation", "spatial_rotation"):
            return alg.cross(np.asarray(self.qdot, float), w)
        return np.zeros_like(w)


def discrete_divergence(field_, grid):
    """Central-difference divergence of a nodal vector field."""
    return np.trace(nodal_gradient(field_, grid), axis1=-2, axis2=-1)


# ---------------------------------------------------------------- densities

def lagrangian(model, e, xdot, wdot):
    return (0.5 * model.rho0 * np.sum(xdot ** 2, axis=-1)
            + 0.5 * model.rho_bar * np.sum(wdot ** 2, axis=-1) - model.rho0 * e)


def noether_densities(state, grid, model, gen):
    """Nodal charge density Q and flux F of a generator.

    ``Q = rho0 xdot.(v - F wf) + rho_bar wdot.(xi - grad w wf)`` and
    ``F = L wf - P^T (v - F wf) - S^T (xi - grad w wf)`` with nodal
    gradients and stresses.
    """
    dp = gradients(state, grid)
    b = stresses(model, dp, state.w)
    X = grid.reference_coords()
    wf = gen.material_field(grid, X)
    v = gen.spatial_field(state.x) - np.einsum("...iA,...A->...i", dp.F, wf)
    xi = gen.phason_action(state.w) - np.einsum("...iA,...A->...i", dp.gradW, wf)
    Q = model.rho0 * np.sum(state.xdot * v, axis=-1) + model.rho_bar * np.sum(state.wdot * xi, axis=-1)
    L = lagrangian(model, b.e, state.xdot, state.wdot)
    flux = (L[..., None] * wf - np.einsum("...iA,...i->...A", b.P, v)
            - np.einsum("...iA,...i->...A", b.S, xi))
    return Q, flux


@dataclass
class ConservationReport:
    generator: str
    times: np.ndarray
    charge: np.ndarray
    max_residual: float
    scale: float
    residual_series: np.ndarray = field(default=None, repr=False)
    last_field: np.ndarray = field(default=None, repr=False)
    mask: np.ndarray = field(default=None, repr=False)

    @property
    def relative(self):
        return self.max_residual / self.scale if self.scale > 0 else self.max_residual


def _interior_mask(sysm, gen):
    grid = sysm.grid
    mask = np.ones(grid.shape, bool)
    for a in range(grid.dim):
        sl_lo = [slice(None)] * grid.dim
        sl_hi = [slice(None)] * grid.dim
        sl_lo[a] = 0
        sl_hi[a] = -1
        if not grid.periodic[a] or not gen.periodic_safe:
            mask[tuple(sl_lo)] = False
            mask[tuple(sl_hi)] = False
    return mask.ravel()


def conservation_residual(trajectory, grid, model, gen):
    """Pointwise ``Qdot + Div F`` along a recorded Verlet trajectory.

    The charge at the half step ``k + 1/2`` pairs the half-step velocities
    with the generator evaluated at the start of the step (and with the
    half-step deformation for relabeling terms); the flux is evaluated at
    integer steps with the solver's weak divergence.  Nodes on bounded
    faces, and next to the periodic seam for non-periodic generators, are
    excluded.
    """
    sysm = system_for(grid, model, trajectory.bc)
    op = sysm.op
    n = sysm.n
    dt = trajectory.dt
    frames = trajectory.frames
    Xg = grid.reference_coords()
    wf_nodes = gen.material_field(grid, Xg).reshape(n, 3)
    wf_corner = wf_nodes[op.corner_node]
    mask = _interior_mask(sysm, gen)

    def nodal_F(x):
        return alg.EYE + nodal_gradient((x - sysm.X).reshape(grid.shape + (3,)), grid).reshape(n, 3, 3)

    def charge(k):
        fr, nxt = frames[k], frames[k + 1]
        xh = 0.5 * (fr.x.reshape(n, 3) + nxt.x.reshape(n, 3))
        wh = 0.5 * (fr.w.reshape(n, 3) + nxt.w.reshape(n, 3))
        Fh = nodal_F(xh)
        Nh = nodal_gradient(wh.reshape(grid.shape + (3,)), grid).reshape(n, 3, 3)
        v = gen.spatial_field(fr.x.reshape(n, 3)) - np.einsum("niA,nA->ni", Fh, wf_nodes)
        xi = gen.phason_action(fr.w.reshape(n, 3)) - np.einsum("niA,nA->ni", Nh, wf_nodes)
        vh = fr.v_half.reshape(n, 3)
        wdh = fr.wdot_half.reshape(n, 3)
        return model.rho0 * np.sum(vh * v, axis=1) + model.rho_bar * np.sum(wdh * xi, axis=1)

    def flux_div(k):
        fr = frames[k]
        x = fr.x.reshape(n, 3)
        w = fr.w.reshape(n, 3)
        F, N, wc = sysm.corner_fields(x, w)
        W, P, _, S = model.density_derivs(F, wc, N)
        xd = op.corner_values(fr.xdot.reshape(n, 3))
        wd = op.corner_values(fr.wdot.reshape(n, 3))
        L = (0.5 * model.rho0 * np.sum(xd ** 2, axis=1) + 0.5 * model.rho_bar * np.sum(wd ** 2, axis=1) - W)
        xc = op.corner_values(x)
        v = gen.spatial_field(xc) - np.einsum("ciA,cA->ci", F, wf_corner)
        xi = gen.phason_action(wc) - np.einsum("ciA,cA->ci", N, wf_corner)
        flux = (L[:, None] * wf_corner - np.einsum("ciA,ci->cA", P, v) - np.einsum("ciA,ci->cA", S, xi))
        div = op.flux_divergence(flux[:, None, :])[:, 0]
        if gen.kind == "spatial_rotation" and grid.dim < 3:
            # inactive columns of F stay e_B, so rotations tilting them act
            # as a source: P : (spin(qdot) F) over the inactive columns
            Wq = alg.spin(np.asarray(gen.qdot, float))
            sigma = np.einsum("ciB,ij,cjB->c", P[:, :, grid.dim:], Wq, F[:, :, grid.dim:])
            div = div - op.scatter(sigma)[:, 0]
        return div / sysm.M

    usable = [k for k in range(len(frames) - 1) if frames[k].v_half is not None]
    charges = {k: charge(k) for k in usable}
    times, totals, series = [], [], []
    max_res = 0.0
    scale = 0.0
    last = None
    for k in usable:
        times.append(frames[k].t + 0.5 * dt)
        totals.append(float(sysm.M @ charges[k]))
        if k - 1 in charges:
            qdot = (charges[k] - charges[k - 1]) / dt
            div = flux_div(k)
            last = qdot + div
            r = np.abs(last)[mask]
            series.append(float(r.max()) if r.size else 0.0)
            max_res = max(max_res, series[-1])
            scale = max(scale, float(np.abs(div[mask]).max()) if r.size else 0.0)
    return ConservationReport(gen.kind, np.array(times), np.array(totals), max_res, scale,
                              np.array(series), last, mask)


def refinement_order(errors, hs):
    """Least-squares slope of log(error) against log(h)."""
    e = np.log(np.asarray(errors, float))
    h = np.log(np.asarray(hs, float))
    return float(np.polyfit(h, e, 1)[0])


# ---------------------------------------------------------------- invariance

@dataclass
class InvarianceReport:
    invariance_residual: float
    moment_residual: float
    witness: tuple
    witness_gap: float
    n_samples: int


def invariance_probe(model, n_samples=100, rng=None, amplitude=0.3, rotations=None):
    """Sample states and rotations; compare energies and the moment residual.

    Residuals are relative to the energy scale of each sample.  The
    nonconvexity witness compares ``e`` at ``F1 = I`` and its half-turn
    ``F2 = diag(-1, -1, 1)`` with ``e`` at their mean (a singular F, so
    the raw density is used).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    inv = mom = 0.0
    for k in range(n_samples):
        F = alg.EYE + amplitude * rng.standard_normal((3, 3))
        while alg.det(F) <= 0.1:
            F = alg.EYE + amplitude * rng.standard_normal((3, 3))
        N = amplitude * rng.standard_normal((3, 3))
        w = rng.standard_normal(3)
        Q = alg.random_rotation(rng) if rotations is None else rotations[k % len(rotations)]
        dp = DeformationPoint(F, N)
        e0 = energy(model, dp, w)
        e1 = energy(model, DeformationPoint(Q @ F, Q @ N), Q @ w)
        _, dF, dw, dN = model.density_derivs(F, w, N)
        scale = (alg.norm(dF) * alg.norm(F) + alg.norm(dN) * alg.norm(N)
                 + np.linalg.norm(dw) * np.linalg.norm(w)) / model.rho0 + abs(e0) + 1e-300
        inv = max(inv, abs(e1 - e0) / scale)
        mom = max(mom, float(alg.norm(moment_residual(model, dp, w))) / scale)
    F1 = np.eye(3)
    F2 = np.diag([-1.0, -1.0, 1.0])
    z = np.zeros(3)
    Z = np.zeros((3, 3))
    e1 = model.density(F1, z, Z) / model.rho0
    e2 = model.density(F2, z, Z) / model.rho0
    em = model.density(0.5 * (F1 + F2), z, Z) / model.rho0
    return InvarianceReport(inv, mom, (F1, F2), float(em - 0.5 * (e1 + e2)), n_samples)


# ---------------------------------------------------------------- universal deformations

def block_matrix(model):
    """18x18 matrix ``[[dP/dF, dP/dgradW], [dS/dF, dS/dgradW]]``."""
    return model.tangent()


def universal_affine_check(model, grid=None, rng=None, amplitude=0.05, tol=1e-11, perturb=0.05):
    """Block determinant and affinity of the equilibrium under affine data.

    Returns ``(det, scaled_det, affinity_residual)``.  The scaled
    determinant divides by the product of the diagonal magnitudes (the
    Hadamard ratio, in (0, 1] for positive definite blocks).  The
    affinity residual is the max interior deviation of the cell gradients
    from the imposed constants after :func:`minimize_energy`, started from
    the harmonic lift of the data plus a smooth interior bump; it is ``nan``
    when the minimizer fails.
    """
    from .stencil import CornerOperator
    from .dynamics import harmonic_lift

    T = block_matrix(model)
    d = float(np.linalg.det(T))
    diag = np.abs(np.diag(T))
    scale = float(np.prod(diag)) if np.all(diag > 0) else float(np.abs(T).max()) ** 18 or 1.0
    if grid is None:
        return d, d / scale, float("nan")
    rng = np.random.default_rng(0) if rng is None else rng
    A = alg.EYE.copy()
    Gw = np.zeros((3, 3))
    A[:, :grid.dim] += amplitude * rng.standard_normal((3, grid.dim))
    Gw[:, :grid.dim] = amplitude * rng.standard_normal((3, grid.dim))
    a = 0.1 * rng.standard_normal(3)
    c = 0.1 * rng.standard_normal(3)
    bc = BoundaryConditions.clamped_affine(grid, A, a, Gw, c)
    sysm = system_for(grid, model, bc)
    x = sysm.X.copy()
    w = np.zeros_like(x)
    sysm.apply_dirichlet(x, w, 0.0)
    x, w = harmonic_lift(sysm, x, w)
    bump = np.prod(np.sin(np.pi * (sysm.X[:, :grid.dim] - np.array(grid.origin))
                          / np.array(grid.length)), axis=1)
    kick = perturb * rng.standard_normal((2, 3))
    kick[:, grid.dim:] = 0.0
    x = x + bump[:, None] * kick[0]
    w = w + bump[:, None] * kick[1]
    shape = grid.shape + (3,)
    init = FieldState(x.reshape(shape), np.zeros(shape), w.reshape(shape), np.zeros(shape))
    try:
        st = minimize_energy(grid, model, bc, init, tol=tol)
    except NoConvergence:
        return d, d / scale, float("nan")
    op = CornerOperator(grid)
    F = alg.EYE + op.cell_gradient(st.displacement(grid))
    N = op.cell_gradient(st.w)
    dev = max(float(np.abs(F - A).max()), float(np.abs(N - Gw).max()))
    return d, d / scale, dev


# ---------------------------------------------------------------- power invariance

@dataclass
class PowerReport:
    force_residual: float
    moment_residual: float
    force_scale: float
    moment_scale: float
    lc_residual: float


def _cell_average(nodal, op):
    v = op.corner_values(nodal).reshape(op.n_cells, op.corners_per_cell, -1)
    return v.mean(axis=1)


def power_invariance_check(trajectory, grid, model, parts, frame=None, pivot=(0.0, 0.0, 0.0), bc=None):
    """Integral force and moment balances on rectangular parts.

    ``trajectory`` is either a recorded :class:`Trajectory` (accelerations
    from the half-step velocities around ``frame``) or a single
    :class:`FieldState` taken as unaccelerated.  Each part is a tuple of
    node-index ranges ``((i0, i1), (j0, j1))`` (one pair in 1-D); it covers
    the cells between those nodes.  Volume integrals use cell-centre values,
    surface integrals edge midpoints (cell-centred stresses averaged across
    the edge).  Inactive directions contribute the moment of the
    out-of-plane face tractions on a unit slab.  ``bc`` supplies the body force for a bare state.  Also returns the pointwise moment identity
    ``alt:(F P^T + grad w S^T) + w ^ z`` at cell centres.
    """
    if bc is None:
        bc = trajectory.bc if isinstance(trajectory, Trajectory) else BoundaryConditions.periodic()
    sysm = system_for(grid, model, bc)
    op = sysm.op
    n = sysm.n
    if isinstance(trajectory, Trajectory):
        k = len(trajectory.frames) // 2 if frame is None else frame
        fr = trajectory.frames[k]
        prev = trajectory.frames[k - 1]
        x, w = fr.x.reshape(n, 3), fr.w.reshape(n, 3)
        acc = (fr.v_half - prev.v_half).reshape(n, 3) / trajectory.dt
        wacc = (fr.wdot_half - prev.wdot_half).reshape(n, 3) / trajectory.dt
    else:
        x, w = trajectory.x.reshape(n, 3), trajectory.w.reshape(n, 3)
        acc = np.zeros((n, 3))
        wacc = np.zeros((n, 3))
    x0 = np.asarray(pivot, float)
    body = np.asarray(bc.body_force, float)
    u = x - sysm.X
    Fc = alg.EYE + op.cell_gradient(u)
    Nc = op.cell_gradient(w)
    wc = _cell_average(w, op)
    b = stresses(model, DeformationPoint(Fc, Nc), wc)
    ac = _cell_average(acc, op)
    wac = _cell_average(wacc, op)
    uc = _cell_average(u, op)
    h = grid.h
    cells_shape = grid.cells
    vol = grid.cell_volume

    # local reference coordinates: unwrapped cell centres
    cidx = np.stack(np.meshgrid(*[np.arange(m) for m in cells_shape], indexing="ij"), -1).reshape(-1, grid.dim)
    Xc = np.zeros((op.n_cells, 3))
    Xc[:, :grid.dim] = np.array(grid.origin) + (cidx + 0.5) * np.array(h)
    xc = Xc + uc
    P, S, z = b.P, b.S, b.z
    lc = np.einsum("ijk,cjk->ci", alg.ALT, Fc @ alg.transpose(P) + Nc @ alg.transpose(S)) + alg.cross(wc, z)
    lc_scale = float(np.max(alg.norm(P) * alg.norm(Fc) + alg.norm(S) * alg.norm(Nc))) + 1e-300
    lc_res = float(np.abs(lc).max()) / lc_scale

    def cell_id(ci):
        ci = np.array(ci) % np.array(cells_shape)
        return int(np.ravel_multi_index(tuple(ci), cells_shape))

    def node_val(arr, ni):
        ni = tuple(int(v) % s if grid.periodic[a] else int(v) for a, (v, s) in enumerate(zip(ni, grid.shape)))
        return arr[np.ravel_multi_index(ni, grid.shape)]

    fres = mres = fscale = mscale = 0.0
    for part in parts:
        part = [part] if grid.dim == 1 and np.ndim(part[0]) == 0 else list(part)
        rng_ = [range(lo, hi) for lo, hi in part]
        fsum = np.zeros(3)
        msum = np.zeros(3)
        fs = ms = 0.0
        for ci in np.ndindex(*[len(r) for r in rng_]):
            cell = tuple(r[i] for r, i in zip(rng_, ci))
            c = cell_id(cell)
            Xloc = np.zeros(3)
            Xloc[:grid.dim] = np.array(grid.origin) + (np.array(cell) + 0.5) * np.array(h)
            xloc = Xloc + uc[c]
            bf = model.rho0 * (body - ac[c])
            beta = -model.rho_bar * wac[c]
            fsum += vol * bf
            msum += vol * (alg.cross(xloc - x0, bf) + alg.cross(wc[c], beta))
            # inactive directions: tractions on the out-of-plane faces of a unit slab
            for a in range(grid.dim, 3):
                msum += vol * (alg.cross(Fc[c][:, a], P[c][:, a]) + alg.cross(Nc[c][:, a], S[c][:, a]))
            fs += vol * np.linalg.norm(model.rho0 * ac[c])
            ms += vol * (np.linalg.norm(xloc - x0) * np.linalg.norm(model.rho0 * ac[c])
                         + np.linalg.norm(wc[c]) * np.linalg.norm(beta))
        # boundary faces of the part
        for a in range(grid.dim):
            lo, hi = part[a]
            for side, node_a, sign in ((0, lo, -1.0), (1, hi, 1.0)):
                others = [range(part[b][0], part[b][1]) for b in range(grid.dim) if b != a]
                for oi in (np.ndindex(*[len(r) for r in others]) if others else [()]):
                    # edge (1-D: node) on the face; neighbouring cells across it
                    cell_in = [0] * grid.dim
                    cell_out = [0] * grid.dim
                    cell_in[a] = node_a - 1 if side else node_a
                    cell_out[a] = node_a if side else node_a - 1
                    area = 1.0
                    nodes_edge = []
                    for j, b_ in enumerate([b for b in range(grid.dim) if b != a]):
                        cell_in[b_] = cell_out[b_] = others[j][oi[j]]
                        area *= h[b_]
                    cin, cout = cell_id(cell_in), cell_id(cell_out)
                    Pe = 0.5 * (P[cin] + P[cout])
                    Se = 0.5 * (S[cin] + S[cout])
                    nrm = np.zeros(3)
                    nrm[a] = sign
                    # edge midpoint values from the edge's nodes
                    base = [0] * grid.dim
                    base[a] = node_a
                    if grid.dim == 1:
                        ends = [tuple(base)]
                    else:
                        b_ = 1 - a
                        e0 = list(base)
                        e1 = list(base)
                        e0[b_] = others[0][oi[0]]
                        e1[b_] = others[0][oi[0]] + 1
                        ends = [tuple(e0), tuple(e1)]
                    Xe = np.zeros(3)
                    Xe[:grid.dim] = np.array(grid.origin) + np.mean(np.array(ends, float), axis=0) * np.array(h)
                    ue = np.mean([node_val(u, e) for e in ends], axis=0)
                    we = np.mean([node_val(w, e) for e in ends], axis=0)
                    xe = Xe + ue
                    t = Pe @ nrm
                    tw = Se @ nrm
                    fsum += area * t
                    msum += area * (alg.cross(xe - x0, t) + alg.cross(we, tw))
                    fs += area * np.linalg.norm(t)
                    ms += area * (np.linalg.norm(xe - x0) * np.linalg.norm(t) + np.linalg.norm(we) * np.linalg.norm(tw))
        fres = max(fres, float(np.linalg.norm(fsum)))
        mres = max(mres, float(np.linalg.norm(msum)))
        fscale = max(fscale, fs)
        mscale = max(mscale, ms)
    return PowerReport(fres, mres, fscale, mscale, lc_res)


def eshelby_symmetry(trajectory, grid, model, every=1):
    """Max over frames and nodes of ``|skw(Pesh gamma^-1)| / |Pesh|``."""
    worst = 0.0
    for fr in trajectory.frames[::every]:
        shp = grid.shape + (3,)
        st = FieldState(fr.x.reshape(shp), fr.xdot.reshape(shp), fr.w.reshape(shp),
                        fr.wdot.reshape(shp), fr.t)
        dp = gradients(st, grid)
        b = stresses(model, dp, st.w)
        nP = alg.norm(b.Pesh)
        s = alg.norm(alg.skw(b.Pesh))
        ok = nP > 1e-300
        if np.any(ok):
            worst = max(worst, float(np.max(s[ok] / nP[ok])))
    return worst
