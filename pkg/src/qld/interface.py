"""Sharp interfaces in 2-D reference bodies, tracked by marker polylines.

Closed curves run counter-clockwise and carry the outward normal
``m = (t2, -t1)``; ``+`` limits are taken on the side ``m`` points to.
Curvature is ``kappa = tr L`` with ``L = -grad_S m``, so a circle of
radius R has ``kappa = -1/R``.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from . import algebra as alg
from .constitutive import MaterialModel, SurfaceEnergyModel, stresses, surface_eval
from .errors import NoRealRoot, OffsetOutsideDomain, SelfIntersection
from .kinematics import DeformationPoint


# ---------------------------------------------------------------- curve

@dataclass
class InterfaceCurve:
    points: np.ndarray
    closed: bool = True
    f_tilde: float = 1.0
    sem: SurfaceEnergyModel = field(default_factory=SurfaceEnergyModel)
    U: np.ndarray = None
    G: np.ndarray = None
    t: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, float).reshape(-1, 2)
        if self.points.shape[0] < (5 if self.closed else 3):
            raise ValueError("too few markers")
        if not self.f_tilde > 0:
            raise ValueError("kinetic coefficient must be positive")
        n = self.points.shape[0]
        self.U = np.zeros(n) if self.U is None else np.asarray(self.U, float)
        self.G = np.zeros(n) if self.G is None else np.asarray(self.G, float)

    @classmethod
    def circle(cls, center, radius, n_markers=200, **kw):
        th = 2 * np.pi * np.arange(n_markers) / n_markers
        pts = np.asarray(center, float) + radius * np.stack([np.cos(th), np.sin(th)], -1)
        return cls(pts, closed=True, **kw)

    @classmethod
    def line(cls, start, end, n_markers=50, **kw):
        s = np.linspace(0.0, 1.0, n_markers)[:, None]
        return cls((1 - s) * np.asarray(start, float) + s * np.asarray(end, float), closed=False, **kw)

    @property
    def n(self):
        return self.points.shape[0]

    def _neighbors(self):
        P = self.points
        if self.closed:
            return np.roll(P, 1, axis=0), np.roll(P, -1, axis=0)
        prev = np.vstack([P[:1], P[:-1]])
        nxt = np.vstack([P[1:], P[-1:]])
        return prev, nxt

    def segment_lengths(self):
        P = self.points
        d = np.diff(np.vstack([P, P[:1]]) if self.closed else P, axis=0)
        return np.linalg.norm(d, axis=1)

    def perimeter(self):
        return float(self.segment_lengths().sum())

    def target_spacing(self):
        return self.perimeter() / (self.n if self.closed else self.n - 1)

    def arclength_weights(self):
        seg = self.segment_lengths()
        if self.closed:
            return 0.5 * (seg + np.roll(seg, 1))
        w = np.zeros(self.n)
        w[:-1] += 0.5 * seg
        w[1:] += 0.5 * seg
        return w

    def tangent(self):
        prev, nxt = self._neighbors()
        d = nxt - prev
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t = np.zeros((self.n, 3))
        t[:, :2] = d
        return t

    def normal(self):
        t = self.tangent()
        m = np.zeros_like(t)
        m[:, 0] = t[:, 1]
        m[:, 1] = -t[:, 0]
        return m

    def curvature(self):
        """``tr L`` from the circle through each marker and its neighbours."""
        prev, nxt = self._neighbors()
        P = self.points
        a = P - prev
        b = nxt - P
        c = nxt - prev
        cr = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) * np.linalg.norm(c, axis=1)
        k = np.zeros(self.n)
        ok = den > 0
        k[ok] = 2.0 * cr[ok] / den[ok]
        if not self.closed:
            k[0], k[-1] = k[1], k[-2]
        return -k

    def curvature_tensor(self):
        t = self.tangent()
        return self.curvature()[:, None, None] * alg.dyad(t, t)

    def spacing_ok(self, band=(0.5, 2.0)):
        seg = self.segment_lengths()
        tgt = self.target_spacing()
        return bool(np.all(seg >= band[0] * tgt) and np.all(seg <= band[1] * tgt))

    def check_simple(self):
        """Raise SelfIntersection if two non-adjacent segments cross."""
        P = self.points
        Q = np.roll(P, -1, axis=0) if self.closed else P[1:]
        A = P if self.closed else P[:-1]
        ns = A.shape[0]

        def orient(p, q, r):
            return ((q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1])
                    - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0]))

        Ai, Qi = A[:, None], Q[:, None]
        Aj, Qj = A[None], Q[None]
        o1 = orient(Ai, Qi, Aj)
        o2 = orient(Ai, Qi, Qj)
        o3 = orient(Aj, Qj, Ai)
        o4 = orient(Aj, Qj, Qi)
        hit = (o1 * o2 < 0) & (o3 * o4 < 0)
        idx = np.arange(ns)
        gap = np.abs(idx[:, None] - idx[None])
        if self.closed:
            gap = np.minimum(gap, ns - gap)
        hit &= gap > 1
        if np.any(hit):
            i, j = np.argwhere(hit)[0]
            raise SelfIntersection(f"segments {i} and {j} of the interface cross")

    def surface_derivative(self, A):
        """Centred arclength derivative of per-marker data (one-sided at open ends)."""
        A = np.asarray(A, float)
        seg = self.segment_lengths()
        if self.closed:
            ds = seg + np.roll(seg, 1)
            return (np.roll(A, -1, axis=0) - np.roll(A, 1, axis=0)) / ds.reshape((-1,) + (1,) * (A.ndim - 1))
        out = np.empty_like(A)
        ds = seg[1:] + seg[:-1]
        out[1:-1] = (A[2:] - A[:-2]) / ds.reshape((-1,) + (1,) * (A.ndim - 1))
        out[0] = (A[1] - A[0]) / seg[0]
        out[-1] = (A[-1] - A[-2]) / seg[-1]
        return out

    def surface_divergence(self, A):
        """``Div_S`` of per-marker vectors ``(n, 3)`` or tensors ``(n, k, 3)``."""
        dA = self.surface_derivative(A)
        t = self.tangent()
        if dA.ndim == 2:
            return np.sum(dA * t, axis=1)
        return np.einsum("nkA,nA->nk", dA, t)

    def resample(self):
        """Markers redistributed uniformly in arclength along a cubic spline."""
        P = self.points
        if self.closed:
            Q = np.vstack([P, P[:1]])
            s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(Q, axis=0), axis=1))])
            sp = CubicSpline(s, Q, bc_type="periodic")
            new = sp(np.arange(self.n) * s[-1] / self.n)
            U = CubicSpline(s, np.append(self.U, self.U[0]), bc_type="periodic")(np.arange(self.n) * s[-1] / self.n)
        else:
            s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
            sp = CubicSpline(s, P)
            su = np.linspace(0.0, s[-1], self.n)
            new = sp(su)
            U = np.interp(su, s, self.U)
        return replace(self, points=new, U=U)


# ---------------------------------------------------------------- sampling

def bilinear(grid, nodal, pts):
    """Bilinear interpolation of nodal data ``shape + (k,)`` at reference points ``(n, 2)``."""
    if grid.dim != 2:
        raise ValueError("interfaces live in 2-D grids")
    pts = np.asarray(pts, float)
    h = np.array(grid.h)
    o = np.array(grid.origin)
    L = np.array(grid.length)
    q = (pts - o) / h
    i0 = np.floor(q).astype(int)
    f = q - i0
    for a in range(2):
        if grid.periodic[a]:
            continue
        bad = (pts[:, a] < o[a] - 1e-12 * L[a]) | (pts[:, a] > o[a] + L[a] * (1 + 1e-12))
        if np.any(bad):
            k = int(np.argmax(bad))
            raise OffsetOutsideDomain(f"sample point {pts[k]} lies outside the grid")
        i0[:, a] = np.clip(i0[:, a], 0, grid.cells[a] - 1)
        f[:, a] = q[:, a] - i0[:, a]
    data = np.asarray(nodal).reshape(grid.shape + (-1,))
    shp = grid.shape

    def at(di, dj):
        ii = i0[:, 0] + di
        jj = i0[:, 1] + dj
        if grid.periodic[0]:
            ii %= shp[0]
        if grid.periodic[1]:
            jj %= shp[1]
        return data[ii, jj]

    fx = f[:, :1]
    fy = f[:, 1:]
    return ((1 - fx) * (1 - fy) * at(0, 0) + fx * (1 - fy) * at(1, 0)
            + (1 - fx) * fy * at(0, 1) + fx * fy * at(1, 1))


PRODUCTS = ("gradWT_wdot", "wdot_sq", "Fm_sq")


@dataclass
class JumpSample:
    """One-sided limits at every marker; ``jump`` and ``avg`` assemble the rest."""

    m: np.ndarray
    tau: np.ndarray
    plus: dict
    minus: dict

    def jump(self, name):
        return self.plus[name] - self.minus[name]

    def avg(self, name):
        return 0.5 * (self.plus[name] + self.minus[name])

    @property
    def projector(self):
        return alg.EYE - alg.dyad(self.m, self.m)

    @property
    def FF(self):
        return self.avg("F") @ self.projector

    @property
    def NN(self):
        return self.avg("gradW") @ self.projector

    def product_rule_residual(self):
        """Largest relative violation of ``[ab] = [a]<b> + <a>[b]`` over stored products."""
        m = self.m
        checks = [
            (self.jump("gradWT_wdot"),
             np.einsum("nkA,nk->nA", self.jump("gradW"), self.avg("wdot"))
             + np.einsum("nkA,nk->nA", self.avg("gradW"), self.jump("wdot"))),
            (self.jump("wdot_sq"),
             2 * np.sum(self.jump("wdot") * self.avg("wdot"), axis=1)),
            (self.jump("Fm_sq"),
             2 * np.sum(np.einsum("niA,nA->ni", self.jump("F"), m)
                        * np.einsum("niA,nA->ni", self.avg("F"), m), axis=1)),
        ]
        worst = 0.0
        for lhs, rhs in checks:
            scale = max(float(np.abs(self.plus_minus_scale(lhs, rhs))), 1e-300)
            worst = max(worst, float(np.abs(lhs - rhs).max()) / scale)
        return worst

    @staticmethod
    def plus_minus_scale(lhs, rhs):
        return max(np.abs(lhs).max(), np.abs(rhs).max(), 1.0)


def _side_models(model):
    if isinstance(model, MaterialModel):
        return model, model
    minus, plus = model
    return minus, plus


def sample_jumps(state, grid, curve, eps=None, model=None):
    """Limits ``a(X +- eps m)`` by bilinear interpolation.

    Gradients on each side are extrapolated to the interface: the normal
    derivative from a quadratic through the samples at ``eps``, ``2 eps``
    and ``3 eps``, the tangential one linearly from centred differences at
    ``eps`` and ``2 eps``.  ``model`` is a
    MaterialModel or a ``(minus, plus)`` pair; when given, energies and
    stresses are evaluated on each side.
    """
    h = max(grid.h)
    eps = 1.5 * h if eps is None else float(eps)
    if eps < 1.5 * h * (1 - 1e-12):
        raise ValueError("eps must be at least 1.5 h")
    X = curve.points
    m = curve.normal()
    tau = curve.tangent()
    m2, t2 = m[:, :2], tau[:, :2]
    u = state.displacement(grid)
    fields = {"u": u, "w": state.w, "xdot": state.xdot, "wdot": state.wdot}
    models = _side_models(model) if model is not None else (None, None)
    sides = {}
    for sgn, name, mdl in ((1.0, "plus", models[1]), (-1.0, "minus", models[0])):
        p1, p2, p3 = (X + sgn * j * eps * m2 for j in (1, 2, 3))
        vals = {k: bilinear(grid, v, p1) for k, v in fields.items()}
        d = {}
        for k in ("u", "w"):
            a1, a2, a3 = (bilinear(grid, fields[k], p) for p in (p1, p2, p3))
            # quadratic through the three samples, differentiated at the interface
            dn = sgn * (-2.5 * a1 + 4.0 * a2 - 1.5 * a3) / eps
            d1, d2 = ((bilinear(grid, fields[k], p + eps * t2) - bilinear(grid, fields[k], p - eps * t2)) / (2 * eps)
                      for p in (p1, p2))
            d[k] = alg.dyad(dn, m) + alg.dyad(2.0 * d1 - d2, tau)
        F = alg.EYE + d["u"]
        N = d["w"]
        s = {"F": F, "gradW": N, "x": X_to3(p1) + vals["u"], "w": vals["w"],
             "xdot": vals["xdot"], "wdot": vals["wdot"]}
        s["gradWT_wdot"] = np.einsum("nkA,nk->nA", N, vals["wdot"])
        s["wdot_sq"] = np.sum(vals["wdot"] ** 2, axis=1)
        Fm = np.einsum("niA,nA->ni", F, m)
        s["Fm_sq"] = np.sum(Fm ** 2, axis=1)
        if mdl is not None:
            b = stresses(mdl, DeformationPoint(F, N), vals["w"])
            s.update(e=b.e, P=b.P, S=b.S, z=b.z, Pesh=b.Pesh, rho0=np.full(len(X), mdl.rho0),
                     rho_bar=np.full(len(X), mdl.rho_bar))
        sides[name] = s
    js = JumpSample(m, tau, sides["plus"], sides["minus"])
    pr = js.product_rule_residual()
    assert pr <= 1e-12, f"jump product rule violated ({pr:.2e})"
    return js


def X_to3(p):
    out = np.zeros((p.shape[0], 3))
    out[:, :2] = p
    return out


def coherence_residual(js, U=None):
    """Per-marker ``|[F] Pi|`` and ``|[xdot] + U [F] m|``."""
    jF = js.jump("F")
    coh = alg.norm(jF @ js.projector)
    U = np.zeros(len(js.m)) if U is None else np.asarray(U, float)
    kin = np.linalg.norm(js.jump("xdot") + U[:, None] * np.einsum("niA,nA->ni", jF, js.m), axis=1)
    return coh, kin


# ---------------------------------------------------------------- balances

@dataclass
class InterfacialResiduals:
    phonon: np.ndarray
    phason: np.ndarray
    config: np.ndarray
    G: np.ndarray


def _bulk_terms(js, curve, rho0, rho_bar):
    n = curve.n
    if js is None:
        z3 = np.zeros((n, 3))
        return dict(Pm=z3, Sm=z3.copy(), mPm=np.zeros(n), xdot=z3.copy(), wdot=z3.copy(),
                    gw=z3.copy(), wsq=np.zeros(n), fm=np.zeros(n), F=np.broadcast_to(alg.EYE, (n, 3, 3)),
                    N=np.zeros((n, 3, 3)), w=z3.copy())
    m = js.m
    have = "P" in js.plus
    Pm = np.einsum("niA,nA->ni", js.jump("P"), m) if have else np.zeros((n, 3))
    Sm = np.einsum("niA,nA->ni", js.jump("S"), m) if have else np.zeros((n, 3))
    mPm = np.einsum("nA,nAB,nB->n", m, js.jump("Pesh"), m) if have else np.zeros(n)
    return dict(Pm=Pm, Sm=Sm, mPm=mPm, xdot=js.jump("xdot"), wdot=js.jump("wdot"),
                gw=js.jump("gradWT_wdot"), wsq=js.jump("wdot_sq"), fm=js.jump("Fm_sq"),
                F=js.avg("F"), N=js.avg("gradW"), w=js.avg("w"))


def surface_stresses(curve, sem, js=None):
    """Surface energy and stresses at the markers.

    Returns ``(phi, TT, SS, zz, C_tan, shear)`` with the surface Eshelby
    stress ``C_tan = phi Pi - FF^T TT - NN^T SS`` and the surface shear
    ``-dphi/dm - TT^T <F> m - SS^T <grad w> m``; the normal derivative of
    ``phi`` is projected onto the tangent line since ``m`` is a unit vector.
    """
    m = curve.normal()
    n = curve.n
    Pi = alg.EYE - alg.dyad(m, m)
    F = np.broadcast_to(alg.EYE, (n, 3, 3)) if js is None else js.avg("F")
    N = np.zeros((n, 3, 3)) if js is None else js.avg("gradW")
    w = np.zeros((n, 3)) if js is None else js.avg("w")
    FF = F @ Pi
    NN = N @ Pi
    phi, TT, SS, zz, dm = surface_eval(sem, m, FF, w, NN)
    dm = np.einsum("nAB,nB->nA", Pi, dm)
    C = phi[:, None, None] * Pi - alg.transpose(FF) @ TT - alg.transpose(NN) @ SS
    shear = (-dm - np.einsum("niA,ni->nA", TT, np.einsum("niA,nA->ni", F, m))
             - np.einsum("nkA,nk->nA", SS, np.einsum("nkA,nA->nk", N, m)))
    return phi, TT, SS, zz, C, shear


def interfacial_residuals(js, curve, sem=None, rho0=0.0, rho_bar=0.0, U=None):
    """Residuals of the interfacial balances at every marker.

    ``phonon = [P]m + Div_S TT + rho0 [xdot] U``,
    ``phason = [S]m + Div_S SS - zz + rho_bar [wdot] U``,
    ``config = G - rho_bar U [(grad w)^T wdot].m - rho_bar/2 [|wdot|^2]
    + rho0/2 U^2 [|Fm|^2] - f U`` with the configurational traction
    ``G = m.[Pesh]m + C_tan : L + Div_S shear``.  Without ``sem`` the
    interface is unstructured (the curve's own model is used when present).
    """
    sem = curve.sem if sem is None else sem
    U = curve.U if U is None else np.asarray(U, float)
    m = curve.normal()
    b = _bulk_terms(js, curve, rho0, rho_bar)
    phi, TT, SS, zz, C, shear = surface_stresses(curve, sem, js)
    L = curve.curvature_tensor()
    G = b["mPm"] + alg.ddot(C, L) + curve.surface_divergence(shear)
    phonon = b["Pm"] + curve.surface_divergence(TT) + rho0 * b["xdot"] * U[:, None]
    phason = b["Sm"] + curve.surface_divergence(SS) - zz + rho_bar * b["wdot"] * U[:, None]
    config = (G - rho_bar * U * np.sum(b["gw"] * m, axis=1) - 0.5 * rho_bar * b["wsq"]
              + 0.5 * rho0 * U ** 2 * b["fm"] - curve.f_tilde * U)
    return InterfacialResiduals(phonon, phason, config, G)


def normal_speed(G, f_tilde, rho0=0.0, rho_bar=0.0, fm=0.0, gw=0.0, wsq=0.0):
    """Root of ``a U^2 + b U + c = 0`` on the quasi-static branch.

    ``a = rho0/2 [|Fm|^2]``, ``b = -f - rho_bar [(grad w)^T wdot].m``,
    ``c = G - rho_bar/2 [|wdot|^2]``.  The smaller-magnitude root is the
    one that tends to ``G/f`` as the inertial coefficients vanish.
    """
    G = np.asarray(G, float)
    a = 0.5 * rho0 * np.broadcast_to(fm, G.shape)
    b = -f_tilde - rho_bar * np.broadcast_to(gw, G.shape)
    c = G - 0.5 * rho_bar * np.broadcast_to(wsq, G.shape)
    disc = b * b - 4 * a * c
    if np.any(disc < 0):
        k = int(np.argmin(disc))
        raise NoRealRoot(f"normal-speed relation has no real root at marker {k}",
                         discriminant=float(disc[k]), marker=k)
    # b = 0 picks -1, which gives U the sign of c
    sb = np.where(b > 0, 1.0, -1.0)
    den = b + sb * np.sqrt(disc)
    U = np.zeros_like(G)
    ok = den != 0
    U[ok] = -2 * c[ok] / den[ok]
    return U


def evolve_interface(curve, js, sem=None, dt=None, rho0=0.0, rho_bar=0.0, check=True):
    """One explicit step of the normal evolution law.

    Solves the quadratic kinetic relation for U at every marker, moves the
    markers by ``U dt m``, redistributes them uniformly in arclength and
    recomputes the geometry.  Returns the new curve with ``U`` and ``G``
    of the step.
    """
    if dt is None or not dt > 0:
        raise ValueError("time step must be positive")
    sem = curve.sem if sem is None else sem
    b = _bulk_terms(js, curve, rho0, rho_bar)
    res = interfacial_residuals(js, curve, sem, rho0, rho_bar, U=np.zeros(curve.n))
    m = curve.normal()
    U = normal_speed(res.G, curve.f_tilde, rho0, rho_bar, b["fm"], np.sum(b["gw"] * m, axis=1), b["wsq"])
    moved = replace(curve, points=curve.points + dt * U[:, None] * m[:, :2], U=U, G=res.G,
                    t=curve.t + dt)
    new = moved.resample()
    new.G = np.interp(np.arange(new.n), np.arange(curve.n), res.G)
    if check:
        new.check_simple()
    return new


def stable_dt(curve, sem=None, js=None, safety=0.4):
    """Explicit limit ``safety * ds_min^2 f / phi_max`` of curvature-driven motion."""
    sem = curve.sem if sem is None else sem
    phi = surface_stresses(curve, sem, js)[0]
    scale = float(np.max(np.abs(phi))) * (1.0 + abs(sem.delta))
    if scale <= 0:
        return np.inf
    return safety * float(curve.segment_lengths().min()) ** 2 * curve.f_tilde / scale


def dissipation(curve):
    """Normal power of the driving force, ``-f U^2`` per marker (never positive)."""
    return -curve.f_tilde * curve.U ** 2


def circle_radius(curve):
    """Mean distance of the markers from their centroid."""
    c = curve.points.mean(axis=0)
    return float(np.linalg.norm(curve.points - c, axis=1).mean())
