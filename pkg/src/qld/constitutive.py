"""Bulk and surface energies with their stresses.

Energies ``e`` are per unit reference mass; every stress multiplies by the
mass density once, in :meth:`MaterialModel.density_derivs`.

Model kinds
-----------
``IIC_quadratic`` / ``IQ_quadratic``
    ``W = 1/2 H:C:H + 1/2 N:K:N + H:R:N + 1/2 alpha |w|^2`` with the full
    displacement gradient ``H = F - I`` and ``N = grad w``.  The IQ kind
    forbids ``alpha`` and phason inertia.
``IIC_stvenant``
    Frame-indifferent version: Green strain ``E = (F^T g F - gamma)/2`` and
    pulled-back phason gradient ``N~ = F^T g grad w``, both expressed in the
    orthonormal frame of the reference metric, times the metric volume factor.
``custom``
    User callable ``energy_fn(F, w, gradW) -> e`` with derivatives by central
    differences.
"""

from dataclasses import dataclass, field

import numpy as np

from . import algebra as alg
from .errors import NonUnitNormal, OrientationViolation

KINDS = ("IIC_quadratic", "IQ_quadratic", "IIC_stvenant", "custom")


# ---------------------------------------------------------------- moduli

def _delta4(pattern):
    d = np.eye(3)
    return np.einsum(pattern, d, d)


def isotropic_phonon(lam, mu, form="symmetric"):
    """Isotropic phonon moduli.

    ``symmetric``: ``lam d_iA d_jB + mu (d_ij d_AB + d_iB d_jA)``, the classical
    tensor acting on symmetric strains.  ``navier``: ``mu d_ij d_AB +
    (lam + mu) d_iA d_jB``, which gives the same Navier operator but is
    positive definite on all nine components of ``F - I``.
    """
    if form == "symmetric":
        return (lam * _delta4("iA,jB->iAjB") + mu * (_delta4("ij,AB->iAjB") + _delta4("iB,jA->iAjB")))
    if form == "navier":
        return mu * _delta4("ij,AB->iAjB") + (lam + mu) * _delta4("iA,jB->iAjB")
    raise ValueError(f"unknown phonon form {form!r}")


def isotropic_phason(K1, K2):
    """``K1 d_ij d_AB + K2 d_iB d_jA``; positive semidefinite iff ``K1 >= |K2|``."""
    return K1 * _delta4("ij,AB->iAjB") + K2 * _delta4("iB,jA->iAjB")


def isotropic_coupling(R):
    """``R d_iA d_jB``: couples the trace of the strain to the trace of grad w."""
    return R * _delta4("iA,jB->iAjB")


# ---------------------------------------------------------------- bulk model

def _sqrtm_spd(m):
    vals, vecs = np.linalg.eigh(m)
    if np.any(vals <= 0):
        raise ValueError("metric must be symmetric positive definite")
    root = (vecs * np.sqrt(vals)) @ vecs.T
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    return root, inv_root


def _psd(mat, tol=1e-12):
    mat = np.asarray(mat, float)
    s = 0.5 * (mat + mat.T)
    ev = np.linalg.eigvalsh(s)
    return ev.min() >= -tol * max(1.0, np.abs(ev).max())


@dataclass(frozen=True, eq=False)
class MaterialModel:
    kind: str
    rho0: float = 1.0
    rho_bar: float = 0.0
    C: np.ndarray = field(default_factory=lambda: np.zeros((3, 3, 3, 3)))
    K: np.ndarray = field(default_factory=lambda: np.zeros((3, 3, 3, 3)))
    R: np.ndarray = field(default_factory=lambda: np.zeros((3, 3, 3, 3)))
    alpha: float = 0.0
    c_star: object = 0.0
    omega: float = 0.0
    energy_fn: object = None
    c_star_fn: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        for name in ("C", "K", "R"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(3, 3, 3, 3)
            if name != "R":
                arr = alg.t4_major_sym(arr)
            object.__setattr__(self, name, arr)
        cs = np.asarray(self.c_star, dtype=float)
        if cs.shape not in ((), (3, 3)):
            raise ValueError("c_star must be a scalar or a 3x3 matrix")
        object.__setattr__(self, "c_star", cs)
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if self.rho_bar < 0 or self.alpha < 0 or self.omega < 0:
            raise ValueError("rho_bar, alpha and omega must be non-negative")
        if (cs.ndim == 0 and cs < 0) or (cs.ndim == 2 and not _psd(cs)):
            raise ValueError("c_star must be non-negative (positive semidefinite)")
        if self.is_iq:
            if self.rho_bar != 0:
                raise ValueError("IQ models carry no phason inertia (rho_bar must be 0)")
            if self.alpha != 0:
                raise ValueError("IQ energies cannot depend on w (alpha must be 0)")
        elif self.kind != "custom" and not self.rho_bar > 0:
            raise ValueError("IIC models need rho_bar > 0")
        if not _psd(alg.t4_as_matrix(self.K)):
            raise ValueError("phason moduli K must be positive semidefinite")
        if self.kind == "custom" and self.energy_fn is None:
            raise ValueError("custom kind needs energy_fn")

    @property
    def is_iq(self):
        return self.kind == "IQ_quadratic"

    @classmethod
    def icosahedral(cls, kind="IIC_stvenant", lam=1.0, mu=1.0, K1=0.5, K2=0.1, R=0.0, **kw):
        """Isotropic preset with two phonon, two phason and one coupling constant.

        The quadratic kinds use the Navier form of the phonon tensor so the
        full-gradient energy stays positive definite.
        """
        form = "symmetric" if kind == "IIC_stvenant" else "navier"
        return cls(kind=kind, C=isotropic_phonon(lam, mu, form), K=isotropic_phason(K1, K2),
                   R=isotropic_coupling(R), **kw)

    @property
    def modulus_scale(self):
        s = max(np.abs(self.C).max(), np.abs(self.K).max(), np.abs(self.R).max(), self.alpha)
        return float(s) if s > 0 else 1.0

    # -- strain energy per unit volume and its partials --------------------

    def density(self, F, w, gradW, gamma=None, g=None):
        return self._density(F, w, gradW, gamma, g, derivs=False)[0]

    def density_derivs(self, F, w, gradW, gamma=None, g=None):
        """``(W, dW/dF, dW/dw, dW/dgradW)`` with ``W = rho0 e``."""
        return self._density(F, w, gradW, gamma, g, derivs=True)

    def _density(self, F, w, N, gamma, g, derivs):
        F = np.asarray(F, float)
        w = np.asarray(w, float)
        N = np.asarray(N, float)
        if self.kind in ("IIC_quadratic", "IQ_quadratic"):
            return self._quadratic(F, w, N, derivs)
        if self.kind == "IIC_stvenant":
            return self._stvenant(F, w, N, gamma, g, derivs)
        return self._custom(F, w, N, derivs)

    def _quadratic(self, F, w, N, derivs):
        H = F - alg.EYE
        CH = alg.t4_apply(self.C, H)
        KN = alg.t4_apply(self.K, N)
        RN = alg.t4_apply(self.R, N)
        W = (0.5 * alg.ddot(H, CH) + 0.5 * alg.ddot(N, KN) + alg.ddot(H, RN)
             + 0.5 * self.alpha * np.sum(w * w, axis=-1))
        if not derivs:
            return (W,)
        dF = CH + RN
        dN = KN + alg.t4_apply_left(self.R, H)
        dw = np.zeros_like(w) if self.is_iq else self.alpha * w
        return W, dF, dw, dN

    def _stvenant(self, F, w, N, gamma, g, derivs):
        euclid = gamma is None or np.array_equal(gamma, alg.EYE)
        if euclid:
            Li, vol, gamma = None, 1.0, alg.EYE
        else:
            gamma = np.asarray(gamma, float)
            _, Li = _sqrtm_spd(gamma)
            vol = np.sqrt(np.linalg.det(gamma))
        gF = F if g is None else np.asarray(g, float) @ F
        E = 0.5 * (alg.transpose(F) @ gF - gamma)
        Nt = alg.transpose(gF) @ N
        Eb = E if euclid else Li @ E @ Li
        Nb = Nt if euclid else Li @ Nt @ Li
        CE = alg.t4_apply(self.C, Eb)
        KN = alg.t4_apply(self.K, Nb)
        RN = alg.t4_apply(self.R, Nb)
        W = vol * (0.5 * alg.ddot(Eb, CE) + 0.5 * alg.ddot(Nb, KN) + alg.ddot(Eb, RN)
                   + 0.5 * self.alpha * np.sum(w * w, axis=-1))
        if not derivs:
            return (W,)
        Sig = CE + RN
        T = KN + alg.t4_apply_left(self.R, Eb)
        if not euclid:
            Sig = Li @ Sig @ Li
            T = Li @ T @ Li
        Sig = vol * alg.sym(Sig)
        T = vol * T
        gN = N if g is None else np.asarray(g, float) @ N
        dF = gF @ Sig + gN @ alg.transpose(T)
        dN = gF @ T
        dw = vol * self.alpha * w
        return W, dF, dw, dN

    def _custom(self, F, w, N, derivs):
        rho0 = self.rho0
        W = rho0 * np.asarray(self.energy_fn(F, w, N), float)
        if not derivs:
            return (W,)
        dF = _fd_grad(lambda X: rho0 * self.energy_fn(X, w, N), F)
        dw = _fd_grad(lambda X: rho0 * self.energy_fn(F, X, N), w)
        dN = _fd_grad(lambda X: rho0 * self.energy_fn(F, w, X), N)
        return W, dF, dw, dN

    # -- viscous laws ------------------------------------------------------

    def viscous(self, F, w, gradW, wdot, gradWdot):
        """``(z_v, S_v, dissipation density)``."""
        wdot = np.asarray(wdot, float)
        gradWdot = np.asarray(gradWdot, float)
        cs = self.c_star
        if self.c_star_fn is not None:
            cs = np.asarray(self.c_star_fn(F, w, gradW, wdot, gradWdot), float)
            if cs.shape[-2:] == (3, 3):
                ok = np.all(np.linalg.eigvalsh(alg.sym(cs)) >= -1e-12)
            else:
                ok = np.all(cs >= 0)
            if not ok:
                raise ValueError("state-dependent c_star returned a negative coefficient")
        if cs.ndim >= 2 and cs.shape[-2:] == (3, 3):
            zv = np.einsum("...ij,...j->...i", cs, wdot)
        else:
            zv = cs[..., None] * wdot if cs.ndim else cs * wdot
        Sv = self.omega * gradWdot
        diss = np.sum(zv * wdot, axis=-1) + alg.ddot(Sv, gradWdot)
        return zv, Sv, diss

    # -- linear wave speeds --------------------------------------------------

    def tangent(self, dp=None, w=None, step=1e-6):
        """18x18 Hessian of ``W`` with respect to ``(F, grad w)``.

        Exact for quadratic kinds; central differences of the stresses
        otherwise.  Rows and columns are ``(F_iA, gradW_iA)`` flattened.
        """
        if self.kind in ("IIC_quadratic", "IQ_quadratic"):
            C, K, R = (alg.t4_as_matrix(t) for t in (self.C, self.K, self.R))
            return np.block([[C, R], [R.T, K]])
        F0 = np.eye(3) if dp is None else dp.F
        N0 = np.zeros((3, 3)) if dp is None else dp.gradW
        w0 = np.zeros(3) if w is None else w
        gamma = None if dp is None else dp.gamma
        g = None if dp is None else dp.g
        out = np.zeros((18, 18))
        for k in range(18):
            d = np.zeros(18)
            d[k] = step
            cols = []
            for s in (1.0, -1.0):
                Fp = F0 + s * d[:9].reshape(3, 3)
                Np = N0 + s * d[9:].reshape(3, 3)
                _, dF, _, dN = self.density_derivs(Fp, w0, Np, gamma, g)
                cols.append(np.concatenate([dF.ravel(), dN.ravel()]))
            out[:, k] = (cols[0] - cols[1]) / (2 * step)
        return 0.5 * (out + out.T)

    def wave_speeds(self, dim, n_dirs=36):
        """Largest phonon and phason wave speeds of the natural-state tangent."""
        T = self.tangent()
        C = T[:9, :9].reshape(3, 3, 3, 3)
        K = T[9:, 9:].reshape(3, 3, 3, 3)
        R = T[:9, 9:].reshape(3, 3, 3, 3)
        if dim == 1:
            dirs = [np.array([1.0, 0.0, 0.0])]
        else:
            th = np.linspace(0, np.pi, n_dirs, endpoint=False)
            dirs = [np.array([np.cos(t), np.sin(t), 0.0]) for t in th]
        c_ph = c_w = 0.0
        for n in dirs:
            Cn = np.einsum("iAjB,A,B->ij", C, n, n)
            Kn = np.einsum("iAjB,A,B->ij", K, n, n)
            Rn = np.einsum("iAjB,A,B->ij", R, n, n)
            if self.rho_bar > 0:
                m = np.concatenate([np.full(3, self.rho0), np.full(3, self.rho_bar)]) ** -0.5
                A = np.block([[Cn, Rn], [Rn.T, Kn]]) * m[:, None] * m[None, :]
                c2 = np.linalg.eigvalsh(0.5 * (A + A.T)).max()
                c_ph = max(c_ph, np.sqrt(max(np.linalg.eigvalsh(Cn).max(), 0) / self.rho0))
                c_w = max(c_w, np.sqrt(max(c2, 0)))
            else:
                c_ph = max(c_ph, np.sqrt(max(np.linalg.eigvalsh(Cn).max(), 0) / self.rho0))
        return c_ph, c_w

    def phason_stiffness_max(self):
        """Largest eigenvalue of the phason tangent (for the diffusion bound)."""
        K = self.tangent()[9:, 9:]
        return float(max(np.linalg.eigvalsh(K).max(), 0.0))


def _fd_grad(fn, x, rel=1e-6):
    """Central-difference gradient of a stack-valued scalar function."""
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    core = x.shape[-2:] if x.shape[-2:] == (3, 3) and x.ndim >= 2 else x.shape[-1:]
    for idx in np.ndindex(*core):
        h = rel * (1.0 + np.abs(x[(...,) + idx]))
        xp = x.copy()
        xm = x.copy()
        xp[(...,) + idx] += h
        xm[(...,) + idx] -= h
        out[(...,) + idx] = (np.asarray(fn(xp)) - np.asarray(fn(xm))) / (2 * h)
    return out


@dataclass
class StressBundle:
    e: np.ndarray
    P: np.ndarray
    S: np.ndarray
    z: np.ndarray
    Pesh: np.ndarray
    z_eq: np.ndarray
    z_v: np.ndarray = None
    S_v: np.ndarray = None
    dissipation: np.ndarray = None


def _check_orientation(F):
    J = alg.det(F)
    if np.any(~(J > 0)):
        idx = tuple(int(i) for i in np.argwhere(~(np.atleast_1d(J) > 0))[0])
        raise OrientationViolation(f"det F <= 0 at point {idx}", node=idx)


def energy(model, dp, w):
    """Energy per unit mass at the given point(s)."""
    _check_orientation(dp.F)
    return model.density(dp.F, w, dp.gradW, dp.gamma, dp.g) / model.rho0


def eshelby(e, P, S, F, gradW, rho0):
    """``rho0 e I - F^T P - grad w^T S``."""
    return (rho0 * np.asarray(e)[..., None, None] * alg.EYE
            - alg.transpose(F) @ P - alg.transpose(gradW) @ S)


def stresses(model, dp, w, wdot=None, gradWdot=None):
    """Stress bundle with ``P = rho0 de/dF``, ``S = rho0 de/dgradW``, ``z_eq = rho0 de/dw``.

    Viscous parts are added to ``z`` (and reported separately) when rates are
    given.  ``S`` holds only the equilibrium phason stress.
    """
    _check_orientation(dp.F)
    W, P, zeq, S = model.density_derivs(dp.F, w, dp.gradW, dp.gamma, dp.g)
    e = W / model.rho0
    Pesh = eshelby(e, P, S, dp.F, dp.gradW, model.rho0)
    b = StressBundle(e=e, P=P, S=S, z=zeq.copy(), Pesh=Pesh, z_eq=zeq)
    if wdot is not None:
        if gradWdot is None:
            gradWdot = np.zeros(np.shape(dp.gradW))
        zv, Sv, diss = model.viscous(dp.F, w, dp.gradW, wdot, gradWdot)
        b.z = zeq + zv
        b.z_v, b.S_v, b.dissipation = zv, Sv, diss
    return b


def cauchy_stress(P, F):
    """``sigma = P F^T / det F``."""
    J, _ = alg.det_inv(F)
    return P @ alg.transpose(F) / np.asarray(J)[..., None, None]


def moment_residual(model, dp, w):
    """``skw(F (de/dF)^T + w (x) de/dw + grad w (de/dgradW)^T)``.

    Vanishes for energies invariant under joint rotation of x, w and grad w.
    The w-dyad is absent for IQ kinds (their energy ignores w).
    """
    _, dF, dw, dN = model.density_derivs(dp.F, w, dp.gradW, dp.gamma, dp.g)
    m = dp.F @ alg.transpose(dF) + dp.gradW @ alg.transpose(dN)
    if not model.is_iq:
        m = m + alg.dyad(w, dw)
    return alg.skw(m) / model.rho0


def metric_derivative(model, dp, w, rel=1e-6):
    """``de/dgamma`` by central differences over six symmetric perturbations.

    Off-diagonal entries are half the derivative along the symmetric
    direction ``e_A (x) e_B + e_B (x) e_A`` so the result is the symmetric
    tensor gradient.
    """
    gamma = np.asarray(dp.gamma, float)
    out = np.zeros(np.shape(dp.F)[:-2] + (3, 3))
    h = rel * (1.0 + np.abs(gamma).max())
    for A in range(3):
        for B in range(A, 3):
            d = np.zeros((3, 3))
            d[A, B] = d[B, A] = h
            ep = model.density(dp.F, w, dp.gradW, gamma + d, dp.g)
            em = model.density(dp.F, w, dp.gradW, gamma - d, dp.g)
            val = (ep - em) / (2 * h) / model.rho0
            if A == B:
                out[..., A, A] = val
            else:
                out[..., A, B] = out[..., B, A] = 0.5 * val
    return out


def metric_relation_residual(model, dp, w):
    """``(Pesh^T - 2 rho0 (de/dgamma) gamma, skw(Pesh^T gamma^-1))``.

    With the row-major storage used here the Eshelby tensor obeys
    ``Pesh = 2 rho0 gamma de/dgamma``; its transpose is the mixed-index form
    ``2 rho0 (de/dgamma) gamma`` whose raised-index version is symmetric.
    Requires the stvenant kind (the only one whose energy reads the reference
    metric).
    """
    if model.kind != "IIC_stvenant":
        raise ValueError("metric relation needs a model with explicit metric dependence")
    b = stresses(model, dp, w)
    de_dgamma = metric_derivative(model, dp, w)
    gamma = np.asarray(dp.gamma, float)
    PT = alg.transpose(b.Pesh)
    res = PT - 2.0 * model.rho0 * (de_dgamma @ gamma)
    _, gi = alg.det_inv(gamma)
    return res, alg.skw(PT @ gi)


# ---------------------------------------------------------------- surface

SURFACE_KINDS = ("constant", "anisotropic_quadratic")


@dataclass(frozen=True)
class SurfaceEnergyModel:
    """``phi = phi0 (1 + delta sum m_k^4) + kF |EE|^2 + kw/2 |<w>|^2 + kN/2 |NN|^2``.

    ``EE = (FF^T FF - Pi)/2`` is the surface strain of the projected
    deformation gradient ``FF = <F> Pi``.
    """

    kind: str = "constant"
    phi0: float = 0.0
    delta: float = 0.0
    k_F: float = 0.0
    k_w: float = 0.0
    k_N: float = 0.0

    def __post_init__(self):
        if self.kind not in SURFACE_KINDS:
            raise ValueError(f"unknown surface kind {self.kind!r}")
        if self.phi0 < 0 or self.k_F < 0 or self.k_w < 0 or self.k_N < 0:
            raise ValueError("surface coefficients must be non-negative")
        if self.delta < -1:
            raise ValueError("anisotropy delta < -1 makes phi negative on some normals")


def surface_eval(sem, m, FF, w_avg, NN, tol=1e-4):
    """``(phi, TT, SS, zz, dphi/dm)`` with ``TT = -dphi/dFF``, ``SS = -dphi/dNN``, ``zz = dphi/dw``."""
    m = np.asarray(m, float)
    FF = np.asarray(FF, float)
    NN = np.asarray(NN, float)
    w_avg = np.asarray(w_avg, float)
    if np.any(np.abs(np.linalg.norm(m, axis=-1) - 1.0) > tol):
        raise NonUnitNormal("surface normal must have unit length")
    if sem.kind == "constant":
        z3 = np.zeros(m.shape[:-1] + (3, 3))
        return (np.full(m.shape[:-1], float(sem.phi0)), z3, z3.copy(),
                np.zeros_like(m), np.zeros_like(m))
    Pi = alg.EYE - alg.dyad(m, m)
    EE = 0.5 * (alg.transpose(FF) @ FF - Pi)
    m4 = np.sum(m ** 4, axis=-1)
    phi = (sem.phi0 * (1.0 + sem.delta * m4) + sem.k_F * alg.ddot(EE, EE)
           + 0.5 * sem.k_w * np.sum(w_avg * w_avg, axis=-1) + 0.5 * sem.k_N * alg.ddot(NN, NN))
    TT = -2.0 * sem.k_F * (FF @ EE)
    SS = -sem.k_N * NN
    zz = sem.k_w * w_avg
    dm = 4.0 * sem.phi0 * sem.delta * m ** 3 + 2.0 * sem.k_F * np.einsum("...AB,...B->...A", EE, m)
    return phi, TT, SS, zz, dm
