"""Grids, field states and the deformation measures built from them.

One- and two-dimensional bodies are embedded in three-space: every vector
field keeps three components, and derivatives along the inactive reference
directions are exact zeros, so ``F`` carries ``e_B`` in each inactive column.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import algebra as alg
from .errors import OrientationViolation


@dataclass(frozen=True)
class Grid:
    """Uniform structured grid on a box in the reference body.

    Periodic axes have ``cells`` nodes (the last node wraps onto the first);
    bounded axes have ``cells + 1`` nodes including both end faces.
    """

    cells: tuple
    length: tuple
    periodic: tuple
    origin: tuple = None

    def __post_init__(self):
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        dim = len(cells)
        length = tuple(float(v) for v in np.broadcast_to(self.length, (dim,)))
        periodic = tuple(bool(v) for v in np.broadcast_to(self.periodic, (dim,)))
        origin = (0.0,) * dim if self.origin is None else tuple(
            float(v) for v in np.broadcast_to(self.origin, (dim,)))
        if dim not in (1, 2):
            raise ValueError("only 1-D and 2-D grids are supported")
        if any(c < 4 for c in cells):
            raise ValueError("need at least 4 cells per active axis")
        if any(v <= 0 for v in length):
            raise ValueError("grid lengths must be positive")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "periodic", periodic)
        object.__setattr__(self, "origin", origin)

    @property
    def dim(self):
        return len(self.cells)

    @property
    def h(self):
        return tuple(L / n for L, n in zip(self.length, self.cells))

    @property
    def shape(self):
        return tuple(n if p else n + 1 for n, p in zip(self.cells, self.periodic))

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def axis_coords(self, axis):
        return self.origin[axis] + self.h[axis] * np.arange(self.shape[axis])

    def reference_coords(self):
        """Nodal reference positions X, shape ``shape + (3,)``."""
        X = np.zeros(self.shape + (3,))
        mesh = np.meshgrid(*[self.axis_coords(a) for a in range(self.dim)], indexing="ij")
        for a in range(self.dim):
            X[..., a] = mesh[a]
        return X

    def zeros(self, *trailing):
        return np.zeros(self.shape + tuple(trailing))


@dataclass
class FieldState:
    """Nodal placement ``x``, velocity ``xdot``, phason field ``w`` and its rate."""

    x: np.ndarray
    xdot: np.ndarray
    w: np.ndarray
    wdot: np.ndarray
    t: float = 0.0

    @classmethod
    def natural(cls, grid):
        X = grid.reference_coords()
        return cls(X.copy(), np.zeros_like(X), np.zeros_like(X), np.zeros_like(X), 0.0)

    @classmethod
    def from_displacement(cls, grid, u, w=None, xdot=None, wdot=None, t=0.0):
        X = grid.reference_coords()
        z = np.zeros_like(X)

        def arr(a):
            return z.copy() if a is None else np.broadcast_to(np.asarray(a, float), X.shape).copy()

        return cls(X + arr(u), arr(xdot), arr(w), arr(wdot), float(t))

    def displacement(self, grid):
        return self.x - grid.reference_coords()

    def copy(self):
        return FieldState(self.x.copy(), self.xdot.copy(), self.w.copy(), self.wdot.copy(), self.t)

    def with_time(self, t):
        return replace(self, t=float(t))


@dataclass
class DeformationPoint:
    """Deformation measures at one point (or a stack of points).

    ``F[..., i, A] = dx_i/dX_A`` and ``gradW[..., i, A] = dw_i/dX_A``.
    ``gamma`` and ``g`` are the reference and spatial metrics (identity by default).
    """

    F: np.ndarray
    gradW: np.ndarray
    gamma: np.ndarray = field(default_factory=lambda: np.eye(3))
    g: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        self.gradW = np.asarray(self.gradW, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.g = np.asarray(self.g, dtype=float)

    def right_cauchy_green(self):
        return np.einsum("...iA,ij,...jB->...AB", self.F, self.g, self.F)

    def green_strain(self):
        return 0.5 * (self.right_cauchy_green() - self.gamma)


def _derivative(f, grid, axis):
    """Second-order derivative of a nodal array along a grid axis."""
    h = grid.h[axis]
    if grid.periodic[axis]:
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)
    return np.gradient(f, h, axis=axis, edge_order=2)


def nodal_gradient(f, grid):
    """Nodal gradient of a vector field; inactive columns are zero.

    ``f`` is ``shape + (3,)`` and must be periodic along periodic axes (pass a
    displacement, not a placement).  Returns ``shape + (3, 3)``.
    """
    out = np.zeros(f.shape + (3,))
    for a in range(grid.dim):
        out[..., :, a] = _derivative(f, grid, a)
    return out


def check_orientation(F, where="node"):
    J = alg.det(F)
    bad = np.argwhere(~(J > 0))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise OrientationViolation(f"det F <= 0 at {where} {idx} (det = {J[idx]:.3e})", node=idx)
    return J


def gradients(state, grid, gamma=None, g=None):
    """Nodal F and grad w by second-order finite differences.

    Central differences in the interior and on periodic axes, second-order
    one-sided differences on bounded faces.  Raises OrientationViolation if
    det F <= 0 at any node.
    """
    F = alg.EYE + nodal_gradient(state.displacement(grid), grid)
    gradW = nodal_gradient(state.w, grid)
    check_orientation(F)
    return DeformationPoint(
        F, gradW,
        np.eye(3) if gamma is None else gamma,
        np.eye(3) if g is None else g,
    )


def decompose(dp):
    """Additive and multiplicative phonon-phason split.

    Returns ``(F', F_ph)`` with ``F' = F + grad w`` and
    ``F_ph = I + grad w F^-1`` so that ``F_ph F = F'``.
    """
    Fprime = dp.F + dp.gradW
    Fph = alg.EYE + phason_pushforward(dp)
    return Fprime, Fph


def phason_pushforward(dp):
    """Spatial gradient of the phason field carried to the current place."""
    _, Finv = alg.det_inv(dp.F)
    return dp.gradW @ Finv


def incompatibility(H, grid):
    """Nodal ``inc(H)_{ij} = e_ikl e_jmn H_{ln,km}`` for fields independent of X3.

    Second derivatives come from composing the first-order stencil, so the
    result vanishes exactly for discrete gradients on periodic axes.
    """
    d = [_derivative(H, grid, a) for a in range(grid.dim)]
    dd = {}
    for k in range(grid.dim):
        for m in range(grid.dim):
            dd[k, m] = _derivative(d[m], grid, k)
    out = np.zeros(H.shape)
    for (k, m), Hkm in dd.items():
        # Hkm[..., l, n] = H_{ln,mk}
        out += np.einsum("ikl,jmn,...ln->...ij", alg.ALT[:, k:k + 1, :],
                         alg.ALT[:, m:m + 1, :], Hkm)
    return out


def compatibility_residual(state, grid, grad_u=None, grad_w=None):
    """Nodal norms of the discrete curl curl of sym grad u and of grad w.

    Intended for the small-strain regime where x is close to X + u.  Gradient
    data may be supplied directly (e.g. measured or interpolated tensors);
    otherwise they come from :func:`nodal_gradient`.  In 1-D both residuals
    are zero by construction.
    """
    if grid.dim == 1:
        z = np.zeros(grid.shape)
        return z, z.copy()
    if grad_u is None:
        grad_u = nodal_gradient(state.displacement(grid), grid)
    if grad_w is None:
        grad_w = nodal_gradient(state.w, grid)
    ru = alg.norm(incompatibility(alg.sym(grad_u), grid))
    rw = alg.norm(incompatibility(np.asarray(grad_w, float), grid))
    return ru, rw
