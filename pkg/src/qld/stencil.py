"""Cell-corner quadrature operator for the variational solver.

Each grid cell carries ``2**dim`` quadrature points, one at every corner, each
weighted by ``vol / 2**dim``.  The gradient at a corner takes, along every
active axis, the difference across the cell edge meeting that corner.  In 1-D
this is the usual staggered (face) difference; in 2-D it averages the two
diagonal triangulations and has no hourglass modes.

With ``G`` the sparse corner-gradient matrix, the discrete energy
``sum_c w_c W(F_c, w_c, gradW_c)`` has nodal gradient ``G^T (w P) + A^T (w z)``
where ``A`` picks the corner's own node.  Nodal forces are minus that, so the
discrete divergence is a flux difference and translation momenta are conserved
exactly.
"""

import itertools

import numpy as np
import scipy.sparse as sp


class CornerOperator:
    def __init__(self, grid):
        self.grid = grid
        dim = grid.dim
        shape = grid.shape
        cell_idx = np.stack(np.meshgrid(*[np.arange(n) for n in grid.cells], indexing="ij"),
                            axis=-1).reshape(-1, dim)
        n_cells = cell_idx.shape[0]
        corners = list(itertools.product((0, 1), repeat=dim))
        n_corners = n_cells * len(corners)

        def node_of(idx):
            idx = idx.copy()
            for a in range(dim):
                if grid.periodic[a]:
                    idx[:, a] %= shape[a]
            return np.ravel_multi_index(tuple(idx.T), shape)

        corner_node = np.empty((n_cells, len(corners)), dtype=np.int64)
        rows, cols, vals = [], [], []
        for k, off in enumerate(corners):
            here = cell_idx + np.array(off)
            corner_node[:, k] = node_of(here)
            cid = np.arange(n_cells) * len(corners) + k
            for a in range(dim):
                lo = here.copy()
                hi = here.copy()
                lo[:, a] = cell_idx[:, a]
                hi[:, a] = cell_idx[:, a] + 1
                r = cid * dim + a
                rows += [r, r]
                cols += [node_of(hi), node_of(lo)]
                vals += [np.full(n_cells, 1.0 / grid.h[a]), np.full(n_cells, -1.0 / grid.h[a])]
        self.dim = dim
        self.n_cells = n_cells
        self.corners_per_cell = len(corners)
        self.n_corners = n_corners
        self.n_nodes = grid.n_nodes
        self.corner_node = corner_node.reshape(-1)
        self.weight = grid.cell_volume / len(corners)
        self.G = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_corners * dim, self.n_nodes))
        self.GT = self.G.T.tocsr()
        self.A = sp.csr_matrix(
            (np.ones(n_corners), (self.corner_node, np.arange(n_corners))),
            shape=(self.n_nodes, n_corners))
        self.mass = np.asarray(self.A.sum(axis=1)).ravel() * self.weight

    # nodal arrays are flattened to (n_nodes, k)
    def flat(self, f):
        return np.asarray(f).reshape(self.n_nodes, -1)

    def unflat(self, f, trailing=(3,)):
        return np.asarray(f).reshape(self.grid.shape + tuple(trailing))

    def corner_gradient(self, f):
        """Corner gradients of a nodal vector field, shape ``(n_corners, 3, 3)``.

        The field must be periodic on periodic axes (pass displacements).
        """
        d = (self.G @ self.flat(f)).reshape(self.n_corners, self.dim, -1)
        out = np.zeros((self.n_corners, d.shape[2], 3))
        out[:, :, :self.dim] = np.swapaxes(d, 1, 2)
        return out

    def corner_values(self, f):
        return self.flat(f)[self.corner_node]

    def cell_gradient(self, f):
        """Gradient averaged over each cell's corners, shape ``(n_cells, 3, 3)``."""
        g = self.corner_gradient(f).reshape(self.n_cells, self.corners_per_cell, -1, 3)
        return g.mean(axis=1)

    def flux_divergence(self, P):
        """``-G^T (w P)`` per node: the weak divergence times nodal mass.

        ``P`` is ``(n_corners, k, 3)`` with reference index last.  Returns
        ``(n_nodes, k)``.
        """
        q = np.swapaxes(P[:, :, :self.dim], 1, 2).reshape(self.n_corners * self.dim, -1)
        return -(self.GT @ q) * self.weight

    def scatter(self, z):
        """``A^T``-weighted sum of corner point values onto nodes."""
        return (self.A @ np.asarray(z).reshape(self.n_corners, -1)) * self.weight

    def stiffness(self, scale=1.0):
        """Scalar Laplacian ``G^T W G`` (one copy per vector component is implied)."""
        return (self.GT @ self.G) * (self.weight * scale)
