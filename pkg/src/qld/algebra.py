"""Small dense tensor kernels.

Every function accepts a single object or a stack of them: a Vec3 is an array
with trailing shape ``(3,)``, a Mat3 ``(3, 3)`` and a Tensor4 ``(3, 3, 3, 3)``.
Index convention is row-major throughout the package: ``m[..., i, j]`` has the
output index in the row.  For two-point tensors (F, P, grad w, S) the row index
lives in the spatial (or phason) space and the column index in the reference
body; a Tensor4 coupling two such tensors is ordered ``(i, A, j, B)``.
"""

import numpy as np

from .errors import NotSkew, SingularMatrix

EYE = np.eye(3)

# Levi-Civita alternator
ALT = np.zeros((3, 3, 3))
ALT[0, 1, 2] = ALT[1, 2, 0] = ALT[2, 0, 1] = 1.0
ALT[0, 2, 1] = ALT[2, 1, 0] = ALT[1, 0, 2] = -1.0


def norm(m):
    """Frobenius norm over the trailing tensor axes."""
    m = np.asarray(m)
    if m.ndim == 0:
        return abs(m)
    axes = (-2, -1) if m.ndim >= 2 and m.shape[-2:] == (3, 3) else (-1,)
    return np.sqrt(np.sum(m * m, axis=axes))


def det(m):
    m = np.asarray(m, dtype=float)
    return (
        m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
        - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
        + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
    )


def cofactor(m):
    """Cofactor matrix, so that ``inv(m) = cofactor(m).T / det(m)``."""
    m = np.asarray(m, dtype=float)
    c = np.empty(m.shape)
    for i in range(3):
        for j in range(3):
            r = [k for k in range(3) if k != i]
            s = [k for k in range(3) if k != j]
            minor = (m[..., r[0], s[0]] * m[..., r[1], s[1]]
                     - m[..., r[0], s[1]] * m[..., r[1], s[0]])
            c[..., i, j] = (-1) ** (i + j) * minor
    return c


def det_inv(m):
    """Return ``(det m, m^-1)``.

    Raises SingularMatrix when ``|det m| <= 1e-14 * |m|^3`` for any matrix of
    the stack; the threshold scales with the matrix so it is unit-consistent.
    """
    m = np.asarray(m, dtype=float)
    d = det(m)
    scale = norm(m) ** 3
    bad = np.abs(d) <= 1e-14 * scale
    if np.any(bad):
        raise SingularMatrix(f"singular matrix (|det| = {np.min(np.abs(d)):.3e})")
    inv = np.swapaxes(cofactor(m), -1, -2) / d[..., None, None]
    return d, inv


def transpose(m):
    return np.swapaxes(m, -1, -2)


def sym(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + transpose(m))


def skw(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * (m - transpose(m))


def cross(a, b):
    """Cross product built from the alternator."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.einsum("ijk,...j,...k->...i", ALT, a, b)


def spin(q):
    """Matrix ``W`` with ``W @ b == cross(q, b)``."""
    q = np.asarray(q, dtype=float)
    return -np.einsum("ijk,...k->...ij", ALT, q)


def axial(m, check=True):
    """Axial vector ``q`` of a skew matrix, inverse of :func:`spin`."""
    m = np.asarray(m, dtype=float)
    if check:
        s = norm(sym(m))
        if np.any(s > 1e-10 * np.maximum(norm(m), 1e-300)):
            raise NotSkew("axial() needs a skew-symmetric argument")
    return -0.5 * np.einsum("ijk,...jk->...i", ALT, m)


def dyad(a, b):
    return np.asarray(a, dtype=float)[..., :, None] * np.asarray(b, dtype=float)[..., None, :]


def ddot(a, b):
    """Full contraction ``a : b`` of two Mat3 stacks."""
    return np.sum(np.asarray(a) * np.asarray(b), axis=(-2, -1))


def t4_apply(c, m):
    """``(c : m)_{iA} = c_{iAjB} m_{jB}``."""
    m = np.asarray(m, dtype=float)
    return (m.reshape(-1, 9) @ np.asarray(c).reshape(9, 9).T).reshape(m.shape)


def t4_apply_left(c, m):
    """``(m : c)_{jB} = m_{iA} c_{iAjB}``."""
    m = np.asarray(m, dtype=float)
    return (m.reshape(-1, 9) @ np.asarray(c).reshape(9, 9)).reshape(m.shape)


def t4_major_sym(c):
    return 0.5 * (c + np.transpose(c, (2, 3, 0, 1)))


def t4_as_matrix(c):
    return np.asarray(c, dtype=float).reshape(9, 9)


def random_rotation(rng, size=None):
    """Uniformly distributed proper rotations (QR of a Gaussian matrix)."""
    shape = () if size is None else (size,)
    a = rng.standard_normal(shape + (3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[..., None, :]
    q[..., :, 0] *= np.sign(det(q))[..., None]
    return q
