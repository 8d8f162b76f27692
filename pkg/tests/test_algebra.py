import numpy as np
import pytest
from hypothesis import assume, given

from conftest import mat3, vec3
from qld import algebra as alg
from qld.errors import NotSkew, SingularMatrix


def laplace_det(m):
    """Determinant by first-row Laplace expansion written out with loops."""
    if len(m) == 1:
        return m[0][0]
    total = 0.0
    for j in range(len(m)):
        minor = [[m[r][c] for c in range(len(m)) if c != j] for r in range(1, len(m))]
        total += (-1) ** j * m[0][j] * laplace_det(minor)
    return total


def adjugate_inverse(m):
    m = [[float(v) for v in row] for row in m]
    d = laplace_det(m)
    inv = [[0.0] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            minor = [[m[r][c] for c in range(3) if c != i] for r in range(3) if r != j]
            inv[i][j] = (-1) ** (i + j) * laplace_det(minor) / d
    return np.array(inv)


def test_det_inv_identity():
    d, inv = alg.det_inv(np.eye(3))
    assert d == 1.0
    assert np.array_equal(inv, np.eye(3))


def test_det_inv_diagonal():
    d, inv = alg.det_inv(np.diag([2.0, 3.0, 4.0]))
    assert d == pytest.approx(24.0, rel=1e-15)
    assert np.allclose(inv, np.diag([0.5, 1 / 3, 0.25]), rtol=1e-15, atol=0)


def test_det_inv_matches_adjugate_oracle(rng):
    for _ in range(50):
        m = np.eye(3) + 0.5 * rng.standard_normal((3, 3))
        if np.linalg.cond(m) > 1e3:
            continue
        d, inv = alg.det_inv(m)
        ref = adjugate_inverse(m)
        assert d == pytest.approx(laplace_det(m.tolist()), rel=1e-12)
        assert np.abs(inv - ref).max() <= 1e-12 * np.abs(ref).max()


def test_det_inv_singular():
    with pytest.raises(SingularMatrix):
        alg.det_inv(np.array([[1.0, 2, 3], [2, 4, 6], [0, 1, 1]]))
    # threshold scales with the matrix: a tiny but regular matrix is fine
    d, _ = alg.det_inv(1e-8 * np.eye(3))
    assert d > 0


def test_det_inv_stack():
    m = np.stack([np.eye(3), 2 * np.eye(3)])
    d, inv = alg.det_inv(m)
    assert np.allclose(d, [1, 8])
    assert np.allclose(inv[1], 0.5 * np.eye(3))


@given(mat3, mat3)
def test_det_multiplicative(a, b):
    assume(np.linalg.cond(a) < 1e4 and np.linalg.cond(b) < 1e4)
    lhs = alg.det(a @ b)
    rhs = alg.det(a) * alg.det(b)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(rhs), alg.norm(a) ** 3 * alg.norm(b) ** 3 * 1e-3)


def test_skw_examples():
    s = np.array([[1.0, 2, 3], [2, 5, 6], [3, 6, 9]])
    assert np.array_equal(alg.skw(s), np.zeros((3, 3)))
    e, f = np.array([1.0, 0, 0]), np.array([0.0, 1, 0])
    assert np.array_equal(alg.skw(np.outer(e, f)), 0.5 * (np.outer(e, f) - np.outer(f, e)))


@given(mat3)
def test_skw_sym_reassemble(m):
    back = alg.skw(m) + alg.sym(m)
    for i in range(3):
        for j in range(3):
            assert back[i, j] == pytest.approx(m[i, j], abs=1e-15)


@given(mat3)
def test_skw_idempotent(m):
    s = alg.skw(m)
    assert np.array_equal(alg.skw(s), s)
    assert np.array_equal(alg.skw(alg.sym(m)), np.zeros((3, 3)))


def test_cross_basis():
    e1, e2, e3 = np.eye(3)
    assert np.array_equal(alg.cross(e1, e2), e3)


@given(vec3, vec3)
def test_cross_properties(a, b):
    c = alg.cross(a, b)
    # componentwise oracle
    ref = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    assert np.allclose(c, ref, rtol=0, atol=1e-14)
    assert abs(a @ c) <= 1e-13 * (1 + np.linalg.norm(a) ** 2 * np.linalg.norm(b))
    assert np.array_equal(c, -alg.cross(b, a))


@given(vec3)
def test_axial_round_trip(q):
    W = alg.spin(q)
    assert np.allclose(alg.axial(W), q, rtol=0, atol=1e-15)
    b = np.array([0.3, -1.2, 2.0])
    assert np.allclose(W @ b, alg.cross(q, b), atol=1e-14)


def test_axial_rejects_symmetric():
    with pytest.raises(NotSkew):
        alg.axial(np.eye(3))


def test_t4_apply_matches_loops(rng):
    C = rng.standard_normal((3, 3, 3, 3))
    m = rng.standard_normal((3, 3))
    ref = np.zeros((3, 3))
    left = np.zeros((3, 3))
    for i in range(3):
        for A in range(3):
            for j in range(3):
                for B in range(3):
                    ref[i, A] += C[i, A, j, B] * m[j, B]
                    left[j, B] += m[i, A] * C[i, A, j, B]
    assert np.allclose(alg.t4_apply(C, m), ref, atol=1e-13)
    assert np.allclose(alg.t4_apply_left(C, m), left, atol=1e-13)


def test_random_rotation(rng):
    Q = alg.random_rotation(rng, 20)
    assert np.allclose(Q @ np.swapaxes(Q, -1, -2), np.eye(3), atol=1e-13)
    assert np.allclose(alg.det(Q), 1.0)
