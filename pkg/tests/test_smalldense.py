from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slcurv.errors import DegenerateArrow, NonFinite, SolveFailed
from slcurv.smalldense import (
    SparseSystem,
    arrow_eigen_reference,
    arrow_matrix,
    jacobi_eigh,
    sparse_solve,
    sym_eigen,
)

# 1 - 1e-6 + 1e-12 - ..., exact root of l^2 - (1 + a) l + (a - 1) with a = 1e6 (mpmath, 30 digits)
ARROW_SMALL_ROOT = 0.999998999999000000000001983456


def test_identity_eigen():
    pair = sym_eigen(np.eye(2))
    assert np.array_equal(pair.values, [1.0, 1.0])
    assert np.allclose(pair.vectors.T @ pair.vectors, np.eye(2), atol=1e-15)


def test_two_by_two_symmetric():
    pair = sym_eigen(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(pair.values, [3.0, 1.0], atol=1e-15)
    v1, v2 = pair.vectors[:, 0], pair.vectors[:, 1]
    assert abs(abs(v1 @ np.array([1, 1]) / np.sqrt(2)) - 1) < 1e-14
    assert abs(abs(v2 @ np.array([1, -1]) / np.sqrt(2)) - 1) < 1e-14


def test_random_reconstruction_batch():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((2000, 3, 3))
    m = (m + np.swapaxes(m, 1, 2)) / 2
    vals, vecs = jacobi_eigh(m)
    rebuilt = np.einsum("bik,bk,bjk->bij", vecs, vals, vecs)
    assert np.max(np.abs(rebuilt - m)) <= 1e-10
    assert np.all(np.diff(vals, axis=1) <= 0.0)


def test_matches_lapack_on_4x4():
    rng = np.random.default_rng(4)
    m = rng.standard_normal((4, 4))
    m = m + m.T
    assert np.allclose(sym_eigen(m).values, np.linalg.eigvalsh(m)[::-1], atol=1e-12)


def test_non_finite_rejected():
    with pytest.raises(NonFinite):
        sym_eigen(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_small_eigenvalue_relative_accuracy():
    # graded matrix: Jacobi resolves the tiny eigenvalue to relative accuracy
    m = np.array([[1.0, 1e-9], [1e-9, 1e-12]])
    small = sym_eigen(m).values[1]
    exact = 1e-12 - 1e-18 / (1.0 - 1e-12)
    assert abs(small - exact) <= 1e-10 * abs(exact)


@given(arrays(np.float64, (3, 3), elements=st.floats(-1e6, 1e6)))
def test_trace_and_determinant(m):
    m = (m + m.T) / 2
    vals = sym_eigen(m).values
    tr = np.trace(m)
    assert abs(vals.sum() - tr) <= 1e-9 * (1 + abs(tr)) + 1e-15 * np.max(np.abs(m)) * 3
    det = (
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )
    prod = np.prod(vals)
    scale = np.prod(np.abs(vals)) + 1e-300
    # relative to the product of magnitudes: a determinant cancelling to ~0 has no relative digits
    assert abs(prod - det) <= 1e-8 * max(abs(det), 1e-7 * scale) + 1e-12 * np.max(np.abs(m)) ** 3


def test_arrow_two_by_two_exact_root():
    m = arrow_matrix([1.0], [1.0], 1e6)
    vals = sym_eigen(m).values
    assert abs(vals[1] - ARROW_SMALL_ROOT) <= 1e-15
    ref = arrow_eigen_reference([1.0], [1.0], 1e6)
    assert np.allclose(ref, [1.0, 1e6])
    assert abs(vals[1] - ref[0]) == pytest.approx(1e-6, rel=1e-5)


def test_arrow_block_diagonal_exact():
    assert np.array_equal(sym_eigen(arrow_matrix([1.0], [0.0], 5.0)).values, [5.0, 1.0])


def test_arrow_three_by_three_large_corner():
    d, off, a = [2.0, 1.0], [0.5, 0.5], 1e8
    vals = sym_eigen(arrow_matrix(d, off, a)).values
    ref = arrow_eigen_reference(d, off, a)
    assert np.max(np.abs(vals[1:] - np.array(ref[:2]))) <= 1e-7


def test_arrow_one_over_a_trend():
    d, off = [2.0, 1.0], [0.5, 0.5]
    dev = []
    for a in (1e4, 1e6, 1e8):
        vals = sym_eigen(arrow_matrix(d, off, a)).values
        dev.append(np.max(np.abs(vals[1:] - np.array(d))) * a)
    assert max(dev) / min(dev) <= 10.0


def test_arrow_degenerate():
    with pytest.raises(DegenerateArrow):
        arrow_eigen_reference([1.0], [1.0], 1.5)


def test_identity_system():
    b = np.array([1.0, -2.0, 3.5])
    x = sparse_solve(SparseSystem(scipy.sparse.identity(3, format="csr"), b))
    assert np.array_equal(x, b)


def test_tridiagonal_laplacian_quadratic_exact():
    h = 1.0 / 8
    x = np.arange(1, 8) * h
    n = len(x)
    mat = scipy.sparse.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h**2
    # -u'' = 2 for u = x (1 - x), zero boundary values
    sol = sparse_solve(SparseSystem(mat.tocsr(), np.full(n, 2.0)))
    assert np.max(np.abs(sol - x * (1 - x))) <= 1e-14


def test_singular_row():
    mat = scipy.sparse.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SolveFailed):
        sparse_solve(SparseSystem(mat, np.ones(2)))


def test_iterative_path_meets_contract(monkeypatch):
    import slcurv.smalldense as sd

    monkeypatch.setattr(sd, "BANDED_MAX_UNKNOWNS", 10)
    rng = np.random.default_rng(0)
    n = 400
    mat = scipy.sparse.diags(
        [-np.ones(n - 1), 4 + rng.random(n), -0.5 * np.ones(n - 1)], [-1, 0, 1], format="csr"
    )
    b = rng.standard_normal(n)
    x = sd.sparse_solve(SparseSystem(mat, b))
    assert np.linalg.norm(mat @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_solve_deterministic():
    rng = np.random.default_rng(1)
    n = 50
    mat = scipy.sparse.diags([rng.random(n - 1), 3 + rng.random(n), rng.random(n - 1)], [-1, 0, 1])
    b = rng.standard_normal(n)
    x1 = sparse_solve(SparseSystem(mat.tocsr(), b))
    x2 = sparse_solve(SparseSystem(mat.tocsr(), b))
    assert x1.tobytes() == x2.tobytes()
