"""Small symmetric eigenproblems and the sparse solve behind Newton steps.

Eigenvalues come from cyclic Jacobi rotations applied to whole batches of
n x n matrices at once (n <= 4). Jacobi keeps small eigenvalues accurate
relative to their own size when the matrix is close to diagonal, which the
finite-difference probes in :mod:`slcurv.cone` depend on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import DegenerateArrow, NonFinite, SolveFailed

JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 50
BANDED_MAX_UNKNOWNS = 129 * 129
SOLVE_RTOL = 1e-10


@dataclass(frozen=True)
class EigenPair:
    values: np.ndarray  # descending
    vectors: np.ndarray  # columns are eigenvectors


def symmetrize(m):
    """Mirror the upper triangle onto the lower one (last two axes)."""
    m = np.asarray(m, dtype=float)
    upper = np.triu(m)
    return upper + np.swapaxes(np.triu(m, 1), -1, -2)


def jacobi_eigh(mats):
    """Batched cyclic Jacobi eigen-decomposition.

    ``mats`` has shape ``(..., n, n)``. Returns ``(values, vectors)`` with the
    values sorted descending along the last axis and eigenvectors stored as
    columns.
    """
    a = symmetrize(mats)
    if not np.all(np.isfinite(a)):
        raise NonFinite("matrix has NaN or Inf entries")
    batch_shape = a.shape[:-2]
    n = a.shape[-1]
    a = a.reshape((-1, n, n)).copy()
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    scale = np.sqrt(np.sum(a * a, axis=(1, 2)))
    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]

    for _ in range(JACOBI_MAX_SWEEPS):
        # per-entry test relative to the two diagonal entries it couples, with
        # an absolute floor for zero diagonals
        done = True
        for p, q in pairs:
            bound = np.maximum(
                JACOBI_TOL * np.sqrt(np.abs(a[:, p, p] * a[:, q, q])), 1e-28 * scale
            )
            if np.any(np.abs(a[:, p, q]) > bound):
                done = False
                break
        if done:
            break
        for p, q in pairs:
            apq = a[:, p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            safe = np.where(active, apq, 1.0)
            with np.errstate(over="ignore"):
                # tau = +-inf gives t = 0, the correct limit
                tau = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
                t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.hypot(1.0, t)
            s = t * c
            # A <- J^T A J with J acting on columns p, q
            ap = a[:, :, p].copy()
            aq = a[:, :, q]
            a[:, :, p] = c[:, None] * ap - s[:, None] * aq
            a[:, :, q] = s[:, None] * ap + c[:, None] * aq
            ap = a[:, p, :].copy()
            aq = a[:, q, :]
            a[:, p, :] = c[:, None] * ap - s[:, None] * aq
            a[:, q, :] = s[:, None] * ap + c[:, None] * aq
            a[:, p, q] = 0.0
            a[:, q, p] = 0.0
            vp = v[:, :, p].copy()
            vq = v[:, :, q]
            v[:, :, p] = c[:, None] * vp - s[:, None] * vq
            v[:, :, q] = s[:, None] * vp + c[:, None] * vq

    values = np.diagonal(a, axis1=1, axis2=2)
    order = np.argsort(-values, axis=1, kind="stable")
    values = np.take_along_axis(values, order, axis=1)
    vectors = np.take_along_axis(v, order[:, None, :], axis=2)
    return values.reshape(batch_shape + (n,)), vectors.reshape(batch_shape + (n, n))


def sym_eigen(m) -> EigenPair:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    values, vectors = jacobi_eigh(m)
    return EigenPair(values, vectors)


def arrow_matrix(d, offdiag, a):
    """Symmetric arrow matrix: diag(d) bordered by ``offdiag`` and corner ``a``."""
    d = np.atleast_1d(np.asarray(d, dtype=float))
    offdiag = np.atleast_1d(np.asarray(offdiag, dtype=float))
    if d.shape != offdiag.shape:
        raise ValueError("d and offdiag must have equal length")
    n = len(d) + 1
    m = np.zeros((n, n))
    m[np.arange(n - 1), np.arange(n - 1)] = d
    m[:-1, -1] = offdiag
    m[-1, :-1] = offdiag
    m[-1, -1] = a
    return m


def arrow_eigen_reference(d, offdiag, a):
    """Leading-order eigenvalues of the arrow matrix for a large corner entry.

    Returns ``(d_1, ..., d_{n-1}, a)`` in that order. The bordered rows only
    move the first n-1 eigenvalues by O(1/a), and the last one stays within
    O(1) of ``a``.
    """
    d = np.atleast_1d(np.asarray(d, dtype=float))
    offdiag = np.atleast_1d(np.asarray(offdiag, dtype=float))
    bound = max(np.max(np.abs(d)), np.max(np.abs(offdiag)))
    if not a > 2.0 * bound:
        raise DegenerateArrow(
            f"corner entry a={a!r} is not large against max(|d|, |offdiag|)={bound!r}"
        )
    return np.append(d, float(a))


@dataclass
class SparseSystem:
    matrix: scipy.sparse.csr_matrix
    rhs: np.ndarray

    @property
    def size(self):
        return self.matrix.shape[0]


def _bandwidths(coo):
    if coo.nnz == 0:
        return 0, 0
    diff = coo.row - coo.col
    return int(max(diff.max(), 0)), int(max((-diff).max(), 0))


def _banded_solve(mat, rhs):
    coo = mat.tocoo()
    lower, upper = _bandwidths(coo)
    n = mat.shape[0]
    ab = np.zeros((lower + upper + 1, n))
    ab[upper + coo.row - coo.col, coo.col] = coo.data
    return scipy.linalg.solve_banded((lower, upper), ab, rhs, check_finite=False)


def _iterative_solve(mat, rhs):
    ilu = scipy.sparse.linalg.spilu(mat.tocsc(), drop_tol=1e-6, fill_factor=20)
    prec = scipy.sparse.linalg.LinearOperator(mat.shape, ilu.solve)
    x, info = scipy.sparse.linalg.bicgstab(
        mat, rhs, M=prec, rtol=SOLVE_RTOL * 0.1, atol=0.0, maxiter=2000
    )
    if info != 0:
        raise SolveFailed(f"BiCGSTAB did not converge (info={info})")
    return x


def sparse_solve(system: SparseSystem) -> np.ndarray:
    mat = scipy.sparse.csr_matrix(system.matrix)
    rhs = np.asarray(system.rhs, dtype=float)
    if mat.shape[0] != mat.shape[1]:
        raise SolveFailed(f"matrix is not square: {mat.shape}")
    if rhs.shape != (mat.shape[0],):
        raise SolveFailed(f"rhs shape {rhs.shape} does not match matrix {mat.shape}")
    diag = mat.diagonal()
    if np.any(diag == 0.0):
        rows = np.flatnonzero(diag == 0.0)
        raise SolveFailed(f"zero diagonal entry in rows {rows[:10].tolist()}")
    if not (np.all(np.isfinite(mat.data)) and np.all(np.isfinite(rhs))):
        raise SolveFailed("system has non-finite entries")

    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros_like(rhs)
    solve = _banded_solve if mat.shape[0] <= BANDED_MAX_UNKNOWNS else _iterative_solve
    try:
        x = solve(mat, rhs)
    except (np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
        raise SolveFailed(str(exc)) from exc

    rel = np.linalg.norm(mat @ x - rhs) / bnorm
    if not rel <= SOLVE_RTOL:
        # one step of iterative refinement before giving up
        try:
            x = x + solve(mat, rhs - mat @ x)
        except (np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
            raise SolveFailed(str(exc)) from exc
        rel = np.linalg.norm(mat @ x - rhs) / bnorm
    if not rel <= SOLVE_RTOL:
        raise SolveFailed(f"relative residual {rel:.3e} above {SOLVE_RTOL:.0e}")
    return x
