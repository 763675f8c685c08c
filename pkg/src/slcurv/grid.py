"""Uniform lattice on an axis-aligned box with second-order difference stencils.

Node values are stored as an ``(nx, ny)`` array indexed ``[i, j]`` with ``i``
along x; flat orderings are row-major (C order) over that array.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .errors import BoundaryNode, ValidationError
from .smalldense import SparseSystem, sparse_solve


@dataclass(frozen=True)
class Grid2D:
    xmin: float
    xmax: float
    ymin: float
    ymax: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 5 or self.ny < 5:
            raise ValidationError(f"grid needs at least 5 nodes per axis, got {self.nx}x{self.ny}")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValidationError("box must have xmax > xmin and ymax > ymin")

    @classmethod
    def square(cls, nodes, half_width=1.0):
        return cls(-half_width, half_width, -half_width, half_width, nodes, nodes)

    @property
    def hx(self):
        return (self.xmax - self.xmin) / (self.nx - 1)

    @property
    def hy(self):
        return (self.ymax - self.ymin) / (self.ny - 1)

    @property
    def x(self):
        return np.linspace(self.xmin, self.xmax, self.nx)

    @property
    def y(self):
        return np.linspace(self.ymin, self.ymax, self.ny)

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def interior_shape(self):
        return (self.nx - 2, self.ny - 2)

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask

    def is_interior(self, i, j):
        return 0 < i < self.nx - 1 and 0 < j < self.ny - 1

    def sample(self, func):
        X, Y = self.mesh()
        return np.asarray(func(X, Y), dtype=float) * np.ones(self.shape)


@dataclass
class GridField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValidationError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self):
        return GridField(self.grid, self.values.copy())

    @property
    def interior(self):
        return self.values[1:-1, 1:-1]


def _require_interior(grid, i, j):
    if not grid.is_interior(i, j):
        raise BoundaryNode(f"node ({i}, {j}) is not interior on a {grid.nx}x{grid.ny} grid")


def fd_gradient(f: GridField, i, j):
    _require_interior(f.grid, i, j)
    v = f.values
    g = f.grid
    return np.array(
        [(v[i + 1, j] - v[i - 1, j]) / (2 * g.hx), (v[i, j + 1] - v[i, j - 1]) / (2 * g.hy)]
    )


def fd_hessian(f: GridField, i, j):
    _require_interior(f.grid, i, j)
    v = f.values
    g = f.grid
    uxx = (v[i + 1, j] - 2 * v[i, j] + v[i - 1, j]) / g.hx**2
    uyy = (v[i, j + 1] - 2 * v[i, j] + v[i, j - 1]) / g.hy**2
    uxy = (v[i + 1, j + 1] - v[i + 1, j - 1] - v[i - 1, j + 1] + v[i - 1, j - 1]) / (
        4 * g.hx * g.hy
    )
    return np.array([[uxx, uxy], [uxy, uyy]])


def interior_gradients(values, grid: Grid2D):
    """Central-difference gradients at all interior nodes, shape (nx-2, ny-2, 2)."""
    v = np.asarray(values, dtype=float)
    ux = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * grid.hx)
    uy = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * grid.hy)
    return np.stack([ux, uy], axis=-1)


def interior_hessians(values, grid: Grid2D):
    """Stencil Hessians at all interior nodes, shape (nx-2, ny-2, 2, 2)."""
    v = np.asarray(values, dtype=float)
    c = v[1:-1, 1:-1]
    uxx = (v[2:, 1:-1] - 2 * c + v[:-2, 1:-1]) / grid.hx**2
    uyy = (v[1:-1, 2:] - 2 * c + v[1:-1, :-2]) / grid.hy**2
    uxy = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4 * grid.hx * grid.hy)
    out = np.empty(c.shape + (2, 2))
    out[..., 0, 0] = uxx
    out[..., 1, 1] = uyy
    out[..., 0, 1] = uxy
    out[..., 1, 0] = uxy
    return out


def apply_dirichlet(f: GridField, phi) -> GridField:
    """Overwrite boundary nodes with ``phi`` (full-grid array or callable of (X, Y))."""
    if callable(phi):
        phi = f.grid.sample(phi)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != f.grid.shape:
        raise ValidationError(f"boundary data shape {phi.shape} does not match grid {f.grid.shape}")
    mask = f.grid.boundary_mask()
    out = f.values.copy()
    out[mask] = phi[mask]
    return GridField(f.grid, out)


def laplace_dirichlet(phi, grid: Grid2D):
    """Five-point discrete Laplace solve with boundary values taken from ``phi``."""
    phi = np.asarray(phi, dtype=float)
    mi, mj = grid.interior_shape
    cx, cy = 1.0 / grid.hx**2, 1.0 / grid.hy**2
    idx = np.arange(mi * mj).reshape(mi, mj)
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [np.full(mi * mj, -2 * cx - 2 * cy)]
    rhs = np.zeros((mi, mj))
    for di, dj, c in ((1, 0, cx), (-1, 0, cx), (0, 1, cy), (0, -1, cy)):
        src = idx[max(0, -di) : mi - max(0, di), max(0, -dj) : mj - max(0, dj)]
        dst = idx[max(0, di) : mi + min(0, di), max(0, dj) : mj + min(0, dj)]
        rows.append(src.ravel())
        cols.append(dst.ravel())
        vals.append(np.full(src.size, c))
    # boundary neighbours move to the right-hand side
    rhs[0, :] -= cx * phi[0, 1:-1]
    rhs[-1, :] -= cx * phi[-1, 1:-1]
    rhs[:, 0] -= cy * phi[1:-1, 0]
    rhs[:, -1] -= cy * phi[1:-1, -1]
    mat = scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(mi * mj,) * 2
    )
    inner = sparse_solve(SparseSystem(mat, rhs.ravel()))
    out = phi.copy()
    out[1:-1, 1:-1] = inner.reshape(mi, mj)
    return GridField(grid, out)
