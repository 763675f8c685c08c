"""Pointwise geometry of a graph x -> (x, u(x)).

Every function accepts either a single point (``grad`` of shape ``(n,)``,
``hess`` of shape ``(n, n)``) or a batch with leading axes, e.g. all interior
nodes of a grid at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFinite, PhaseOutOfRange, ValidationError
from .smalldense import jacobi_eigh, symmetrize


@dataclass(frozen=True)
class OperatorParams:
    n: int
    delta: float
    a_param: float

    def __post_init__(self):
        if not 1 <= self.n <= 4:
            raise ValidationError(f"dimension n={self.n} outside 1..4")
        if not 0.0 < self.delta < np.pi / 2:
            raise ValidationError(f"delta={self.delta!r} must lie in (0, pi/2)")
        if not self.a_param > 0.0:
            raise ValidationError(f"concavity exponent A={self.a_param!r} must be positive")

    @property
    def sigma(self):
        return (self.n - 2) * np.pi / 2 + self.delta


@dataclass(frozen=True)
class PointGeometry:
    grad: np.ndarray
    hess: np.ndarray
    w: np.ndarray
    b_upper: np.ndarray
    amat: np.ndarray
    kappa: np.ndarray  # descending
    frame: np.ndarray  # eigenvectors of amat, columns matched to kappa

    @property
    def n(self):
        return self.grad.shape[-1]


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFinite("input has NaN or Inf entries")


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def slope_factor(grad):
    grad = np.asarray(grad, dtype=float)
    return np.sqrt(1.0 + np.sum(grad * grad, axis=-1))


def inverse_metric(grad):
    """g^ij = delta_ij - u_i u_j / (1 + |Du|^2)."""
    grad = np.asarray(grad, dtype=float)
    n = grad.shape[-1]
    return np.eye(n) - _outer(grad, grad) / (1.0 + np.sum(grad * grad, axis=-1))[..., None, None]


def b_upper(grad):
    """Positive square root of the inverse metric, in closed form."""
    grad = np.asarray(grad, dtype=float)
    n = grad.shape[-1]
    w = slope_factor(grad)
    return np.eye(n) - _outer(grad, grad) / (w * (1.0 + w))[..., None, None]


def b_lower(grad):
    grad = np.asarray(grad, dtype=float)
    n = grad.shape[-1]
    w = slope_factor(grad)
    return np.eye(n) + _outer(grad, grad) / (1.0 + w)[..., None, None]


def curvature_matrix(grad, hess):
    """Symmetric matrix whose eigenvalues are the principal curvatures.

    Uses the expanded form
    a_ij = (u_ij - (u_i u_l u_jl + u_j u_l u_il)/(w(1+w))
            + u_i u_j u_k u_l u_kl / (w^2 (1+w)^2)) / w.
    """
    grad = np.asarray(grad, dtype=float)
    hess = symmetrize(hess)
    w = slope_factor(grad)
    s = (w * (1.0 + w))[..., None, None]
    hp = np.einsum("...ij,...j->...i", hess, grad)
    php = np.sum(hp * grad, axis=-1)[..., None, None]
    a = hess - (_outer(grad, hp) + _outer(hp, grad)) / s + _outer(grad, grad) * php / (s * s)
    return a / w[..., None, None]


def curvature_matrix_product(grad, hess):
    """(1/w) b . D^2u . b, kept as an independent check on :func:`curvature_matrix`."""
    b = b_upper(grad)
    w = slope_factor(grad)
    return b @ symmetrize(hess) @ b / w[..., None, None]


def shape_operator(grad, hess):
    """Nonsymmetric product [h_ik g^kj]; same spectrum as the curvature matrix."""
    w = slope_factor(grad)
    h = symmetrize(hess) / w[..., None, None]
    return h @ inverse_metric(grad)


def assemble_point(grad, hess) -> PointGeometry:
    grad = np.asarray(grad, dtype=float)
    hess = symmetrize(hess)
    _check_finite(grad, hess)
    if hess.shape[-2:] != (grad.shape[-1], grad.shape[-1]):
        raise ValueError(f"grad {grad.shape} and hess {hess.shape} disagree")
    amat = curvature_matrix(grad, hess)
    kappa, frame = jacobi_eigh(amat)
    return PointGeometry(
        grad=grad,
        hess=hess,
        w=slope_factor(grad),
        b_upper=b_upper(grad),
        amat=amat,
        kappa=kappa,
        frame=frame,
    )


def phase_F(kappa):
    return np.sum(np.arctan(np.asarray(kappa, dtype=float)), axis=-1)


def concave_G(kappa, params: OperatorParams):
    return -np.exp(-params.a_param * phase_F(kappa))


def psi_of_h(h, params: OperatorParams):
    h = np.asarray(h, dtype=float)
    upper = params.n * np.pi / 2
    bad = ~((h >= params.sigma) & (h < upper))
    if np.any(bad):
        worst = h[bad].flat[0] if h.ndim else float(h)
        raise PhaseOutOfRange(
            f"h={worst!r} outside [{params.sigma!r}, {upper!r}) "
            f"({int(np.count_nonzero(bad))} value(s) out of range)"
        )
    return -np.exp(-params.a_param * h)
