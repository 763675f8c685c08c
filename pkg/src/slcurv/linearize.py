"""First derivatives of the operator (D^2u, Du) -> G(A(D^2u, Du)).

``dG_dA`` differentiates G with respect to the curvature matrix by the
spectral formula G^{ij} = sum_k g_k q_ki q_kj. ``linearized_coeffs`` pushes
that through the curvature matrix to get the coefficients of the second-
and first-derivative slots, which are the Newton system coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConeBoundary
from .geometry import (
    OperatorParams,
    PointGeometry,
    assemble_point,
    concave_G,
    curvature_matrix,
    phase_F,
)
from .smalldense import jacobi_eigh

MIN_MARGIN = 1e-10
FD_EPS = 1e-5


@dataclass(frozen=True)
class LinearizedPoint:
    g_tilde_second: np.ndarray  # coefficients of u_ij
    g_tilde_first: np.ndarray  # coefficients of u_i
    g_upper: np.ndarray  # dG/da_ij
    g_diag: np.ndarray  # dG/dkappa_i, matched to geom.kappa


def eigen_derivatives(kappa, params: OperatorParams):
    """g_i = A exp(-A F) / (1 + kappa_i^2)."""
    kappa = np.asarray(kappa, dtype=float)
    scale = params.a_param * np.exp(-params.a_param * phase_F(kappa))
    return scale[..., None] / (1.0 + kappa**2)


def _require_margin(kappa, params):
    margin = phase_F(kappa) - params.sigma
    if np.any(margin < MIN_MARGIN):
        raise ConeBoundary(
            f"phase margin {float(np.min(margin)):.3e} below {MIN_MARGIN:.0e}"
        )


def dG_dA(geom: PointGeometry, params: OperatorParams, check=True):
    if check:
        _require_margin(geom.kappa, params)
    g = eigen_derivatives(geom.kappa, params)
    q = geom.frame
    return np.einsum("...ik,...k,...jk->...ij", q, g, q)


def linearized_coeffs(geom: PointGeometry, params: OperatorParams, check=True) -> LinearizedPoint:
    g_upper = dG_dA(geom, params, check)
    g = eigen_derivatives(geom.kappa, params)
    w = geom.w[..., None, None]
    b = geom.b_upper
    p = geom.grad
    second = b @ g_upper @ b / w
    trace_gk = np.sum(g * geom.kappa, axis=-1)
    bga_p = np.einsum("...ij,...j->...i", b @ g_upper @ geom.amat, p)
    first = -(p / (geom.w**2)[..., None]) * trace_gk[..., None] - 2.0 * bga_p / geom.w[..., None]
    return LinearizedPoint(
        g_tilde_second=second,
        g_tilde_first=first,
        g_upper=g_upper,
        g_diag=g,
    )


def operator_value(grad, hess, params: OperatorParams):
    """G(A(hess, grad)) evaluated directly; the finite-difference reference path."""
    kappa, _ = jacobi_eigh(curvature_matrix(grad, hess))
    return concave_G(kappa, params)


def fd_validate(geom: PointGeometry, params: OperatorParams, trials=20, seed=0, eps=FD_EPS):
    """Worst relative gap between analytic and central-difference directional derivatives.

    Each trial perturbs the Hessian by a random symmetric matrix and the
    gradient by a random vector, jointly normalised to unit Frobenius norm.
    """
    lin = linearized_coeffs(geom, params)
    rng = np.random.default_rng(seed)
    n = geom.n
    worst = 0.0
    for _ in range(trials):
        dh = rng.standard_normal((n, n))
        dh = (dh + dh.T) / 2
        dp = rng.standard_normal(n)
        norm = np.sqrt(np.sum(dh * dh) + np.sum(dp * dp))
        worst = max(worst, directional_error(geom, params, lin, dh / norm, dp / norm, eps))
    return worst


def directional_error(geom, params, lin, dh, dp, eps=FD_EPS):
    analytic = float(np.sum(lin.g_tilde_second * dh) + np.sum(lin.g_tilde_first * dp))
    plus = operator_value(geom.grad + eps * dp, geom.hess + eps * dh, params)
    minus = operator_value(geom.grad - eps * dp, geom.hess - eps * dh, params)
    fd = float((plus - minus) / (2.0 * eps))
    denom = max(abs(analytic), abs(fd))
    if denom == 0.0:
        return 0.0
    return abs(analytic - fd) / denom


def subsolution_gap(geom_u: PointGeometry, geom_sub: PointGeometry, params: OperatorParams):
    """sum_ij Gtilde_ij(u) (sub_ij - u_ij); a monitored quantity, not asserted positive."""
    lin = linearized_coeffs(geom_u, params, check=False)
    return np.sum(lin.g_tilde_second * (geom_sub.hess - geom_u.hess), axis=(-2, -1))


def admissible_point(n, params: OperatorParams, rng, grad_scale=2.0, max_tries=10000):
    """Random (grad, hess) whose curvatures sit inside the cone with margin >= 1e-3."""
    for _ in range(max_tries):
        grad = rng.uniform(-grad_scale, grad_scale, n)
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        lam = rng.uniform(0.2, 5.0, n)
        lam[-1] = rng.uniform(-0.5, 5.0)
        hess = q @ np.diag(lam) @ q.T
        geom = assemble_point(grad, hess)
        if phase_F(geom.kappa) - params.sigma >= 1e-3:
            return geom
    raise RuntimeError("could not draw an admissible point")
