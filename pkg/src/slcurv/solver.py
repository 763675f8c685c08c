"""Damped Newton with gradient-slot homotopy for the curvature phase equation.

The discrete problem at parameter t is

    G(A(D^2u, t Du)) = psi = -exp(-A h)   at interior nodes,
    u = phi                                on the boundary,

with central differences for Du and D^2u. t = 0 is the Hessian phase
equation; t = 1 is the curvature equation.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse

from .errors import (
    HomotopyStalled,
    InadmissibleIterate,
    LineSearchFailed,
    NotConverged,
    SolveFailed,
    ValidationError,
)
from .geometry import OperatorParams, PointGeometry, assemble_point, phase_F, psi_of_h
from .grid import (
    Grid2D,
    GridField,
    interior_gradients,
    interior_hessians,
    laplace_dirichlet,
)
from .linearize import eigen_derivatives, linearized_coeffs
from .smalldense import SparseSystem, sparse_solve

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    tol_residual: float = 1e-9
    max_newton: int = 50
    armijo_factor: float = 0.5
    armijo_slope: float = 1e-4
    min_step: float = 1e-6
    t_step: float = 0.25
    t_shrink: float = 0.5
    t_min_step: float = 1e-3
    safeguard_margin: float = 1e-8

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValidationError(f"solver setting {name}={value!r} must be positive")
        for name in ("armijo_factor", "t_shrink"):
            if not getattr(self, name) < 1.0:
                raise ValidationError(f"solver setting {name} must lie in (0, 1)")


@dataclass
class Problem:
    """Dirichlet problem on a box: curvature phase ``h`` and boundary data ``phi``.

    ``h`` and ``phi`` are full ``(nx, ny)`` node arrays; only boundary entries
    of ``phi`` are read. ``subsolution`` is optional node data used for
    monitoring and the lower comparison check.
    """

    grid: Grid2D
    h: np.ndarray
    phi: np.ndarray
    delta: float
    subsolution: Optional[np.ndarray] = None
    n: int = 2

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        for name in ("h", "phi"):
            if getattr(self, name).shape != self.grid.shape:
                raise ValidationError(f"{name} shape does not match the grid")
        if self.subsolution is not None:
            self.subsolution = np.asarray(self.subsolution, dtype=float)
            if self.subsolution.shape != self.grid.shape:
                raise ValidationError("subsolution shape does not match the grid")
        if self.n != 2:
            raise ValidationError("the grid solver is two-dimensional (n = 2)")

    def psi(self, params: OperatorParams):
        """psi = -exp(-A h) at interior nodes, flattened row-major."""
        return psi_of_h(self.h[1:-1, 1:-1], params).ravel()

    def validate(self, params: OperatorParams):
        psi_of_h(self.h, params)


@dataclass
class MonitorRecord:
    sup_grad: float
    sup_hess: float
    min_phase_margin: float
    min_sum_g: float
    subsol_gap: Optional[float]
    residual_inf: float


@dataclass
class StepReport:
    alpha: float
    backtracks: int
    residual_before: float
    residual_after: float
    update_inf: float


@dataclass
class StageRecord:
    t: float
    iterations: int
    final_residual: float
    history: list


@dataclass
class SolveReport:
    per_t: list = field(default_factory=list)
    accepted: bool = False
    failure_reason: Optional[str] = None
    rejected: list = field(default_factory=list)  # (t, reason) of failed attempts
    initial_beta: Optional[float] = None

    def to_dict(self):
        return asdict(self)


@dataclass
class NodeState:
    """Everything the solver needs at the interior nodes of one iterate."""

    grad: np.ndarray  # (m, 2), full Du
    geom: PointGeometry  # evaluated at (D^2u, t Du)
    phase: np.ndarray
    margin: np.ndarray
    residual: np.ndarray  # G - psi
    psi: np.ndarray

    @property
    def scaled_residual_inf(self):
        return float(np.max(np.abs(self.residual / self.psi))) if self.residual.size else 0.0


def evaluate(u, problem: Problem, t, params: OperatorParams) -> NodeState:
    values = u.values if isinstance(u, GridField) else np.asarray(u, dtype=float)
    grid = problem.grid
    grad = interior_gradients(values, grid).reshape(-1, 2)
    hess = interior_hessians(values, grid).reshape(-1, 2, 2)
    geom = assemble_point(t * grad, hess)
    phase = phase_F(geom.kappa)
    psi = problem.psi(params)
    residual = -np.exp(-params.a_param * phase) - psi
    return NodeState(grad, geom, phase, phase - params.sigma, residual, psi)


def _offending_nodes(problem, margin, threshold):
    mi, mj = problem.grid.interior_shape
    flat = np.flatnonzero(margin < threshold)
    return [(int(k // mj) + 1, int(k % mj) + 1) for k in flat]


def _require_admissible(state, problem, safeguard):
    if np.any(state.margin < safeguard):
        nodes = _offending_nodes(problem, state.margin, safeguard)
        raise InadmissibleIterate(
            f"{len(nodes)} node(s) below phase margin {safeguard:g}; "
            f"min margin {float(np.min(state.margin)):.3e}",
            nodes,
        )


def residual_field(u, problem: Problem, t, params: OperatorParams, safeguard=1e-8) -> GridField:
    state = evaluate(u, problem, t, params)
    _require_admissible(state, problem, safeguard)
    out = np.zeros(problem.grid.shape)
    out[1:-1, 1:-1] = state.residual.reshape(problem.grid.interior_shape)
    return GridField(problem.grid, out)


def monitors(u, problem: Problem, params: OperatorParams, t=1.0, state=None) -> MonitorRecord:
    """Estimate-style monitors over interior nodes (row-major reductions).

    ``sup_hess`` is the largest matrix infinity-norm of the stencil Hessian.
    The phase margin, sum of g_i and subsolution gap are taken at the
    t-scaled geometry the solver actually uses.
    """
    if state is None:
        state = evaluate(u, problem, t, params)
    hess = state.geom.hess
    sup_grad = float(np.max(np.linalg.norm(state.grad, axis=-1)))
    sup_hess = float(np.max(np.sum(np.abs(hess), axis=-1)))
    sum_g = np.sum(eigen_derivatives(state.geom.kappa, params), axis=-1)
    gap = None
    if problem.subsolution is not None:
        sub_hess = interior_hessians(problem.subsolution, problem.grid).reshape(-1, 2, 2)
        lin = linearized_coeffs(state.geom, params, check=False)
        gap = float(np.min(np.sum(lin.g_tilde_second * (sub_hess - hess), axis=(-2, -1))))
    return MonitorRecord(
        sup_grad=sup_grad,
        sup_hess=sup_hess,
        min_phase_margin=float(np.min(state.margin)),
        min_sum_g=float(np.min(sum_g)),
        subsol_gap=gap,
        residual_inf=state.scaled_residual_inf,
    )


def assemble_newton_system(state: NodeState, problem: Problem, t, params: OperatorParams):
    """Jacobian of the discrete residual, rows scaled by 1/|psi|.

    Row scaling does not change the Newton update; it equilibrates rows whose
    psi values differ by exp(A * (h_max - h_min)).
    """
    grid = problem.grid
    mi, mj = grid.interior_shape
    lin = linearized_coeffs(state.geom, params)
    scale = 1.0 / np.abs(state.psi)
    second = lin.g_tilde_second * scale[:, None, None]
    first = t * lin.g_tilde_first * scale[:, None]
    cxx = second[:, 0, 0] / grid.hx**2
    cyy = second[:, 1, 1] / grid.hy**2
    cxy = 2.0 * second[:, 0, 1] / (4.0 * grid.hx * grid.hy)
    bx = first[:, 0] / (2.0 * grid.hx)
    by = first[:, 1] / (2.0 * grid.hy)

    stencil = [
        (0, 0, -2.0 * cxx - 2.0 * cyy),
        (1, 0, cxx + bx),
        (-1, 0, cxx - bx),
        (0, 1, cyy + by),
        (0, -1, cyy - by),
        (1, 1, cxy),
        (-1, -1, cxy),
        (1, -1, -cxy),
        (-1, 1, -cxy),
    ]
    I, J = np.meshgrid(np.arange(mi), np.arange(mj), indexing="ij")
    I, J = I.ravel(), J.ravel()
    rows, cols, vals = [], [], []
    for di, dj, coef in stencil:
        ti, tj = I + di, J + dj
        ok = (ti >= 0) & (ti < mi) & (tj >= 0) & (tj < mj)
        rows.append((I * mj + J)[ok])
        cols.append((ti * mj + tj)[ok])
        vals.append(coef[ok])
    mat = scipy.sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mi * mj, mi * mj),
    )
    return SparseSystem(mat, -state.residual * scale)


def newton_step(u: GridField, problem: Problem, t, config: SolverConfig, params: OperatorParams,
                state=None):
    if state is None:
        state = evaluate(u, problem, t, params)
    _require_admissible(state, problem, config.safeguard_margin)
    system = assemble_newton_system(state, problem, t, params)
    du = sparse_solve(system).reshape(problem.grid.interior_shape)

    r0 = state.scaled_residual_inf
    alpha = 1.0
    backtracks = 0
    while alpha >= config.min_step:
        trial = u.values.copy()
        trial[1:-1, 1:-1] += alpha * du
        trial_state = evaluate(trial, problem, t, params)
        if np.all(trial_state.margin >= config.safeguard_margin):
            r1 = trial_state.scaled_residual_inf
            if r1 <= (1.0 - config.armijo_slope * alpha) * r0:
                step = StepReport(alpha, backtracks, r0, r1, float(np.max(np.abs(alpha * du))))
                return GridField(problem.grid, trial), step, trial_state
        alpha *= config.armijo_factor
        backtracks += 1
    raise LineSearchFailed(
        f"no acceptable step at t={t:g} after {backtracks} backtracks (residual {r0:.3e})"
    )


def solve_fixed_t(u0: GridField, problem: Problem, t, config: SolverConfig, params: OperatorParams):
    """Newton iteration at fixed t. Returns ``(u, iterations, history)``."""
    u = u0
    state = evaluate(u, problem, t, params)
    _require_admissible(state, problem, config.safeguard_margin)
    history = [monitors(u, problem, params, t, state)]
    best = (history[-1].residual_inf, u)
    for it in range(config.max_newton + 1):
        if history[-1].residual_inf <= config.tol_residual:
            return u, it, history
        if it == config.max_newton:
            break
        try:
            u, step, state = newton_step(u, problem, t, config, params, state)
        except (LineSearchFailed, SolveFailed) as exc:
            exc.best = best[1]
            exc.history = history
            raise
        history.append(monitors(u, problem, params, t, state))
        log.debug("t=%.4f it=%d alpha=%g residual=%.3e", t, it + 1, step.alpha, step.residual_after)
        if history[-1].residual_inf < best[0]:
            best = (history[-1].residual_inf, u)
    raise NotConverged(
        f"t={t:g}: residual {history[-1].residual_inf:.3e} after {config.max_newton} iterations",
        best=best[1],
        history=history,
    )


def _bump(grid: Grid2D):
    """(|x - x0|^2 - R^2) / 2 about the box centre, R the half-diagonal."""
    X, Y = grid.mesh()
    x0 = 0.5 * (grid.xmin + grid.xmax)
    y0 = 0.5 * (grid.ymin + grid.ymax)
    r2 = (0.5 * (grid.xmax - grid.xmin)) ** 2 + (0.5 * (grid.ymax - grid.ymin)) ** 2
    return 0.5 * ((X - x0) ** 2 + (Y - y0) ** 2 - r2)


def initial_guess(problem: Problem, params: OperatorParams, config: SolverConfig, max_scan=10000):
    """Admissible t = 0 starting field with the problem's boundary data.

    u0 = ubar + beta (q - qbar), where ubar and qbar are the discrete harmonic
    extensions of phi and of the trace of the bump q. The correction q - qbar
    vanishes on the boundary, so u0 carries phi exactly. beta is scanned over
    tan(sigma/n) + 0.1 k until every node is admissible at t = 0.
    Returns ``(u0, beta)``.
    """
    grid = problem.grid
    ubar = laplace_dirichlet(problem.phi, grid).values
    q = _bump(grid)
    correction = q - laplace_dirichlet(q, grid).values
    base = np.tan(params.sigma / params.n)
    for k in range(max_scan):
        beta = base + 0.1 * k
        u0 = ubar + beta * correction
        state = evaluate(u0, problem, 0.0, params)
        if np.all(state.margin >= config.safeguard_margin):
            return GridField(grid, u0), beta
    raise HomotopyStalled(f"no admissible starting field for beta up to {base + 0.1 * max_scan:g}")


_RECOVERABLE = (NotConverged, LineSearchFailed, InadmissibleIterate, SolveFailed)


def continuity_solve(problem: Problem, config: SolverConfig, params: OperatorParams, u0=None):
    """Continuation in t from 0 to 1, warm-starting each stage.

    Returns ``(u, SolveReport)``; raises :class:`HomotopyStalled` with the
    partial report attached when the t increment falls below its floor.
    """
    problem.validate(params)
    report = SolveReport()
    if u0 is None:
        u0, report.initial_beta = initial_guess(problem, params, config)

    try:
        u, its, hist = solve_fixed_t(u0, problem, 0.0, config, params)
    except _RECOVERABLE as exc:
        report.failure_reason = f"t=0 stage failed: {exc}"
        raise HomotopyStalled(report.failure_reason, report, u0) from exc
    report.per_t.append(StageRecord(0.0, its, hist[-1].residual_inf, hist))

    t = 0.0
    dt = config.t_step
    while t < 1.0:
        t_next = min(1.0, t + dt)
        try:
            u_next, its, hist = solve_fixed_t(u, problem, t_next, config, params)
        except _RECOVERABLE as exc:
            report.rejected.append((t_next, f"{type(exc).__name__}: {exc}"))
            dt *= config.t_shrink
            if dt < config.t_min_step:
                report.failure_reason = (
                    f"homotopy increment fell below {config.t_min_step:g} at t={t:g}"
                )
                raise HomotopyStalled(report.failure_reason, report, u) from exc
            continue
        t, u = t_next, u_next
        report.per_t.append(StageRecord(t, its, hist[-1].residual_inf, hist))
    report.accepted = True
    return u, report
