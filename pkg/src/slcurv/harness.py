"""Oracles and verification suites.

Manufactured problems compute h from closed-form curvatures of surfaces of
revolution, a path independent of the curvature-matrix pipeline in
:mod:`slcurv.geometry`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cone
from .errors import MarginTooSmall, SolveFailed, ValidationError
from .geometry import OperatorParams, assemble_point, phase_F
from .grid import Grid2D, GridField, laplace_dirichlet
from .solver import Problem, SolverConfig, continuity_solve

MIN_DELTA_USED = 0.05


@dataclass
class ManufacturedProblem:
    u_star: GridField
    h_field: GridField
    phi: np.ndarray
    delta_used: float
    family: str = "radial"

    def to_problem(self, delta=None, with_subsolution=False):
        """Solver problem; ``delta`` defaults to half of ``delta_used``."""
        grid = self.u_star.grid
        return Problem(
            grid=grid,
            h=self.h_field.values,
            phi=self.phi,
            delta=self.delta_used / 2 if delta is None else delta,
            subsolution=self.u_star.values if with_subsolution else None,
        )


def _finish(grid, u_star, h, family):
    delta_used = float(np.min(h))  # (n-2) pi/2 = 0 for n = 2
    if not delta_used > MIN_DELTA_USED:
        raise MarginTooSmall(f"manufactured h has margin {delta_used:.4f} <= {MIN_DELTA_USED}")
    phi = np.zeros(grid.shape)
    mask = grid.boundary_mask()
    phi[mask] = u_star[mask]
    return ManufacturedProblem(GridField(grid, u_star), GridField(grid, h), phi, delta_used, family)


def radial_curvatures(r, c):
    """Principal curvatures of u = c r^2 / 2 as a graph over the plane.

    kappa_rad = u_rr / (1 + u_r^2)^(3/2), kappa_tan = u_r / (r (1 + u_r^2)^(1/2)),
    with kappa_tan -> c as r -> 0.
    """
    r = np.asarray(r, dtype=float)
    ur = c * r
    k_rad = c / (1.0 + ur**2) ** 1.5
    safe_r = np.where(r > 0.0, r, 1.0)
    k_tan = np.where(r > 0.0, ur / (safe_r * np.sqrt(1.0 + ur**2)), c)
    return k_rad, k_tan


def manufactured_radial(grid: Grid2D, c) -> ManufacturedProblem:
    if not c > 0:
        raise ValidationError("c must be positive")
    X, Y = grid.mesh()
    u_star = c * (X**2 + Y**2) / 2
    k_rad, k_tan = radial_curvatures(np.hypot(X, Y), c)
    h = np.arctan(k_rad) + np.arctan(k_tan)
    return _finish(grid, u_star, h, "radial")


def manufactured_sphere(grid: Grid2D, radius) -> ManufacturedProblem:
    """Lower spherical cap u = -sqrt(R^2 - |x|^2); both curvatures equal 1/R.

    Not a polynomial, so central differences carry a genuine O(h^2) error.
    """
    X, Y = grid.mesh()
    r2 = X**2 + Y**2
    if not radius**2 > np.max(r2):
        raise ValidationError("sphere radius must exceed the half-diagonal of the box")
    u_star = -np.sqrt(radius**2 - r2)
    h = np.full(grid.shape, 2.0 * np.arctan(1.0 / radius))
    return _finish(grid, u_star, h, "sphere")


def manufactured(grid, family="radial", c=1.0, radius=2.0):
    if family == "radial":
        return manufactured_radial(grid, c)
    if family == "sphere":
        return manufactured_sphere(grid, radius)
    raise ValidationError(f"unknown manufactured family {family!r}")


def pipeline_h(u_func_derivs):
    """h through the curvature-matrix pipeline, given exact (grad, hess) arrays."""
    grad, hess = u_func_derivs
    return phase_F(assemble_point(grad, hess).kappa)


def radial_exact_derivatives(grid, c):
    X, Y = grid.mesh()
    grad = np.stack([c * X, c * Y], axis=-1)
    hess = np.broadcast_to(c * np.eye(2), grid.shape + (2, 2)).copy()
    return grad, hess


def sphere_exact_derivatives(grid, radius):
    X, Y = grid.mesh()
    s = np.sqrt(radius**2 - X**2 - Y**2)
    grad = np.stack([X / s, Y / s], axis=-1)
    hess = np.empty(grid.shape + (2, 2))
    hess[..., 0, 0] = 1 / s + X**2 / s**3
    hess[..., 1, 1] = 1 / s + Y**2 / s**3
    hess[..., 0, 1] = hess[..., 1, 0] = X * Y / s**3
    return grad, hess


def harmonic_extension(phi, grid: Grid2D) -> GridField:
    """Discrete harmonic function with boundary values phi; checks the max principle."""
    phi = np.asarray(phi, dtype=float)
    ubar = laplace_dirichlet(phi, grid)
    bvals = phi[grid.boundary_mask()]
    lo, hi = bvals.min(), bvals.max()
    slack = 1e-10 * max(1.0, abs(lo), abs(hi))
    inner = ubar.interior
    if inner.min() < lo - slack or inner.max() > hi + slack:
        raise SolveFailed("discrete maximum principle violated by the Laplace solve")
    return ubar


@dataclass
class ConvergenceRow:
    nodes: int
    h: float
    max_error: float
    order: float | None  # against the previous (coarser) row


@dataclass
class ConvergenceStudy:
    family: str
    rows: list = field(default_factory=list)
    solutions: list = field(default_factory=list)  # (ManufacturedProblem, u, report)

    @property
    def orders(self):
        return [r.order for r in self.rows[1:]]


def convergence_study(c, grid_sizes, config: SolverConfig, a_param, family="radial", radius=2.0,
                      delta=None):
    """Solve the manufactured problem on each grid and record observed orders.

    ``a_param`` is the concavity exponent used for every run.
    """
    sizes = list(grid_sizes)
    if len(sizes) < 3 or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValidationError("grid sizes must be strictly increasing with at least 3 entries")
    study = ConvergenceStudy(family)
    prev = None
    for nodes in sizes:
        grid = Grid2D.square(nodes)
        mp = manufactured(grid, family, c=c, radius=radius)
        problem = mp.to_problem(delta=delta, with_subsolution=True)
        params = OperatorParams(2, problem.delta, a_param)
        u, report = continuity_solve(problem, config, params)
        err = float(np.max(np.abs(u.values - mp.u_star.values)))
        order = None if prev is None else float(np.log(prev / err) / np.log(2.0))
        study.rows.append(ConvergenceRow(nodes, grid.hx, err, order))
        study.solutions.append((mp, u, report))
        prev = err
    return study


@dataclass
class SuiteCase:
    n: int
    delta: float
    samples: int
    violations: list  # per property (i)..(iv)
    convexity_violations: int
    calibration: cone.CalibrationResult | None
    extremes: dict

    @property
    def passed(self):
        return sum(self.violations) == 0 and self.convexity_violations == 0


def lemma_suites(n, deltas, samples_per_case, seed, calibration_samples=1000, convexity_pairs=None):
    """Structural-property mass test, convexity probe, A calibration, inequality extremes."""
    if samples_per_case < 1000:
        raise ValidationError("samples_per_case must be >= 1000")
    cases = []
    for k, delta in enumerate(deltas):
        if not 0.0 < delta < np.pi / 2:
            raise ValidationError(f"delta={delta!r} must lie in (0, pi/2)")
        case_seed = [seed, n, k]
        kappa = cone.sample_admissible(n, delta, samples_per_case, case_seed)
        viol = cone.cone_property_violations(kappa, delta)[:, :4]
        counts = [int(np.count_nonzero(viol[:, j] > cone.PROPERTY_TOL)) for j in range(4)]

        pairs = convexity_pairs or min(samples_per_case, 10_000)
        rng = np.random.default_rng(case_seed + [1])
        a_idx = rng.integers(0, len(kappa), pairs)
        b_idx = rng.integers(0, len(kappa), pairs)
        conv = cone.convexity_violations(kappa[a_idx], kappa[b_idx], delta)
        conv_count = int(np.count_nonzero(conv > cone.PROPERTY_TOL))

        calib = cone.calibrate_A(n, delta, calibration_samples, seed)
        extremes = cone.inequality_probes(kappa, calib.a_param)
        extremes["max_convexity_violation"] = float(np.max(conv))
        extremes["max_property_violation"] = float(np.max(viol))
        cases.append(SuiteCase(n, delta, len(kappa), counts, conv_count, calib, extremes))
    return cases
