"""Finite-difference solver and verification harness for the prescribed
Lagrangian phase (special Lagrangian curvature) equation on planar boxes."""
from __future__ import annotations

from .errors import SlcurvError
from .geometry import OperatorParams, assemble_point, concave_G, phase_F
from .grid import Grid2D, GridField
from .solver import Problem, SolverConfig, continuity_solve

__all__ = [
    "Grid2D",
    "GridField",
    "OperatorParams",
    "Problem",
    "SlcurvError",
    "SolverConfig",
    "assemble_point",
    "concave_G",
    "continuity_solve",
    "phase_F",
]
__version__ = "0.1.0"
