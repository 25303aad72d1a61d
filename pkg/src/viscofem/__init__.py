"""Finite-element solvers for the viscoelastic scalar wave equation with Prony-series memory."""
from .mesh import Mesh, classify_boundary, unit_square_mesh
from .fespace import FunctionSpace, build_space, evaluate, quadrature
from .stepper import (REFERENCE_MATERIAL, MaterialModel, ProblemData, Simulation,
                      SolverState, TimeGrid)
from .mms import ErrorTriple, ManufacturedSolution, convergence_rate, error_norms

__all__ = [
    "Mesh", "unit_square_mesh", "classify_boundary",
    "FunctionSpace", "build_space", "evaluate", "quadrature",
    "MaterialModel", "REFERENCE_MATERIAL", "ProblemData", "Simulation", "SolverState", "TimeGrid",
    "ErrorTriple", "ManufacturedSolution", "convergence_rate", "error_norms",
]
