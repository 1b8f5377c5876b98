"""Flux-mortar mixed finite element domain decomposition for Darcy flow.

Subdomains carry independent rectangular grids with a two-point flux
discretization; the normal flux on the interfaces is a mortar unknown and
pressure continuity is imposed weakly. The global problem is reduced to a
symmetric positive definite interface problem solved by CG.
"""
from .darcy import LocalSystem, SolverError, SubdomainState, assemble_local, mass_defect, solve_neumann
from .extension import extend, extend_minimal, weak_flux_jump
from .geometry import (
    DecompositionConfig, DecompositionError, DomainDecomposition, build_decomposition, reference_config,
    refine, trace_partition,
)
from .mortar import (
    FLAT, SHARP, MortarConditionError, MortarFunction, check_mortar_condition, evaluate_mortar,
    mortar_spaces, project_flat, project_sharp,
)
from .solver import DDSolution, monolithic_solve, residual_audit, single_domain_solve, solve
from .verification import SMOOTH_CASE, ConvergenceReport, ManufacturedCase, StudyConfig, compute_errors, rates, run_study

__version__ = "0.1.0"

__all__ = [
    "LocalSystem", "SolverError", "SubdomainState", "assemble_local", "mass_defect", "solve_neumann",
    "extend", "extend_minimal", "weak_flux_jump",
    "DecompositionConfig", "DecompositionError", "DomainDecomposition", "build_decomposition",
    "reference_config", "refine", "trace_partition",
    "FLAT", "SHARP", "MortarConditionError", "MortarFunction", "check_mortar_condition",
    "evaluate_mortar", "mortar_spaces", "project_flat", "project_sharp",
    "DDSolution", "monolithic_solve", "residual_audit", "single_domain_solve", "solve",
    "SMOOTH_CASE", "ConvergenceReport", "ManufacturedCase", "StudyConfig", "compute_errors",
    "rates", "run_study",
]
