"""Periodic homogenization of the G-equation ``u_t + |Du| + Du . V(x/eps) = 0``
when the flow ``V`` may exceed unit speed."""

from .dynamics import (build_reachability_graph, detect_invariant_sets, integrate_trajectory,
                       boundary_normal_check)
from .effective import (WulffSet, corrector_field, effective_hamiltonian, effective_k_cycles,
                        effective_k_pde, wulff_set)
from .fields import AssumptionReport, VectorField, check_assumptions
from .geometry import control_gauge, support_sigma, support_sigma_truncated
from .hj import InitialData, SolverConfig, homogenization_experiment, solve_homogenized, solve_oscillatory
from .metric import EdgeWeighting, LevelFamily, bellman_ford, build_weights, shortest_path_field
from .torus import GridFunction, TorusGrid

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport", "EdgeWeighting", "GridFunction", "InitialData", "LevelFamily",
    "SolverConfig", "TorusGrid", "VectorField", "WulffSet", "bellman_ford",
    "boundary_normal_check", "build_reachability_graph", "build_weights", "check_assumptions",
    "control_gauge", "corrector_field", "detect_invariant_sets", "effective_hamiltonian",
    "effective_k_cycles", "effective_k_pde", "homogenization_experiment", "integrate_trajectory",
    "shortest_path_field", "solve_homogenized", "solve_oscillatory", "support_sigma",
    "support_sigma_truncated", "wulff_set",
]
