"""Electric dial-a-ride fleet simulation with charging policies and
surrogate-assisted fast-charger placement."""
from __future__ import annotations

__version__ = "0.1.0"

from .assignment import (
    AssignmentInstance,
    AssignmentSolution,
    ChargerSpec,
    VehicleSpec,
    brute_force,
    build_arc_costs,
    solve_exact,
    solve_lagrangian,
)
from .model import (
    Charger,
    ChargerLayout,
    DemandProfile,
    FleetParams,
    Request,
    Scenario,
    ScenarioError,
    Site,
    ValidationError,
    travel,
    validate_layout,
)
from .optimizer import KMeansPlacement, SurrogateOptimizer, enumerate_layouts, kmeans_layout, so_optimize
from .policies import Policy
from .reporting import EmissionsInput, annual_co2_savings, compare_policies, generation_emissions
from .simulator import DemandSpec, MetricsReport, objective, run_simulation
from .surrogate import RBFSurrogate, fit_rbf, merit_select

__all__ = [
    "AssignmentInstance", "AssignmentSolution", "Charger", "ChargerLayout", "ChargerSpec", "DemandProfile",
    "DemandSpec", "EmissionsInput", "FleetParams", "KMeansPlacement", "MetricsReport", "Policy", "RBFSurrogate",
    "Request", "Scenario", "ScenarioError", "Site", "SurrogateOptimizer", "ValidationError", "VehicleSpec",
    "annual_co2_savings", "brute_force", "build_arc_costs", "compare_policies", "enumerate_layouts",
    "fit_rbf", "generation_emissions", "kmeans_layout", "merit_select", "objective", "run_simulation",
    "so_optimize", "solve_exact", "solve_lagrangian", "travel", "validate_layout",
]
