"""Robust-stochastic sizing of household PV and battery storage.

The package couples a scenario-based treatment of PV generation with a
budget-constrained worst-case treatment of demand, and solves the
resulting nested design problem by column-and-constraint generation.
"""

from .ccg_engine import CcgConfig, CcgTrace, run_ccg, run_ccg_bruteforce, solve_extensive_stochastic
from .deterministic_planner import (
    DispatchPlan,
    FirstStageDecision,
    solve_deterministic,
    solve_self_consumption,
)
from .domain_model import (
    BatteryTech,
    DemandUncertainty,
    InstanceError,
    PlanningInstance,
    PvScenarioSet,
    SystemConfig,
    Tariff,
    TimeGrid,
    load_instance,
    save_instance,
    validate,
    with_budget,
    with_scenarios,
    with_years,
)
from .robust_subproblem import (
    DualSolution,
    FixedFirstStage,
    WorstCaseDemand,
    enumerate_worst_case,
    solve_dual_sp,
    solve_primal_sp,
)
from .scenario_forge import (
    ArmaSpec,
    DemandForecast,
    extract_demand_intervals,
    fit_growth_rate,
    ingest_degradation,
    project_demand,
    sample_pv_scenarios,
)

__version__ = "0.1.0"

__all__ = [
    "ArmaSpec",
    "BatteryTech",
    "CcgConfig",
    "CcgTrace",
    "DemandForecast",
    "DemandUncertainty",
    "DispatchPlan",
    "DualSolution",
    "FirstStageDecision",
    "FixedFirstStage",
    "InstanceError",
    "PlanningInstance",
    "PvScenarioSet",
    "SystemConfig",
    "Tariff",
    "TimeGrid",
    "WorstCaseDemand",
    "enumerate_worst_case",
    "extract_demand_intervals",
    "fit_growth_rate",
    "ingest_degradation",
    "load_instance",
    "project_demand",
    "run_ccg",
    "run_ccg_bruteforce",
    "sample_pv_scenarios",
    "save_instance",
    "solve_deterministic",
    "solve_dual_sp",
    "solve_extensive_stochastic",
    "solve_primal_sp",
    "solve_self_consumption",
    "validate",
    "with_budget",
    "with_scenarios",
    "with_years",
]
