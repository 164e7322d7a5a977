"""Stochastic planning of distributed generation on unbalanced feeders.

Learns a separable piecewise linear approximation of the expected
dispatch cost from sampled dual information, plans unit placement
against it, and checks the result with statistical bounds or an exact
deterministic-equivalent solve at small scale.
"""

from .bounds import BoundsReport, estimate_bounds, lower_bound, upper_bound
from .engine import EngineConfig, RunResult, run_spar, write_trace_csv
from .gridmodel import (DGParams, Network, NetworkError, RecourseSolver,
                        SecondStageOutcome, build_second_stage, load_network,
                        solve_second_stage)
from .master import (FeasibilityCut, MasterInfeasibleError, MasterSolution,
                     PlanningParams, build_epigraph_master,
                     build_lambda_master, solve_master)
from .mpif import (BackendError, Constraint, ModelError, ModelSpec,
                   ScipyBackend, Variable, compile_model)
from .oracle import (OracleSizeError, enumerate_grid, solve_extensive_form,
                     true_expected_value)
from .pwl import (BreakpointDomainError, CoordinateFunction,
                  CoordinateFunctionSet, project_isotone)
from .scenarios import (History, HistoryFormatError, Scenario, ScenarioSet,
                        generate_scenarios, load_history)

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BoundsReport",
    "BreakpointDomainError",
    "Constraint",
    "CoordinateFunction",
    "CoordinateFunctionSet",
    "DGParams",
    "EngineConfig",
    "FeasibilityCut",
    "History",
    "HistoryFormatError",
    "MasterInfeasibleError",
    "MasterSolution",
    "ModelError",
    "ModelSpec",
    "Network",
    "NetworkError",
    "OracleSizeError",
    "PlanningParams",
    "RecourseSolver",
    "RunResult",
    "Scenario",
    "ScenarioSet",
    "SecondStageOutcome",
    "ScipyBackend",
    "Variable",
    "build_epigraph_master",
    "build_lambda_master",
    "build_second_stage",
    "compile_model",
    "enumerate_grid",
    "estimate_bounds",
    "generate_scenarios",
    "load_history",
    "load_network",
    "lower_bound",
    "project_isotone",
    "run_spar",
    "solve_extensive_form",
    "solve_master",
    "solve_second_stage",
    "true_expected_value",
    "upper_bound",
    "write_trace_csv",
]
