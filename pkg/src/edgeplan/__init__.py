"""Robust edge service placement and sizing toolkit."""

from .aro import (
    CcgResult,
    CcgTrace,
    SubproblemSolution,
    ccg_solve,
    extensive_form,
    initial_scenario,
    solve_subproblem,
)
from .deterministic import build_deterministic, solve_deterministic
from .errors import (
    ConfigurationError,
    EdgeplanError,
    ModelInfeasibleError,
    ParseError,
    RobustInfeasibleError,
    UnsupportedEnumerationError,
)
from .evaluation import ComparisonReport, evaluate_methods, operation_stage
from .formulation import Allocation, FirstStagePlan
from .instance import (
    DemandScenario,
    GeneratorParams,
    Instance,
    UncertaintySet,
    enumerate_extreme_points,
    generate_instance,
    load_instance,
    sample_scenario,
    sample_scenarios,
    save_instance,
)
from .solver import MilpModel, MilpSolution, LpSolution, solve_lp, solve_milp
from .static_ro import build_static_ro, solve_static_ro
from .stochastic import ScenarioSet, solve_stochastic, training_scenarios

__version__ = "0.1.0"
