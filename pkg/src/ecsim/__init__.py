"""Event-chain timing toolkit.

Models event chains with timing constraints, validates black-box to white-box
refinements and their budgets, and verifies regulatory timing requirements by
Monte Carlo simulation, trace evaluation, and analytic budget summation.
"""

from .chain import (
    ConstraintKind,
    Direction,
    EventChainModel,
    EventChainStep,
    Finding,
    TimingConstraint,
    Viewpoint,
    constraint_slack,
    load_model_file,
    topological_order,
    validate_model,
)
from .dynamics import (
    BrakeParams,
    EgoState,
    SensorParams,
    deceleration_profile,
    detection_probability,
    should_brake,
    should_warn,
    stopping_distance,
    stopping_time,
    ttr,
)
from .traceability import (
    BudgetSegment,
    RefinementMap,
    RequirementNode,
    Stage,
    check_budgeting,
    check_refinement,
    compare_budget_alternatives,
    load_traceability_file,
    validate_trace_chain,
)
from .sim import (
    LatencySpec,
    RunRecord,
    SimScenario,
    load_scenario_file,
    run_monte_carlo,
    simulate_run,
    sweep,
)
from .analysis import (
    EvaluationResult,
    EvaluationStatus,
    EventTrace,
    analytic_end_to_end,
    evaluate_periodicity,
    evaluate_trace,
    read_trace_csv,
    summarize,
    summarize_batch,
    write_trace_csv,
)

__version__ = "0.1.0"
