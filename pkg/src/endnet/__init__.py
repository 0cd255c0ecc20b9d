"""Estimate-exchange network design and distributed equilibrium seeking."""

from .design import (
    DesignCriterion,
    DesignInfeasible,
    SteinerInstance,
    design_layout,
    try_minimal_layout,
)
from .games import (
    AggregativeGameSpec,
    BallSet,
    BoxSet,
    GameError,
    GameSpec,
    HalfspaceSet,
    RealsSet,
    build_gne_operators,
    certify_theorem1,
    gne_solve,
    kkt_residual,
    ne_solve,
    search_gne_beta,
    search_ne_step_size,
    solve_vgne_centralized,
)
from .graphs import (
    Graph,
    GraphError,
    GraphSequence,
    WeightedGraph,
    column_stochastic_weights,
    is_connected_undirected,
    is_q_strongly_connected,
    is_rooted,
    is_strongly_connected,
    laplacian,
    metropolis_hastings_weights,
    restrict,
    row_stochastic_weights,
)
from .layout import (
    ConnectivityMode,
    EndLayout,
    LayoutError,
    Partition,
    StackedVector,
    reweight,
    standard_layout,
    weighted,
)
from .optim import (
    AbcMatrices,
    ConstraintCoupledProblem,
    LassoSeparable,
    OptimError,
    QuadraticSeparable,
    SeparableProblem,
    abc_check,
    abc_solve,
    admm_solve,
    augdgm_matrices,
    augdgm_solve,
    constraint_coupled_solve,
    example_design_schedule,
    merit_v,
    power_step_schedule,
    pushsum_solve,
)
from .scenarios import (
    ScenarioError,
    SensorScenario,
    UnicastScenario,
    build_lasso,
    build_random_quadratic_game,
    build_random_separable,
    build_regression,
    build_unicast,
    reference_scheme_unicast,
    sample_unicast,
)
from .trace import DivergenceError, RunTrace

__all__ = [
    "AbcMatrices",
    "AggregativeGameSpec",
    "BallSet",
    "BoxSet",
    "ConnectivityMode",
    "ConstraintCoupledProblem",
    "DesignCriterion",
    "DesignInfeasible",
    "DivergenceError",
    "EndLayout",
    "GameError",
    "GameSpec",
    "Graph",
    "GraphError",
    "GraphSequence",
    "HalfspaceSet",
    "LassoSeparable",
    "LayoutError",
    "OptimError",
    "Partition",
    "QuadraticSeparable",
    "RealsSet",
    "RunTrace",
    "ScenarioError",
    "SensorScenario",
    "SeparableProblem",
    "StackedVector",
    "SteinerInstance",
    "UnicastScenario",
    "WeightedGraph",
    "abc_check",
    "abc_solve",
    "admm_solve",
    "augdgm_matrices",
    "augdgm_solve",
    "build_gne_operators",
    "build_lasso",
    "build_random_quadratic_game",
    "build_random_separable",
    "build_regression",
    "build_unicast",
    "certify_theorem1",
    "column_stochastic_weights",
    "constraint_coupled_solve",
    "design_layout",
    "example_design_schedule",
    "gne_solve",
    "is_connected_undirected",
    "is_q_strongly_connected",
    "is_rooted",
    "is_strongly_connected",
    "kkt_residual",
    "laplacian",
    "merit_v",
    "metropolis_hastings_weights",
    "ne_solve",
    "power_step_schedule",
    "pushsum_solve",
    "reference_scheme_unicast",
    "restrict",
    "reweight",
    "row_stochastic_weights",
    "sample_unicast",
    "search_gne_beta",
    "search_ne_step_size",
    "solve_vgne_centralized",
    "standard_layout",
    "try_minimal_layout",
    "weighted",
]

__version__ = "0.1.0"
