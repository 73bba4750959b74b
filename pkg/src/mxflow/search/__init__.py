from .engine import (
    HARDWARE_AWARE,
    SOFTWARE_ONLY,
    Metrics,
    ObjectiveWeights,
    SearchConfig,
    SearchResult,
    Trial,
    best_score_curve,
    calibrate_weights,
    evaluate_config,
    evaluate_trial,
    graph_evaluator,
    objective,
    search,
    trial_log_csv,
)
from .samplers import (
    ALGORITHMS,
    NSGAConfig,
    TPEConfig,
    crowding_distance,
    dominates,
    non_dominated_sort,
    pareto_front,
)
from .space import FULL, REDUCED, Dimension, SearchSpace, SearchSpaceError, build_space, dynamic_range

__all__ = [
    "ALGORITHMS",
    "FULL",
    "HARDWARE_AWARE",
    "REDUCED",
    "SOFTWARE_ONLY",
    "Dimension",
    "Metrics",
    "NSGAConfig",
    "ObjectiveWeights",
    "SearchConfig",
    "SearchResult",
    "SearchSpace",
    "SearchSpaceError",
    "TPEConfig",
    "Trial",
    "best_score_curve",
    "build_space",
    "calibrate_weights",
    "crowding_distance",
    "dominates",
    "dynamic_range",
    "evaluate_config",
    "evaluate_trial",
    "graph_evaluator",
    "non_dominated_sort",
    "objective",
    "pareto_front",
    "search",
    "trial_log_csv",
]
