"""Finite-alphabet laboratory for compositional generation and decomposition.

Component laws, composition rules and decomposition maps live on small
finite symbol spaces, so every adversarial loss is an exact transport
problem and every identifiability question is a rank computation.
"""

__version__ = "0.1.0"

from .compose import (  # noqa: E402
    CompositionSpec,
    DecompositionMap,
    Scenario,
    Solution,
    StochasticComposition,
    check_bijective,
    composed_law,
    cycle_losses,
    invert_composition,
    make_scenario,
)
from .finitedist import (  # noqa: E402
    CostMatrix,
    FiniteDistribution,
    SymbolSpace,
    ground_metric,
    new_distribution,
    pushforward,
    tv_distance,
)
from .identify import (  # noqa: E402
    phase_flip_counterexample,
    recover_component_closed_form,
    resolving_matrix,
    trivial_solution_counterexample,
    verify_lemma_bijective_rank,
    verify_theorem1,
    verify_theorem2,
)
from .tasks import TaskConfig, chain_learn, run_task, solve_task, total_loss  # noqa: E402
from .transport import loss_terms, wasserstein_exact, wasserstein_sinkhorn  # noqa: E402

__all__ = [
    "chain_learn",
    "check_bijective",
    "composed_law",
    "CompositionSpec",
    "CostMatrix",
    "cycle_losses",
    "DecompositionMap",
    "FiniteDistribution",
    "ground_metric",
    "invert_composition",
    "loss_terms",
    "make_scenario",
    "new_distribution",
    "phase_flip_counterexample",
    "pushforward",
    "recover_component_closed_form",
    "resolving_matrix",
    "run_task",
    "Scenario",
    "Solution",
    "solve_task",
    "StochasticComposition",
    "SymbolSpace",
    "TaskConfig",
    "total_loss",
    "trivial_solution_counterexample",
    "tv_distance",
    "verify_lemma_bijective_rank",
    "verify_theorem1",
    "verify_theorem2",
    "wasserstein_exact",
    "wasserstein_sinkhorn",
]
