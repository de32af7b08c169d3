"""Stochastic retrosynthesis planning over AND/OR graphs.

The package provides the explicit search graph, stochastic feasibility and
buyability models, per-scenario success propagation, a greedy
fallback-aware planner with baseline searches configured for the same
objective, and a seeded benchmark harness.
"""

__version__ = "0.1.0"

from .graph import (  # noqa: F401
    AndOrGraph,
    MoleculeNode,
    ReactionNode,
    SynthesisPlan,
    enumerate_plans,
    new_graph,
    validate_plan,
)
from .heuristics import DifficultyHeuristic, Heuristic, OptimisticHeuristic  # noqa: F401
from .planner import (  # noqa: F401
    SearchResult,
    compute_psi,
    compute_rho,
    run_retro_fallback,
    sigma_bar_oracle,
)
from .reactions import (  # noqa: F401
    CachedModel,
    RuleBasedModel,
    SyntheticWorld,
    WorldConfig,
    fingerprint,
    reaction_fingerprints,
)
from .success import (  # noqa: F401
    estimate_ssp,
    exact_ssp_independent,
    node_success,
    plan_success,
    sat_gadget,
)
from .uncertainty import (  # noqa: F401
    IndependentBuyability,
    IndependentFeasibility,
    LatentGPFeasibility,
    ModelsConfig,
    ScenarioMatrix,
    build_models,
    constant_marginal,
    jaccard,
    rank_marginal,
    reaction_kernel,
    tier_marginal,
)
