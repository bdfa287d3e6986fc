"""Metalevel MDPs, value-of-information features, and learned
computation-selection policies, with exact solvers and a benchmark harness."""

from .core import (
    TERMINATE,
    Belief,
    EpisodeTrace,
    EvalReport,
    MetaAction,
    compute,
    enumerate_successors,
    evaluate_policy,
    relevance,
    run_episode,
    sample_transition,
    termination_utility,
)
from .domains import (
    BanditBelief,
    BanditDomain,
    StoppingBelief,
    StoppingDomain,
    TornadoBelief,
    TornadoDomain,
    TornadoTimingModel,
    TreeBelief,
    TreeDomain,
    make_domain,
    tornado_budget,
)
from .features import FeatureConfig, FeatureVector, feature_matrix, features, voi1, vpi, vpi_sub
from .optimize import Candidate, SearchSpec, optimize_weights, paper_search_spec, rescore_top_candidates
from .policies import WeightVector, make_policy
from .exact import ExactSolver, exact_voc, fit_voc_regression, solve

__version__ = "0.1.0"
