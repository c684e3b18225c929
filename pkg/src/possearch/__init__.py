"""Optimal control of positive linear systems with linear costs."""
from .bellman import (
    SolveResult,
    bellman_apply,
    brute_force_solve,
    evaluate_policy,
    extract_policy,
    value_iterate,
)
from .errors import (
    BetaUndefined,
    DivergentMass,
    MissingInitialPolicy,
    NoConvergence,
    NotSubstochastic,
    PossearchError,
    UnstablePolicy,
)
from .gen import GenConfig, add_fictitious_actions, chemical_plant, routing_example, overloaded_example, random_instance
from .heuristics import HeuristicPair, improve, init_heuristics, rate_bound
from .model import IDLE, Policy, ProblemInstance, load_problem, make_instance, save_problem, validate
from .search import SearchState, run_search
from .ssp import SspInstance, expand_skeleton, from_ssp, solve_ssp, to_ssp

__version__ = "0.1.0"
