"""Risk-averse Bayes-adaptive Monte Carlo planning over a finite set of models."""
from ._backend import BACKEND
from .driver import GameState, MixedPolicy, SearchResult, evaluate_policy, game_value, search
from .envelope import RiskEnvelope, adversary_best_response, risk_value
from .environments import build_bandit, build_patient
from .errors import (ConfigError, EnumerationLimitError, EnvelopeError, InfeasibleError,
                     PolicyUndefinedError, ProblemError, RamcpError, WeightError)
from .problem import BamdpProblem, Trajectory, load_problem, trajectory_reward
from .tree import SearchTree, avg_action, compute_q_values, simulate

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BamdpProblem", "ConfigError", "EnumerationLimitError", "EnvelopeError",
    "GameState", "InfeasibleError", "MixedPolicy", "PolicyUndefinedError", "ProblemError",
    "RamcpError", "RiskEnvelope", "SearchResult", "SearchTree", "Trajectory", "WeightError",
    "adversary_best_response", "avg_action", "build_bandit", "build_patient", "compute_q_values",
    "evaluate_policy", "game_value", "load_problem", "risk_value", "search", "simulate",
    "trajectory_reward",
]
