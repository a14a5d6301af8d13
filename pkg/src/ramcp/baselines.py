"""Comparison planners: exponential-utility search and state-keyed (non-adaptive) search."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .driver import SearchResult, search
from .envelope import RiskEnvelope
from .problem import BamdpProblem


def exponential_utility_search(problem: BamdpProblem, gamma: float, mode: str = "F",
                               budget: int = 10_000, rng: Optional[np.random.Generator] = None,
                               backend: Optional[str] = None) -> SearchResult:
    """Risk-neutral search on the utility ``-exp(-gamma * J)`` of the path return ``J``.

    The adversary is powerless (expectation envelope); only the leaf values
    change. Per-model estimates in the result are on the utility scale, while
    policy evaluation still reports raw returns.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    env = RiskEnvelope.expectation(problem.prior)
    return search(problem, env, mode, budget, rng, backend=backend, gamma=float(gamma))


def rmcp_search(problem: BamdpProblem, envelope: RiskEnvelope, budget: int = 10_000,
                rng: Optional[np.random.Generator] = None, mode: str = "F",
                backend: Optional[str] = None) -> SearchResult:
    """Same game, but the tree merges all histories reaching a state at a given depth."""
    return search(problem, envelope, mode, budget, rng, backend=backend, keying="state_depth")
