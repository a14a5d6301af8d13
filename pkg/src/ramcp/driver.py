"""Fictitious-play search loop alternating tree simulation and adversarial best responses."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from .envelope import RiskEnvelope, adversary_best_response
from .errors import PolicyUndefinedError, ProblemError, RamcpError
from .problem import BamdpProblem, History, mean_and_ci90
from .tree import SearchTree, compute_q_values

DENSE_TRACE_UNTIL = 1000
SPARSE_TRACE_EVERY = 10


@dataclass
class GameState:
    """Iterate of the game between the planner and the belief adversary.

    ``b_avg`` averages the best responses produced so far; ``b_weight_avg``
    averages the beliefs actually used to weight simulations (the prior at
    iteration 1, then each previous best response).
    """

    envelope: RiskEnvelope
    V_hat: np.ndarray
    b_adv: np.ndarray
    b_avg: np.ndarray
    b_weight_avg: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, envelope: RiskEnvelope) -> "GameState":
        M = envelope.size
        prior = envelope.base.copy()
        return cls(envelope, np.zeros(M), prior, np.zeros(M), np.zeros(M))

    @property
    def game_value(self) -> float:
        return game_value(self)

    @property
    def prior_expected_value(self) -> float:
        return float(self.envelope.base @ self.V_hat)

    def worst_model_value(self) -> float:
        live = self.envelope.base > 0
        return float(self.V_hat[live].min())


def game_value(state: GameState) -> float:
    """Risk-adjusted value of the current per-model estimates."""
    if state.k < 1:
        raise RamcpError("game value needs at least one iteration")
    return adversary_best_response(state.envelope, state.V_hat).objective_value


@dataclass
class ConvergenceTrace:
    """Per-iteration record; dense for the first 1000 iterations, then every 10th."""

    num_models: int
    k: List[int] = field(default_factory=list)
    b_adv: List[np.ndarray] = field(default_factory=list)
    b_avg: List[np.ndarray] = field(default_factory=list)
    V_hat: List[np.ndarray] = field(default_factory=list)
    game_value: List[float] = field(default_factory=list)

    @staticmethod
    def wants(k: int) -> bool:
        return k <= DENSE_TRACE_UNTIL or k % SPARSE_TRACE_EVERY == 0

    def record(self, state: GameState) -> None:
        if self.k and self.k[-1] == state.k:
            return
        self.k.append(state.k)
        self.b_adv.append(state.b_adv.copy())
        self.b_avg.append(state.b_avg.copy())
        self.V_hat.append(state.V_hat.copy())
        self.game_value.append(float(state.b_adv @ state.V_hat))

    def __len__(self) -> int:
        return len(self.k)

    def header(self) -> List[str]:
        M = self.num_models
        return (["k"] + [f"b_adv[{i}]" for i in range(M)] + [f"b_avg[{i}]" for i in range(M)]
                + [f"V_hat[{i}]" for i in range(M)] + ["game_value"])

    def rows(self):
        for j, k in enumerate(self.k):
            yield ([k] + [repr(float(x)) for x in self.b_adv[j]]
                   + [repr(float(x)) for x in self.b_avg[j]]
                   + [repr(float(x)) for x in self.V_hat[j]] + [repr(self.game_value[j])])

    def write_csv(self, stream) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(self.header())
        w.writerows(self.rows())

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def as_arrays(self) -> dict:
        return {"k": np.array(self.k), "b_adv": np.array(self.b_adv), "b_avg": np.array(self.b_avg),
                "V_hat": np.array(self.V_hat), "game_value": np.array(self.game_value)}


class MixedPolicy:
    """Averaged policy stored in a finished tree: W_br proportions at each history."""

    def __init__(self, tree: SearchTree):
        self.tree = tree

    @property
    def num_actions(self) -> int:
        return self.tree.problem.num_actions

    def probs(self, history: History) -> np.ndarray:
        return self.tree.avg_action_probs(history)

    def __call__(self, history: History):
        try:
            return self.probs(history)
        except PolicyUndefinedError:
            return None

    def greedy(self, history: History) -> int:
        return self.tree.greedy_action(history)


class SearchResult(NamedTuple):
    policy: MixedPolicy
    state: GameState
    trace: ConvergenceTrace


Observer = Callable[[int, SearchTree, GameState], None]


def search(problem: BamdpProblem, envelope: RiskEnvelope, mode: str = "F", budget: int = 10_000,
           rng: Optional[np.random.Generator] = None, *, backend: Optional[str] = None,
           gamma: float = 0.0, keying: str = "history",
           observer: Optional[Observer] = None) -> SearchResult:
    """Run ``budget`` fictitious-play iterations from the problem's root.

    Each iteration simulates every model once with weight ``M * b_adv(i)``,
    folds the returned path value into the model's running mean, refreshes Q
    by dynamic programming in mode F, and moves the adversary to its best
    response against the new estimates. ``observer(k, tree, state)`` is called
    after every iteration.
    """
    if isinstance(budget, bool) or int(budget) != budget or budget < 1:
        raise ValueError(f"budget must be a positive integer, got {budget!r}")
    if envelope.size != problem.num_models:
        raise ProblemError(f"envelope has {envelope.size} models, problem has {problem.num_models}")
    if rng is None:
        rng = np.random.default_rng()
    tree = SearchTree(problem, mode=mode, keying=keying, gamma=gamma, backend=backend)
    raw = tree.raw
    M = problem.num_models
    D = tree.draws_per_simulation
    state = GameState.initial(envelope)
    trace = ConvergenceTrace(M)
    V_hat, b_avg, b_wavg = state.V_hat, state.b_avg, state.b_weight_avg
    full = mode == "F"
    for k in range(1, int(budget) + 1):
        state.k = k
        b_used = state.b_adv
        u = rng.random(M * D)
        for i in range(M):
            w = M * float(b_used[i])
            v_br = raw.simulate(i, w, u[i * D:(i + 1) * D], 0)
            V_hat[i] += (v_br - V_hat[i]) / k
        if full:
            compute_q_values(tree)
        b_wavg += (b_used - b_wavg) / k
        state.b_adv = adversary_best_response(envelope, V_hat).b_adv
        b_avg += (state.b_adv - b_avg) / k
        if ConvergenceTrace.wants(k):
            trace.record(state)
        if observer is not None:
            observer(k, tree, state)
    trace.record(state)
    return SearchResult(MixedPolicy(tree), state, trace)


@dataclass(frozen=True)
class Evaluation:
    mean: float
    ci90: float
    fallbacks: int = 0
    n: int = 0


def evaluate_policy(problem: BamdpProblem, policy, model_index: int, n_rollouts: int,
                    rng: np.random.Generator, strict: bool = True) -> Evaluation:
    """Monte Carlo total reward of ``policy`` on one model, with a 90% CI half-width.

    ``policy`` is a :class:`MixedPolicy` (rolled out inside the kernel) or any
    history policy callable. With ``strict=False`` a tree policy that reaches
    a history without averaged-policy mass plays the greedy action there
    (action 0 outside the tree); the number of such steps is reported.
    """
    if n_rollouts < 2:
        raise ValueError("need at least two rollouts")
    i = problem.check_model(model_index)
    if isinstance(policy, MixedPolicy):
        u = rng.random(int(n_rollouts) * 2 * problem.horizon)
        returns, fallbacks = policy.tree.raw.rollouts(i, int(n_rollouts), u, strict)
    else:
        from .problem import rollout_policy, trajectory_reward
        returns = [trajectory_reward(rollout_policy(problem, i, policy, rng))
                   for _ in range(int(n_rollouts))]
        fallbacks = 0
    mean, ci = mean_and_ci90(returns)
    return Evaluation(mean, ci, int(fallbacks), int(n_rollouts))


def evaluate_all_models(problem: BamdpProblem, policy, n_rollouts: int, rng: np.random.Generator,
                        strict: bool = True) -> List[Evaluation]:
    return [evaluate_policy(problem, policy, i, n_rollouts, rng, strict)
            for i in range(problem.num_models)]
