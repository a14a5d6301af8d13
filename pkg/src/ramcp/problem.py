"""Discrete Bayes-adaptive planning problems.

A :class:`BamdpProblem` is a finite family of MDPs sharing states, actions,
rewards and horizon, differing only in their transition tensors, together
with a prior belief over which member is the true one.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import PolicyUndefinedError, ProblemError

ROW_TOL = 1e-12
BELIEF_TOL = 1e-9

History = Tuple[int, ...]
# A policy maps a history to a probability vector over actions (or an action
# index); returning None means "undefined here".
HistoryPolicy = Callable[[History], Union[None, int, np.ndarray]]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def check_belief(weights, size: Optional[int] = None, tol: float = BELIEF_TOL) -> np.ndarray:
    """Validate a belief vector and return it as a float array."""
    b = np.asarray(weights, dtype=float)
    if b.ndim != 1 or (size is not None and b.shape[0] != size):
        raise ProblemError(f"belief must be a vector of length {size}, got shape {b.shape}")
    if not np.all(np.isfinite(b)) or np.any(b < 0):
        raise ProblemError("belief entries must be finite and nonnegative")
    if abs(b.sum() - 1.0) > tol:
        raise ProblemError(f"belief must sum to 1 (got {b.sum()!r})")
    return b


@dataclass(frozen=True)
class Trajectory:
    """One episode: visited states, chosen actions and stage rewards."""

    states: Tuple[int, ...]
    actions: Tuple[int, ...]
    rewards: Tuple[float, ...]

    @property
    def history(self) -> History:
        h = [self.states[0]] if self.states else []
        for a, s in zip(self.actions, self.states[1:]):
            h += [a, s]
        return tuple(h)

    def split(self, t: int) -> Tuple["Trajectory", "Trajectory"]:
        """Cut after ``t`` actions; both parts share the state at the cut."""
        return (
            Trajectory(self.states[: t + 1], self.actions[:t], self.rewards[:t]),
            Trajectory(self.states[t:], self.actions[t:], self.rewards[t:]),
        )


def trajectory_reward(traj: Trajectory) -> float:
    """Total reward of a trajectory: the plain sum of its stage rewards."""
    total = 0.0
    for r in traj.rewards:
        total += r
    return total


@dataclass(frozen=True, eq=False)
class BamdpProblem:
    """Finite family of MDPs with a prior over the family.

    ``transitions`` has shape (M, S, A, S) with ``transitions[i, s, a, s2]``
    the probability of ``s2`` after taking ``a`` in ``s`` under model ``i``;
    ``rewards`` has shape (S, A, S).
    """

    transitions: np.ndarray
    rewards: np.ndarray
    prior: np.ndarray
    horizon: int
    initial_state: int = 0
    terminal_states: frozenset = field(default_factory=frozenset)
    name: str = "problem"

    def __post_init__(self):
        T = np.array(self.transitions, dtype=float)
        if T.ndim != 4 or T.shape[1] != T.shape[3]:
            raise ProblemError(f"transitions must have shape (M, S, A, S), got {T.shape}")
        M, S, A, _ = T.shape
        if M < 1 or S < 1 or A < 1:
            raise ProblemError("need at least one model, state and action")
        if not np.all(np.isfinite(T)) or np.any(T < 0):
            raise ProblemError("transition probabilities must be finite and nonnegative")
        bad = np.argwhere(np.abs(T.sum(axis=3) - 1.0) > ROW_TOL)
        if len(bad):
            i, s, a = bad[0]
            raise ProblemError(f"transition row (model={i}, s={s}, a={a}) does not sum to 1")
        R = np.array(self.rewards, dtype=float)
        if R.shape != (S, A, S):
            raise ProblemError(f"rewards must have shape {(S, A, S)}, got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ProblemError("rewards must be finite")
        prior = check_belief(self.prior, M, tol=ROW_TOL)
        if int(self.horizon) < 0:
            raise ProblemError("horizon must be >= 0")
        if not 0 <= int(self.initial_state) < S:
            raise ProblemError(f"initial_state {self.initial_state} out of range")
        term = frozenset(int(s) for s in self.terminal_states)
        if any(not 0 <= s < S for s in term):
            raise ProblemError("terminal state index out of range")
        object.__setattr__(self, "transitions", _frozen(T))
        object.__setattr__(self, "rewards", _frozen(R))
        object.__setattr__(self, "prior", _frozen(prior))
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "initial_state", int(self.initial_state))
        object.__setattr__(self, "terminal_states", term)

    @property
    def num_models(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[2]

    def reward(self, s: int, a: int, s2: int) -> float:
        return float(self.rewards[s, a, s2])

    def is_terminal(self, s: int) -> bool:
        return s in self.terminal_states

    @property
    def v_range(self) -> float:
        """Width of the interval that bounds any total episode reward."""
        return self.horizon * float(self.rewards.max() - self.rewards.min())

    @cached_property
    def terminal_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_states, dtype=np.uint8)
        mask[list(self.terminal_states)] = 1
        return mask

    @cached_property
    def sparse_rows(self):
        """Successor lists and cumulative probabilities for inverse-CDF sampling.

        Returns ``(succ, cdf, nsucc)`` with shapes (M, S, A, K), (M, S, A, K)
        and (M, S, A), successors in ascending state order. The last live
        cdf entry of every row is exactly 1.
        """
        T = self.transitions
        nz = T > 0
        nsucc = nz.sum(axis=3).astype(np.int32)
        K = max(int(nsucc.max()), 1)
        M, S, A, _ = T.shape
        succ = np.zeros((M, S, A, K), dtype=np.int32)
        cdf = np.ones((M, S, A, K), dtype=float)
        for i, s, a in np.ndindex(M, S, A):
            idx = np.flatnonzero(nz[i, s, a])
            c = np.cumsum(T[i, s, a, idx])
            c[-1] = 1.0
            succ[i, s, a, : len(idx)] = idx
            cdf[i, s, a, : len(idx)] = c
        return succ, cdf, nsucc

    def max_draws_per_simulation(self) -> int:
        """Upper bound on successor samples consumed by one exhaustive simulation."""
        A = self.num_actions
        return sum(A ** d for d in range(1, self.horizon + 1))

    def check_model(self, model_index: int) -> int:
        if not 0 <= int(model_index) < self.num_models:
            raise ProblemError(f"model index {model_index} out of range [0, {self.num_models})")
        return int(model_index)

    def check_state_action(self, s: int, a: int) -> None:
        if not 0 <= int(s) < self.num_states:
            raise ProblemError(f"state {s} out of range")
        if not 0 <= int(a) < self.num_actions:
            raise ProblemError(f"action {a} out of range")

    def with_prior(self, prior) -> "BamdpProblem":
        return BamdpProblem(
            self.transitions, self.rewards, prior, self.horizon,
            self.initial_state, self.terminal_states, self.name,
        )

    # --- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": "ramcp.problem/1",
            "name": self.name,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "horizon": self.horizon,
            "initial_state": self.initial_state,
            "terminal_states": sorted(self.terminal_states),
            "prior": self.prior.tolist(),
            "models": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BamdpProblem":
        try:
            S, A = int(d["num_states"]), int(d["num_actions"])
            T = np.asarray(d["models"], dtype=float)
            R = np.asarray(d["rewards"], dtype=float)
            problem = cls(
                transitions=T,
                rewards=R,
                prior=np.asarray(d["prior"], dtype=float),
                horizon=int(d["horizon"]),
                initial_state=int(d.get("initial_state", 0)),
                terminal_states=frozenset(d.get("terminal_states", ())),
                name=str(d.get("name", "problem")),
            )
        except (KeyError, TypeError) as exc:
            raise ProblemError(f"malformed problem document: {exc}") from exc
        if problem.num_states != S or problem.num_actions != A:
            raise ProblemError("num_states/num_actions disagree with the model matrices")
        return problem


def load_problem(path) -> BamdpProblem:
    with open(path) as f:
        return BamdpProblem.from_dict(json.load(f))


def save_problem(problem: BamdpProblem, path) -> None:
    Path(path).write_text(json.dumps(problem.to_dict(), indent=1, sort_keys=True) + "\n")


# --- sampling ---------------------------------------------------------------


def draw_successor(problem: BamdpProblem, model_index: int, s: int, a: int, u: float) -> int:
    """Inverse-CDF successor draw from a uniform ``u`` in [0, 1)."""
    succ, cdf, nsucc = problem.sparse_rows
    n = nsucc[model_index, s, a]
    row = cdf[model_index, s, a]
    for k in range(n):
        if u < row[k]:
            return int(succ[model_index, s, a, k])
    return int(succ[model_index, s, a, n - 1])


def sample_transition(problem: BamdpProblem, model_index: int, s: int, a: int,
                      rng: np.random.Generator) -> Tuple[int, float]:
    """Draw ``s2 ~ T_model(s, a)`` and return it with its stage reward."""
    i = problem.check_model(model_index)
    problem.check_state_action(s, a)
    s2 = draw_successor(problem, i, int(s), int(a), rng.random())
    return s2, problem.reward(s, a, s2)


def _pick(probs, u: float) -> int:
    total = 0.0
    last = 0
    for a, p in enumerate(probs):
        if p > 0:
            total += p
            last = a
            if u < total:
                return a
    return last


def rollout_policy(problem: BamdpProblem, model_index: int, policy: HistoryPolicy,
                   rng: np.random.Generator) -> Trajectory:
    """Run one episode of ``policy`` on a model; stops early at terminal states."""
    i = problem.check_model(model_index)
    s = problem.initial_state
    states, actions, rewards = [s], [], []
    h = [s]
    for _ in range(problem.horizon):
        if problem.is_terminal(s):
            break
        choice = policy(tuple(h))
        if choice is None:
            raise PolicyUndefinedError(h)
        if isinstance(choice, (int, np.integer)):
            a = int(choice)
        else:
            a = _pick(np.asarray(choice, dtype=float), rng.random())
        s2 = draw_successor(problem, i, s, a, rng.random())
        r = problem.reward(s, a, s2)
        states.append(s2)
        actions.append(a)
        rewards.append(r)
        h += [a, s2]
        s = s2
    return Trajectory(tuple(states), tuple(actions), tuple(rewards))


class DeterministicPolicy:
    """History -> action lookup table, optionally with a default action."""

    def __init__(self, table: Mapping[History, int], num_actions: int,
                 default: Optional[int] = None):
        self.table = dict(table)
        self.num_actions = num_actions
        self.default = default

    def __call__(self, history: History):
        a = self.table.get(tuple(history), self.default)
        if a is None:
            return None
        out = np.zeros(self.num_actions)
        out[a] = 1.0
        return out

    def __repr__(self):
        return f"DeterministicPolicy({len(self.table)} histories)"


def constant_policy(action: int, num_actions: int) -> HistoryPolicy:
    """Policy taking the same action at every history."""
    probs = np.zeros(num_actions)
    probs[action] = 1.0
    return lambda h: probs


def uniform_policy(num_actions: int) -> HistoryPolicy:
    probs = np.full(num_actions, 1.0 / num_actions)
    return lambda h: probs


def depth(history: Sequence[int]) -> int:
    """Number of actions in a history."""
    return (len(history) - 1) // 2


def mean_and_ci90(samples) -> Tuple[float, float]:
    """Sample mean and the half-width of its 90% normal-approximation interval."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two samples")
    half = 1.6448536269514722 * x.std(ddof=1) / math.sqrt(x.size)
    return float(x.mean()), float(half)
