"""Exact solvers used as ground truth on small problems.

Everything here enumerates the history tree explicitly, so it is only
practical when the number of reachable histories is modest (the bandit).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .envelope import RiskEnvelope, adversary_best_response, simplex_solve
from .errors import EnumerationLimitError, PolicyUndefinedError, ProblemError
from .problem import BamdpProblem, DeterministicPolicy, History, check_belief

DEFAULT_NODE_LIMIT = 1_000_000
DEFAULT_POLICY_LIMIT = 200_000


def history_bound(problem: BamdpProblem) -> int:
    """Upper bound on the number of reachable histories (all models pooled)."""
    T = problem.transitions
    branching = int((T.max(axis=0) > 0).sum(axis=2).max()) * problem.num_actions
    return sum(branching ** d for d in range(problem.horizon + 1))


class _Budget:
    def __init__(self, problem: BamdpProblem, limit: int):
        self.limit = limit
        self.count = 0
        self.problem = problem

    def tick(self):
        self.count += 1
        if self.count > self.limit:
            raise EnumerationLimitError(
                f"history tree exceeds {self.limit} nodes "
                f"(estimated up to {history_bound(self.problem)})")


def _successors(problem: BamdpProblem, s: int, a: int, models=None) -> np.ndarray:
    T = problem.transitions[:, s, a, :] if models is None else problem.transitions[models, s, a, :]
    return np.flatnonzero(T.max(axis=0) > 0)


def _policy_probs(policy, h: History, A: int) -> np.ndarray:
    choice = policy(h)
    if choice is None:
        raise PolicyUndefinedError(h)
    if isinstance(choice, (int, np.integer)):
        out = np.zeros(A)
        out[int(choice)] = 1.0
        return out
    return np.asarray(choice, dtype=float)


def exact_policy_value(problem: BamdpProblem, policy, model_index: int,
                       max_nodes: int = DEFAULT_NODE_LIMIT) -> float:
    """Expected total reward of a history policy on one model, by full enumeration."""
    i = problem.check_model(model_index)
    T = problem.transitions[i]
    R = problem.rewards
    A = problem.num_actions
    H = problem.horizon
    budget = _Budget(problem, max_nodes)

    def value(h: tuple, s: int, d: int) -> float:
        budget.tick()
        if d >= H or problem.is_terminal(s):
            return 0.0
        probs = _policy_probs(policy, h, A)
        total = 0.0
        for a in np.flatnonzero(probs > 0):
            row = T[s, a]
            q = 0.0
            for s2 in np.flatnonzero(row > 0):
                q += row[s2] * (R[s, a, s2] + value(h + (int(a), int(s2)), int(s2), d + 1))
            total += probs[a] * q
        return total

    return float(value((problem.initial_state,), problem.initial_state, 0))


def exponential_utility(J: float, gamma: float) -> float:
    return -math.exp(-gamma * J)


@dataclass(frozen=True)
class BayesSolution:
    value: float
    root_q: np.ndarray
    policy: DeterministicPolicy


def bayes_optimal_solution(problem: BamdpProblem, belief=None, gamma: float = 0.0,
                           max_nodes: int = DEFAULT_NODE_LIMIT) -> BayesSolution:
    """Backward induction on the belief-augmented history tree.

    Works with unnormalized belief weights ``b_i * P(h | model i)``, so the
    posterior is implicit and zero-probability histories are skipped. With
    ``gamma > 0`` the objective is the expected utility ``-exp(-gamma * J)``.
    Ties between actions go to the lowest index.
    """
    b = problem.prior if belief is None else check_belief(belief, problem.num_models)
    T = problem.transitions
    R = problem.rewards
    A = problem.num_actions
    H = problem.horizon
    utility = gamma > 0
    budget = _Budget(problem, max_nodes)
    table: Dict[History, int] = {}

    # returns sum_i w_i * E_i[future | h], the unnormalized value of h
    def solve(h: tuple, s: int, d: int, w: np.ndarray, acc: float) -> Tuple[float, Optional[np.ndarray]]:
        budget.tick()
        if d >= H or problem.is_terminal(s):
            return (float(w.sum()) * exponential_utility(acc, gamma) if utility else 0.0), None
        q = np.zeros(A)
        for a in range(A):
            reach = w[:, None] * T[:, s, a, :]
            for s2 in np.flatnonzero(reach.max(axis=0) > 0):
                w2 = reach[:, s2]
                r = R[s, a, s2]
                child, _ = solve(h + (a, int(s2)), int(s2), d + 1, w2, acc + r)
                q[a] += child if utility else w2.sum() * r + child
        best = int(np.argmax(q))
        table[h] = best
        return float(q[best]), q

    live = b > 0
    w0 = np.where(live, b, 0.0)
    v, q = solve((problem.initial_state,), problem.initial_state, 0, w0, 0.0)
    if q is None:
        q = np.zeros(A)
    return BayesSolution(v, q, DeterministicPolicy(table, A, default=0))


def bayes_optimal_value(problem: BamdpProblem, belief=None, gamma: float = 0.0,
                        max_nodes: int = DEFAULT_NODE_LIMIT) -> float:
    """Exact Bayes-optimal value (expected total reward under ``belief``)."""
    return bayes_optimal_solution(problem, belief, gamma, max_nodes).value


# --- policy enumeration ------------------------------------------------------


def _equivalent_actions(problem: BamdpProblem, s: int) -> bool:
    """True when every action at ``s`` has identical dynamics and rewards under all models."""
    T = problem.transitions[:, s]
    R = problem.rewards[s]
    return bool(np.all(T == T[:, :1]) and np.all(R == R[:1]))


@dataclass(frozen=True)
class PayoffMatrix:
    """values[p, i] = exact expected total reward of policies[p] on model i."""

    values: np.ndarray
    policies: List[Dict[History, int]]

    @property
    def num_policies(self) -> int:
        return self.values.shape[0]

    def policy(self, p: int, num_actions: int) -> DeterministicPolicy:
        return DeterministicPolicy(self.policies[p], num_actions, default=0)

    def nondominated(self, tol: float = 1e-12) -> "PayoffMatrix":
        keep = _pareto_indices(self.values, tol)
        return PayoffMatrix(self.values[keep], [self.policies[p] for p in keep])


def _pareto_indices(V: np.ndarray, tol: float) -> List[int]:
    order = sorted(range(len(V)), key=lambda p: tuple(-V[p]))
    kept: List[int] = []
    for p in order:
        if not any(np.all(V[q] >= V[p] - tol) for q in kept):
            kept.append(p)
    return sorted(kept)


def enumerate_policies(problem: BamdpProblem, limit: int = DEFAULT_POLICY_LIMIT) -> PayoffMatrix:
    """All deterministic policies on histories reachable under some model.

    States where every action is payoff-identical (e.g. bandit reward states)
    are fixed to action 0, which leaves the value vectors unchanged.
    """
    T = problem.transitions
    R = problem.rewards
    A = problem.num_actions
    H = problem.horizon
    M = problem.num_models

    def build(h: tuple, s: int, d: int) -> List[Tuple[np.ndarray, dict]]:
        if d >= H or problem.is_terminal(s):
            return [(np.zeros(M), {})]
        actions = [0] if _equivalent_actions(problem, s) else range(A)
        out = []
        for a in actions:
            succ = _successors(problem, s, a)
            parts = [build(h + (a, int(s2)), int(s2), d + 1) for s2 in succ]
            n = 1
            for part in parts:
                n *= len(part)
            if len(out) + n > limit:
                raise EnumerationLimitError(f"more than {limit} deterministic policies")
            for combo in itertools.product(*parts):
                vec = np.zeros(M)
                tab = {h: a}
                for s2, (cv, ctab) in zip(succ, combo):
                    vec += T[:, s, a, s2] * (R[s, a, s2] + cv)
                    tab.update(ctab)
                out.append((vec, tab))
        return out

    rows = build((problem.initial_state,), problem.initial_state, 0)
    return PayoffMatrix(np.array([v for v, _ in rows]), [t for _, t in rows])


def pareto_value_vectors(problem: BamdpProblem, limit: int = DEFAULT_POLICY_LIMIT,
                         tol: float = 1e-12) -> PayoffMatrix:
    """Nondominated per-model value vectors, pruning dominated subpolicies bottom-up.

    Only nondominated vectors can matter to an objective that is monotone in
    every model's value, so this reaches the same maximin as full enumeration
    with far fewer rows.
    """
    T = problem.transitions
    R = problem.rewards
    H = problem.horizon
    M = problem.num_models

    def prune(rows):
        V = np.array([v for v, _ in rows])
        return [rows[p] for p in _pareto_indices(V, tol)]

    def build(h: tuple, s: int, d: int):
        if d >= H or problem.is_terminal(s):
            return [(np.zeros(M), {})]
        out = []
        for a in range(problem.num_actions):
            acc = [(np.zeros(M), {h: a})]
            for s2 in _successors(problem, s, a):
                child = build(h + (a, int(s2)), int(s2), d + 1)
                p = T[:, s, a, s2]
                acc = prune([(v + p * (R[s, a, s2] + cv), {**t, **ct})
                             for (v, t), (cv, ct) in itertools.product(acc, child)])
                if len(acc) > limit:
                    raise EnumerationLimitError(f"more than {limit} nondominated policies")
            out.extend(acc)
        return prune(out)

    rows = build((problem.initial_state,), problem.initial_state, 0)
    return PayoffMatrix(np.array([v for v, _ in rows]), [t for _, t in rows])


# --- equilibrium -------------------------------------------------------------


@dataclass(frozen=True)
class NashSolution:
    value: float
    mixture: np.ndarray
    payoff: PayoffMatrix
    b_adv: np.ndarray
    adversary_value: float

    @property
    def mixture_values(self) -> np.ndarray:
        """Per-model values of the equilibrium policy mixture."""
        return self.mixture @ self.payoff.values

    def support(self, tol: float = 1e-9) -> List[int]:
        return [int(p) for p in np.flatnonzero(self.mixture > tol)]


def maximin_vertex_lp(values: np.ndarray, vertices: np.ndarray) -> Tuple[float, np.ndarray]:
    """max_x min_j vertices[j] . (x @ values) over mixtures x, as one LP."""
    P = values.shape[0]
    G = vertices @ values.T  # (J, P): expected payoff of policy p under belief j
    J = G.shape[0]
    c = np.zeros(P + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-G, np.ones((J, 1))])
    A_eq = np.zeros((1, P + 1))
    A_eq[0, :P] = 1.0
    sol = simplex_solve(c, A_ub, np.zeros(J), A_eq, np.ones(1), [(0, None)] * P + [(None, None)])
    x = np.clip(sol.x[:P], 0.0, None)
    return -sol.objective, x / x.sum()


def adversary_lp(values: np.ndarray, envelope: RiskEnvelope) -> Tuple[float, np.ndarray, np.ndarray]:
    """min over zeta in the envelope of max_p sum_i base_i zeta_i values[p, i].

    Returns the value, the minimizing perturbed belief and the policy mixture
    recovered from the LP duals.
    """
    P, M = values.shape
    A_env, b_env, A_eq_env, b_eq_env, bounds = envelope._lp_constraints()
    if envelope.kind == "worst_case":
        bounds = [(0, None)] * M
    base = envelope.base
    c = np.zeros(M + 1)
    c[-1] = 1.0
    rows = [np.hstack([values * base[None, :], -np.ones((P, 1))])]
    rhs = [np.zeros(P)]
    if A_env is not None:
        rows.append(np.hstack([A_env, np.zeros((A_env.shape[0], 1))]))
        rhs.append(b_env)
    A_ub = np.vstack(rows)
    b_ub = np.concatenate(rhs)
    A_eq = np.hstack([A_eq_env, np.zeros((1, 1))])
    sol = simplex_solve(c, A_ub, b_ub, A_eq, b_eq_env, list(bounds) + [(None, None)])
    zeta = sol.x[:M]
    mix = np.clip(-sol.duals_ub[:P], 0.0, None)
    if mix.sum() > 0:
        mix = mix / mix.sum()
    return sol.objective, base * zeta, mix


def exact_nash_value(problem: BamdpProblem, envelope: Optional[RiskEnvelope] = None,
                     payoff: Optional[PayoffMatrix] = None,
                     limit: int = DEFAULT_POLICY_LIMIT) -> NashSolution:
    """Equilibrium of the planner-versus-adversary game over deterministic policies.

    The planner's maximin mixture comes from an LP with one constraint per
    vertex of the perturbed-belief set (the dual-LP mixture for general
    polytopes); the adversary's minimax belief comes from its own LP, and the
    two values must coincide.
    """
    if envelope is None:
        envelope = RiskEnvelope.expectation(problem.prior)
    if envelope.size != problem.num_models:
        raise ProblemError("envelope and problem disagree on the number of models")
    if payoff is None:
        payoff = enumerate_policies(problem, limit).nondominated()
    adv_value, b_star, dual_mix = adversary_lp(payoff.values, envelope)
    if envelope.kind == "polytope":
        value, mix = adv_value, dual_mix
    else:
        value, mix = maximin_vertex_lp(payoff.values, envelope.belief_vertices())
    return NashSolution(float(value), mix, payoff, b_star, float(adv_value))


@dataclass(frozen=True)
class FictitiousPlayResult:
    lower: float
    upper: float
    mixture: np.ndarray
    belief: np.ndarray
    iterations: int

    @property
    def value(self) -> float:
        return 0.5 * (self.lower + self.upper)


def fictitious_play(values: np.ndarray, envelope: RiskEnvelope, iterations: int = 1_000_000) -> FictitiousPlayResult:
    """Classic simultaneous fictitious play on the policy-versus-belief game.

    The planner best-responds to the average adversary belief and the
    adversary to the average planner mixture. The returned bounds bracket the
    game value: ``lower`` is the risk value of the average mixture and
    ``upper`` the best payoff against the average belief.
    """
    V = np.asarray(values, dtype=float)
    P, M = V.shape
    counts = np.zeros(P)
    mix_values = np.zeros(M)  # running mean of the chosen rows
    belief_sum = np.zeros(M)
    belief = envelope.base.copy()
    p = int(np.argmax(V @ belief))
    cache: Dict[tuple, np.ndarray] = {}
    payoff_sum = np.zeros(P)  # V @ belief_sum, kept incrementally
    polytope = envelope.kind == "polytope"
    for k in range(1, iterations + 1):
        counts[p] += 1
        mix_values += (V[p] - mix_values) / k
        belief_sum += belief
        payoff_sum += cache_rows(cache, V, belief)
        if polytope:
            belief = adversary_best_response(envelope, mix_values).b_adv
        else:
            belief = _fast_response(envelope, mix_values, cache)
        p = int(np.argmax(payoff_sum))
    mixture = counts / counts.sum()
    b_avg = belief_sum / iterations
    lower = adversary_best_response(envelope, mixture @ V).objective_value
    upper = float(np.max(V @ b_avg))
    return FictitiousPlayResult(lower, upper, mixture, b_avg, iterations)


def cache_rows(cache: Dict, V: np.ndarray, belief: np.ndarray) -> np.ndarray:
    key = ("rows", belief.tobytes())
    out = cache.get(key)
    if out is None:
        out = V @ belief
        cache[key] = out
    return out


def _fast_response(envelope: RiskEnvelope, v: np.ndarray, cache: Dict) -> np.ndarray:
    order = tuple(np.lexsort((np.arange(len(v)), v)))
    b = cache.get(order)
    if b is None:
        b = adversary_best_response(envelope, v).b_adv
        cache[order] = b
    return b


def bandit_oracle_constants(alphas: Sequence[float] = (0.25, 0.5, 0.75, 1.0)) -> dict:
    """Exact reference numbers for the default bandit."""
    from .environments import build_bandit

    problem = build_bandit()
    payoff = enumerate_policies(problem).nondominated()
    out = {"bayes_optimal_value": bayes_optimal_value(problem),
           "num_policies": enumerate_policies(problem).num_policies,
           "nash": {}}
    for alpha in alphas:
        sol = exact_nash_value(problem, RiskEnvelope.cvar(problem.prior, alpha), payoff=payoff)
        out["nash"][repr(float(alpha))] = {
            "value": sol.value,
            "b_adv": sol.b_adv.tolist(),
            "mixture_values": sol.mixture_values.tolist(),
        }
    wc = exact_nash_value(problem, RiskEnvelope.worst_case(problem.prior), payoff=payoff)
    out["worst_case"] = {"value": wc.value, "b_adv": wc.b_adv.tolist()}
    return out
