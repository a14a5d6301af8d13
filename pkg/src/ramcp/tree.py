"""History-keyed search tree: weighted simulation, empirical DP and averaged actions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np

from ._backend import get_kernel
from .errors import PolicyUndefinedError, ProblemError, RamcpError, WeightError
from .problem import BamdpProblem, History, _pick

log = logging.getLogger(__name__)

MODES = ("F", "I")
KEYINGS = ("history", "state_depth")


@dataclass(frozen=True)
class NodeStats:
    key: tuple
    depth: int
    state: int
    N: int
    W: float
    V: float
    N_a: np.ndarray
    W_a: np.ndarray
    W_br: np.ndarray
    Q: np.ndarray
    children: dict  # (action, successor) -> W(h a s')


class SearchTree:
    """Statistics tree rooted at the problem's initial state.

    ``mode`` "F" freezes Q during simulation and refreshes it with
    :meth:`compute_q_values`; "I" updates Q and V incrementally inside each
    simulation. ``keying="state_depth"`` merges all histories that reach the
    same state at the same depth. ``gamma > 0`` scores leaves with the
    exponential utility ``-exp(-gamma * J)`` of the path return instead of
    summing stage rewards.
    """

    def __init__(self, problem: BamdpProblem, mode: str = "F", keying: str = "history",
                 gamma: float = 0.0, backend: Optional[str] = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if keying not in KEYINGS:
            raise ValueError(f"keying must be one of {KEYINGS}, got {keying!r}")
        self.problem = problem
        self.mode = mode
        self.keying = keying
        self.gamma = float(gamma)
        self.kernel = get_kernel(backend)
        succ, cdf, nsucc = problem.sparse_rows
        self._t = self.kernel.Tree(
            succ, cdf, nsucc, problem.rewards, problem.terminal_mask, problem.horizon,
            problem.initial_state, incremental=(mode == "I"),
            merge_by_state=(keying == "state_depth"), gamma=self.gamma,
        )
        self.draws_per_simulation = problem.max_draws_per_simulation()
        self._warned_zero_weight = False

    @property
    def backend(self) -> str:
        return self.kernel.BACKEND

    @property
    def num_nodes(self) -> int:
        return self._t.num_nodes

    @property
    def raw(self):
        """The underlying kernel tree."""
        return self._t

    # --- lookup ----------------------------------------------------------------

    def node_of(self, history: History) -> Optional[int]:
        """Arena index of the node for ``history``, or None if never visited."""
        h = tuple(int(x) for x in history)
        if not h or h[0] != self.problem.initial_state or len(h) % 2 == 0:
            return None
        node = 0
        for j in range(1, len(h), 2):
            node = self._t.find_child(node, h[j], h[j + 1])
            if node < 0:
                return None
        return node

    def _require(self, history: History) -> int:
        node = self.node_of(history)
        if node is None:
            raise PolicyUndefinedError(history, "history not in tree")
        return node

    def stats(self, history: History) -> NodeStats:
        return self._stats(self._require(history), self._t.export())

    def _key(self, node: int, arr: dict) -> tuple:
        if self.keying == "state_depth":
            return (int(arr["depth"][node]), int(arr["state"][node]))
        h: List[int] = []
        while node >= 0:
            h.append(int(arr["state"][node]))
            a = int(arr["parent_action"][node])
            node = int(arr["parent"][node])
            if node >= 0:
                h.append(a)
        return tuple(reversed(h))

    def _stats(self, node: int, arr: dict) -> NodeStats:
        children = {}
        for a in range(self.problem.num_actions):
            e = int(arr["head"][node, a])
            while e >= 0:
                children[(a, int(arr["e_state"][e]))] = float(arr["e_W"][e])
                e = int(arr["e_next"][e])
        return NodeStats(
            key=self._key(node, arr), depth=int(arr["depth"][node]),
            state=int(arr["state"][node]), N=int(arr["N"][node]), W=float(arr["W"][node]),
            V=float(arr["V"][node]), N_a=arr["Na"][node].copy(), W_a=arr["Wa"][node].copy(),
            W_br=arr["Wbr"][node].copy(), Q=arr["Q"][node].copy(), children=children,
        )

    def items(self) -> Iterator[NodeStats]:
        arr = self._t.export()
        for node in range(self._t.num_nodes):
            yield self._stats(node, arr)

    def is_leaf_node(self, node: int) -> bool:
        return bool(self._t.is_leaf(node))

    def to_json(self) -> dict:
        """Per-node statistics, suitable for debugging dumps and golden files."""
        nodes = []
        for st in self.items():
            entry = {"key": list(st.key), "depth": st.depth, "state": st.state,
                     "N": st.N, "W": st.W, "V": st.V}
            if st.N_a.any():
                entry.update(N_a=st.N_a.tolist(), W_a=st.W_a.tolist(),
                             W_br=st.W_br.tolist(), Q=st.Q.tolist())
            nodes.append(entry)
        return {"schema": "ramcp.tree/1", "mode": self.mode, "keying": self.keying,
                "gamma": self.gamma, "num_nodes": len(nodes), "nodes": nodes}

    # --- policies ----------------------------------------------------------------

    def avg_action_probs(self, history: History) -> np.ndarray:
        """Averaged mixed strategy at ``history``: W_br proportions."""
        node = self._require(history)
        wbr = self._t.export()["Wbr"][node]
        total = wbr.sum()
        if not total > 0:
            raise PolicyUndefinedError(history, "no averaged-policy mass")
        return wbr / total

    def greedy_action(self, history: History) -> int:
        """argmax_a Q(h, a), lowest index on ties; action 0 outside the tree."""
        node = self.node_of(history)
        return 0 if node is None else int(self._t.greedy_action(node))

    def greedy_table(self) -> dict:
        """Snapshot of the greedy policy at every internal node where it is not action 0."""
        arr = self._t.export()
        Q = arr["Q"]
        best = np.argmax(Q, axis=1) if len(Q) else np.zeros(0, dtype=int)
        table = {}
        for node in np.flatnonzero(best != 0):
            if not self._t.is_leaf(int(node)):
                table[self._key(int(node), arr)] = int(best[node])
        return table


def _check_weight(w: float) -> float:
    w = float(w)
    if not math.isfinite(w) or w < 0:
        raise WeightError(f"simulation weight must be finite and nonnegative, got {w}")
    return w


def simulate(tree: SearchTree, problem: BamdpProblem, h: History, model_index: int, w: float,
             rng: np.random.Generator, uniforms: Optional[np.ndarray] = None) -> float:
    """Weighted exhaustive simulation of every action sequence below ``h`` on one model.

    Returns the sampled return of the path that is greedy with respect to the
    tree's Q values. ``uniforms`` may supply the random stream directly;
    otherwise ``tree.draws_per_simulation`` uniforms are drawn from ``rng``.
    """
    i = problem.check_model(model_index)
    w = _check_weight(w)
    node = tree._require(h)
    if uniforms is None:
        uniforms = rng.random(tree.draws_per_simulation)
    return tree.raw.simulate(i, w, np.ascontiguousarray(uniforms, dtype=float), node)


def compute_q_values(tree: SearchTree, problem: Optional[BamdpProblem] = None,
                     h: Optional[History] = None) -> float:
    """Recompute Q and V below ``h`` by DP on the weight-ratio transition estimates."""
    if tree.mode != "F":
        raise RamcpError("compute_q_values applies to full-recomputation (F) trees")
    node = 0 if h is None else tree._require(h)
    v = tree.raw.compute_q_values(node)
    if tree.raw.zero_weight_actions and not tree._warned_zero_weight:
        log.warning("%d expanded actions carry zero weight; their Q is set to 0",
                    tree.raw.zero_weight_actions)
        tree._warned_zero_weight = True
    return v


def avg_action(tree: SearchTree, h: History, rng: np.random.Generator) -> int:
    """Sample an action with probability proportional to W_br(h, a)."""
    return _pick(tree.avg_action_probs(h), rng.random())


@dataclass(frozen=True)
class EstimatorCheck:
    est_weighted: float
    est_direct: float
    se_weighted: float
    se_direct: float

    @property
    def gap(self) -> float:
        return abs(self.est_weighted - self.est_direct)

    @property
    def pooled_se(self) -> float:
        return math.hypot(self.se_weighted, self.se_direct)


def _incremental_root_estimate(problem, sample_dist, weights, n, rng, action, backend, chunk=2048):
    tree = SearchTree(problem, mode="I", backend=backend)
    D = tree.draws_per_simulation
    models = rng.choice(problem.num_models, size=n, p=sample_dist)
    samples = np.empty(n)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        block = rng.random((m, D))
        for j in range(m):
            i = int(models[done + j])
            w = float(weights[i])
            tree.raw.simulate(i, w, block[j], 0)
            samples[done + j] = w * tree.raw.last_root_q()[action]
        done += m
    q_hat = float(tree.raw.export()["Q"][0, action])
    return q_hat, float(samples.std(ddof=1) / math.sqrt(n)), samples


def weighted_value_estimator_check(problem: BamdpProblem, p, q, n_samples: int,
                                   rng: np.random.Generator, action: int = 0,
                                   backend: Optional[str] = None) -> EstimatorCheck:
    """Compare importance-weighted and direct incremental Q estimates at the root.

    One incremental tree samples models from ``q`` and weights each
    simulation by ``p/q``; another samples from ``p`` with unit weights.
    Both estimate the root Q value of ``action`` under target belief ``p``.
    """
    M = problem.num_models
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (M,) or q.shape != (M,):
        raise ProblemError("p and q must be beliefs over the problem's models")
    if np.any((p > 0) & (q <= 0)):
        raise ProblemError("target belief p is not absolutely continuous w.r.t. proposal q")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    ratio = np.divide(p, q, out=np.zeros(M), where=q > 0)
    est_w, se_w, _ = _incremental_root_estimate(problem, q, ratio, n_samples, rng, action, backend)
    est_d, se_d, _ = _incremental_root_estimate(problem, p, np.ones(M), n_samples, rng, action, backend)
    return EstimatorCheck(est_w, est_d, se_w, se_d)
