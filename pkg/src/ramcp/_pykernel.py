"""Pure-Python search-tree kernel.

Reference implementation of the hot loops; ``_ckernel.pyx`` mirrors it
operation for operation so both produce identical floats from identical
uniform streams.

Storage is an arena: node ``n`` owns action slots ``n*A .. n*A+A-1`` and each
slot owns a singly linked list of edges (one per observed successor state),
kept in insertion order. With ``merge_by_state`` the child of an edge is the
unique node for ``(depth, state)`` instead of a fresh history node.
"""
import math

import numpy as np

from .errors import PolicyUndefinedError

BACKEND = "python"


class Tree:
    def __init__(self, succ, cdf, nsucc, rewards, terminal, horizon, root_state,
                 incremental=False, merge_by_state=False, gamma=0.0):
        succ = np.asarray(succ)
        cdf = np.asarray(cdf)
        nsucc = np.asarray(nsucc)
        self.M, self.S, self.A = nsucc.shape
        self.H = int(horizon)
        self.incremental = bool(incremental)
        self.merge = bool(merge_by_state)
        self.gamma = float(gamma)
        if self.merge and self.gamma > 0:
            raise ValueError("utility transform needs history-keyed nodes")
        self._succ = [[[succ[i, s, a, : nsucc[i, s, a]].tolist() for a in range(self.A)]
                       for s in range(self.S)] for i in range(self.M)]
        self._cdf = [[[cdf[i, s, a, : nsucc[i, s, a]].tolist() for a in range(self.A)]
                      for s in range(self.S)] for i in range(self.M)]
        self._R = np.asarray(rewards, dtype=float).tolist()
        self._term = [bool(x) for x in np.asarray(terminal)]
        # nodes
        self.depth, self.state, self.parent, self.parent_action = [], [], [], []
        self.N, self.W, self.V, self.acc = [], [], [], []
        # action slots
        self.Na, self.Wa, self.Wbr, self.Q, self.head, self.tail = [], [], [], [], [], []
        # edges
        self.e_state, self.e_child, self.e_W, self.e_next = [], [], [], []
        self._merged = {}
        self._stamp = []
        self._gen = 0
        self._scratch = [[0.0] * self.A for _ in range(self.H + 1)]
        self._u = None
        self._pos = 0
        self.zero_weight_actions = 0
        self._new_node(0, int(root_state), -1, -1, 0.0)

    # --- structure -----------------------------------------------------------

    @property
    def num_nodes(self):
        return len(self.N)

    @property
    def num_edges(self):
        return len(self.e_W)

    def _new_node(self, d, s, parent, action, acc):
        n = len(self.N)
        self.depth.append(d)
        self.state.append(s)
        self.parent.append(parent)
        self.parent_action.append(action)
        self.N.append(0)
        self.W.append(0.0)
        self.V.append(0.0)
        self.acc.append(acc)
        self._stamp.append(0)
        A = self.A
        self.Na.extend([0] * A)
        self.Wa.extend([0.0] * A)
        self.Wbr.extend([0.0] * A)
        self.Q.extend([0.0] * A)
        self.head.extend([-1] * A)
        self.tail.extend([-1] * A)
        if self.merge:
            self._merged[(d, s)] = n
        return n

    def find_edge(self, node, a, s2):
        e = self.head[node * self.A + a]
        while e >= 0:
            if self.e_state[e] == s2:
                return e
            e = self.e_next[e]
        return -1

    def find_child(self, node, a, s2):
        e = self.find_edge(node, a, s2)
        return self.e_child[e] if e >= 0 else -1

    def _edge(self, node, a, s2, r):
        e = self.find_edge(node, a, s2)
        if e >= 0:
            return e
        d = self.depth[node] + 1
        child = -1
        if self.merge:
            child = self._merged.get((d, s2), -1)
        if child < 0:
            child = self._new_node(d, s2, node, a, self.acc[node] + r)
        e = len(self.e_W)
        self.e_state.append(s2)
        self.e_child.append(child)
        self.e_W.append(0.0)
        self.e_next.append(-1)
        i = node * self.A + a
        if self.tail[i] < 0:
            self.head[i] = e
        else:
            self.e_next[self.tail[i]] = e
        self.tail[i] = e
        return e

    def is_leaf(self, node):
        return self.depth[node] >= self.H or self._term[self.state[node]]

    def _leaf_value(self, node_acc):
        if self.gamma > 0:
            return -math.exp(-self.gamma * node_acc)
        return 0.0

    def _draw(self, model, s, a, u):
        row = self._cdf[model][s][a]
        succ = self._succ[model][s][a]
        for k in range(len(row)):
            if u < row[k]:
                return succ[k]
        return succ[-1]

    def greedy_action(self, node):
        return self._argmax_q(node * self.A)

    def _argmax_q(self, base):
        best = 0
        bq = self.Q[base]
        for a in range(1, self.A):
            if self.Q[base + a] > bq:
                bq = self.Q[base + a]
                best = a
        return best

    # --- Simulate ------------------------------------------------------------

    def simulate(self, model, w, uniforms, node=0):
        """One exhaustive weighted simulation from ``node``; returns V_br."""
        self._u = uniforms
        self._pos = 0
        return self._simulate(node, int(model), float(w), self.acc[node])

    def _simulate(self, node, model, w, acc):
        self.N[node] += 1
        self.W[node] += w
        d = self.depth[node]
        s = self.state[node]
        if d >= self.H or self._term[s]:
            return self._leaf_value(acc)
        A = self.A
        base = node * A
        scratch = self._scratch[d]
        utility = self.gamma > 0
        Rs = self._R[s]
        for a in range(A):
            i = base + a
            self.Na[i] += 1
            self.Wa[i] += w
            u = self._u[self._pos]
            self._pos += 1
            s2 = self._draw(model, s, a, u)
            r = Rs[a][s2]
            e = self._edge(node, a, s2, r)
            self.e_W[e] += w
            v = self._simulate(self.e_child[e], model, w, acc + r)
            q = v if utility else r + v
            scratch[a] = q
            if self.incremental:
                self.Q[i] += (w * q - self.Q[i]) / self.Na[i]
        best = self._argmax_q(base)
        vbr = scratch[best]
        self.Wbr[base + best] += w
        if self.incremental:
            self.V[node] += (w * vbr - self.V[node]) / self.N[node]
        return vbr

    def last_root_q(self):
        """Per-action sampled returns from the most recent root simulation."""
        return list(self._scratch[0])

    # --- ComputeQValues ------------------------------------------------------

    def compute_q_values(self, node=0):
        """Dynamic programming over the empirical (weight-ratio) transitions."""
        self._gen += 1
        self.zero_weight_actions = 0
        return self._cq(node)

    def _cq(self, node):
        if self._stamp[node] == self._gen:
            return self.V[node]
        self._stamp[node] = self._gen
        if self.is_leaf(node):
            self.V[node] = self._leaf_value(self.acc[node])
            return self.V[node]
        A = self.A
        base = node * A
        utility = self.gamma > 0
        Rs = self._R[self.state[node]]
        for a in range(A):
            i = base + a
            e = self.head[i]
            if self.Wa[i] <= 0.0:
                # unvisited under every weight; children still refreshed
                while e >= 0:
                    self._cq(self.e_child[e])
                    e = self.e_next[e]
                self.Q[i] = 0.0
                if self.Na[i] > 0:
                    self.zero_weight_actions += 1
                continue
            tot = 0.0
            while e >= 0:
                vc = self._cq(self.e_child[e])
                r = 0.0 if utility else Rs[a][self.e_state[e]]
                tot += self.e_W[e] * (r + vc)
                e = self.e_next[e]
            self.Q[i] = tot / self.Wa[i]
        v = self.Q[base]
        for a in range(1, A):
            if self.Q[base + a] > v:
                v = self.Q[base + a]
        self.V[node] = v
        return v

    # --- policy rollouts -----------------------------------------------------

    def rollouts(self, model, n, uniforms, strict=True):
        """Episodes following the W_br-proportional policy stored in the tree.

        Consumes exactly ``2 * H`` uniforms per episode. Where the tree has no
        usable W_br mass, ``strict`` raises; otherwise the greedy action under
        Q is used (action 0 outside the tree) and counted.
        """
        model = int(model)
        A, H = self.A, self.H
        out = np.empty(int(n))
        fallbacks = 0
        root_state = self.state[0]
        for k in range(int(n)):
            node = 0
            s = root_state
            J = 0.0
            path = [s]
            start = k * 2 * H
            for t in range(H):
                if self._term[s]:
                    break
                u = uniforms[start + 2 * t]
                a = -1
                if node >= 0:
                    base = node * A
                    tot = 0.0
                    for b in range(A):
                        tot += self.Wbr[base + b]
                    if tot > 0.0:
                        target = u * tot
                        cum = 0.0
                        last = -1
                        for b in range(A):
                            wb = self.Wbr[base + b]
                            if wb > 0.0:
                                cum += wb
                                last = b
                                if target < cum:
                                    a = b
                                    break
                        if a < 0:
                            a = last
                if a < 0:
                    if strict:
                        raise PolicyUndefinedError(path, "no averaged-policy mass")
                    fallbacks += 1
                    a = self._argmax_q(node * A) if node >= 0 else 0
                s2 = self._draw(model, s, a, uniforms[start + 2 * t + 1])
                J += self._R[s][a][s2]
                node = self.find_child(node, a, s2) if node >= 0 else -1
                path += [a, s2]
                s = s2
            out[k] = J
        return out, fallbacks

    # --- export ----------------------------------------------------------------

    def export(self):
        """Copies of all arena arrays as numpy arrays."""
        A = self.A
        n = self.num_nodes
        return {
            "depth": np.array(self.depth, dtype=np.int64),
            "state": np.array(self.state, dtype=np.int64),
            "parent": np.array(self.parent, dtype=np.int64),
            "parent_action": np.array(self.parent_action, dtype=np.int64),
            "N": np.array(self.N, dtype=np.int64),
            "W": np.array(self.W, dtype=float),
            "V": np.array(self.V, dtype=float),
            "acc": np.array(self.acc, dtype=float),
            "Na": np.array(self.Na, dtype=np.int64).reshape(n, A),
            "Wa": np.array(self.Wa, dtype=float).reshape(n, A),
            "Wbr": np.array(self.Wbr, dtype=float).reshape(n, A),
            "Q": np.array(self.Q, dtype=float).reshape(n, A),
            "head": np.array(self.head, dtype=np.int64).reshape(n, A),
            "e_state": np.array(self.e_state, dtype=np.int64),
            "e_child": np.array(self.e_child, dtype=np.int64),
            "e_W": np.array(self.e_W, dtype=float),
            "e_next": np.array(self.e_next, dtype=np.int64),
        }
