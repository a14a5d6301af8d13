# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled search-tree kernel.

Operation-for-operation port of ``_pykernel.Tree``; see that module for the
storage layout. Floating-point expressions are evaluated in the same order so
the two backends agree bit for bit on identical uniform streams.
"""
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memset
from libc.math cimport exp

import numpy as np
cimport numpy as cnp

from .errors import PolicyUndefinedError

cnp.import_array()

BACKEND = "cython"


cdef void* _grow(void* p, size_t nbytes) except NULL:
    cdef void* q = realloc(p, nbytes)
    if q == NULL:
        raise MemoryError()
    return q


cdef class Tree:
    cdef readonly int M, S, A, H, K
    cdef readonly bint incremental, merge
    cdef readonly double gamma
    cdef readonly long zero_weight_actions

    cdef int* succ
    cdef double* cdf
    cdef int* nsucc
    cdef double* R
    cdef unsigned char* term

    cdef int n_nodes, cap_nodes, n_edges, cap_edges
    cdef int* depth_
    cdef int* state_
    cdef int* parent_
    cdef int* paction_
    cdef long long* N
    cdef double* W
    cdef double* V
    cdef double* acc
    cdef unsigned int* stamp
    cdef long long* Na
    cdef double* Wa
    cdef double* Wbr
    cdef double* Q
    cdef int* head
    cdef int* tail
    cdef int* e_state
    cdef int* e_child
    cdef int* e_next
    cdef double* e_W
    cdef int* merged
    cdef double* scratch
    cdef unsigned int gen

    cdef const double* u
    cdef Py_ssize_t pos, ulen

    def __cinit__(self):
        self.succ = NULL
        self.cdf = NULL
        self.nsucc = NULL
        self.R = NULL
        self.term = NULL
        self.depth_ = NULL
        self.state_ = NULL
        self.parent_ = NULL
        self.paction_ = NULL
        self.N = NULL
        self.W = NULL
        self.V = NULL
        self.acc = NULL
        self.stamp = NULL
        self.Na = NULL
        self.Wa = NULL
        self.Wbr = NULL
        self.Q = NULL
        self.head = NULL
        self.tail = NULL
        self.e_state = NULL
        self.e_child = NULL
        self.e_next = NULL
        self.e_W = NULL
        self.merged = NULL
        self.scratch = NULL

    def __init__(self, succ, cdf, nsucc, rewards, terminal, horizon, root_state,
                 incremental=False, merge_by_state=False, gamma=0.0):
        cdef cnp.ndarray[cnp.int32_t, ndim=4, mode="c"] succ_a = np.ascontiguousarray(succ, dtype=np.int32)
        cdef cnp.ndarray[cnp.float64_t, ndim=4, mode="c"] cdf_a = np.ascontiguousarray(cdf, dtype=np.float64)
        cdef cnp.ndarray[cnp.int32_t, ndim=3, mode="c"] nsucc_a = np.ascontiguousarray(nsucc, dtype=np.int32)
        cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] R_a = np.ascontiguousarray(rewards, dtype=np.float64)
        cdef cnp.ndarray[cnp.uint8_t, ndim=1, mode="c"] term_a = np.ascontiguousarray(terminal, dtype=np.uint8)
        cdef Py_ssize_t i, n
        self.M = nsucc_a.shape[0]
        self.S = nsucc_a.shape[1]
        self.A = nsucc_a.shape[2]
        self.K = succ_a.shape[3]
        self.H = horizon
        self.incremental = incremental
        self.merge = merge_by_state
        self.gamma = gamma
        if self.merge and self.gamma > 0:
            raise ValueError("utility transform needs history-keyed nodes")
        n = self.M * self.S * self.A * self.K
        self.succ = <int*>_grow(NULL, n * sizeof(int))
        self.cdf = <double*>_grow(NULL, n * sizeof(double))
        for i in range(n):
            self.succ[i] = (<int*>succ_a.data)[i]
            self.cdf[i] = (<double*>cdf_a.data)[i]
        n = self.M * self.S * self.A
        self.nsucc = <int*>_grow(NULL, n * sizeof(int))
        for i in range(n):
            self.nsucc[i] = (<int*>nsucc_a.data)[i]
        n = self.S * self.A * self.S
        self.R = <double*>_grow(NULL, n * sizeof(double))
        for i in range(n):
            self.R[i] = (<double*>R_a.data)[i]
        self.term = <unsigned char*>_grow(NULL, self.S)
        for i in range(self.S):
            self.term[i] = term_a[i]
        self.merged = <int*>_grow(NULL, (self.H + 2) * self.S * sizeof(int))
        for i in range((self.H + 2) * self.S):
            self.merged[i] = -1
        self.scratch = <double*>_grow(NULL, (self.H + 1) * self.A * sizeof(double))
        memset(self.scratch, 0, (self.H + 1) * self.A * sizeof(double))
        self.n_nodes = 0
        self.cap_nodes = 0
        self.n_edges = 0
        self.cap_edges = 0
        self.gen = 0
        self.zero_weight_actions = 0
        self._reserve_nodes(64)
        self._reserve_edges(64)
        self._new_node(0, root_state, -1, -1, 0.0)

    def __dealloc__(self):
        free(self.succ); free(self.cdf); free(self.nsucc); free(self.R); free(self.term)
        free(self.depth_); free(self.state_); free(self.parent_); free(self.paction_)
        free(self.N); free(self.W); free(self.V); free(self.acc); free(self.stamp)
        free(self.Na); free(self.Wa); free(self.Wbr); free(self.Q); free(self.head); free(self.tail)
        free(self.e_state); free(self.e_child); free(self.e_next); free(self.e_W)
        free(self.merged); free(self.scratch)

    # --- structure -----------------------------------------------------------

    @property
    def num_nodes(self):
        return self.n_nodes

    @property
    def num_edges(self):
        return self.n_edges

    cdef int _reserve_nodes(self, int cap) except -1:
        cdef size_t c = cap
        cdef size_t ca = c * self.A
        self.depth_ = <int*>_grow(self.depth_, c * sizeof(int))
        self.state_ = <int*>_grow(self.state_, c * sizeof(int))
        self.parent_ = <int*>_grow(self.parent_, c * sizeof(int))
        self.paction_ = <int*>_grow(self.paction_, c * sizeof(int))
        self.N = <long long*>_grow(self.N, c * sizeof(long long))
        self.W = <double*>_grow(self.W, c * sizeof(double))
        self.V = <double*>_grow(self.V, c * sizeof(double))
        self.acc = <double*>_grow(self.acc, c * sizeof(double))
        self.stamp = <unsigned int*>_grow(self.stamp, c * sizeof(unsigned int))
        self.Na = <long long*>_grow(self.Na, ca * sizeof(long long))
        self.Wa = <double*>_grow(self.Wa, ca * sizeof(double))
        self.Wbr = <double*>_grow(self.Wbr, ca * sizeof(double))
        self.Q = <double*>_grow(self.Q, ca * sizeof(double))
        self.head = <int*>_grow(self.head, ca * sizeof(int))
        self.tail = <int*>_grow(self.tail, ca * sizeof(int))
        self.cap_nodes = cap
        return 0

    cdef int _reserve_edges(self, int cap) except -1:
        cdef size_t c = cap
        self.e_state = <int*>_grow(self.e_state, c * sizeof(int))
        self.e_child = <int*>_grow(self.e_child, c * sizeof(int))
        self.e_next = <int*>_grow(self.e_next, c * sizeof(int))
        self.e_W = <double*>_grow(self.e_W, c * sizeof(double))
        self.cap_edges = cap
        return 0

    cdef int _new_node(self, int d, int s, int parent, int action, double acc) except -1:
        cdef int n = self.n_nodes
        cdef int a, i
        if n >= self.cap_nodes:
            self._reserve_nodes(2 * self.cap_nodes)
        self.depth_[n] = d
        self.state_[n] = s
        self.parent_[n] = parent
        self.paction_[n] = action
        self.N[n] = 0
        self.W[n] = 0.0
        self.V[n] = 0.0
        self.acc[n] = acc
        self.stamp[n] = 0
        for a in range(self.A):
            i = n * self.A + a
            self.Na[i] = 0
            self.Wa[i] = 0.0
            self.Wbr[i] = 0.0
            self.Q[i] = 0.0
            self.head[i] = -1
            self.tail[i] = -1
        if self.merge:
            self.merged[d * self.S + s] = n
        self.n_nodes = n + 1
        return n

    cdef inline int _find_edge(self, int node, int a, int s2) noexcept:
        cdef int e = self.head[node * self.A + a]
        while e >= 0:
            if self.e_state[e] == s2:
                return e
            e = self.e_next[e]
        return -1

    def find_edge(self, int node, int a, int s2):
        return self._find_edge(node, a, s2)

    def find_child(self, int node, int a, int s2):
        cdef int e = self._find_edge(node, a, s2)
        return self.e_child[e] if e >= 0 else -1

    cdef int _edge(self, int node, int a, int s2, double r) except -1:
        cdef int e = self._find_edge(node, a, s2)
        cdef int d, child, i
        if e >= 0:
            return e
        d = self.depth_[node] + 1
        child = -1
        if self.merge:
            child = self.merged[d * self.S + s2]
        if child < 0:
            child = self._new_node(d, s2, node, a, self.acc[node] + r)
        if self.n_edges >= self.cap_edges:
            self._reserve_edges(2 * self.cap_edges)
        e = self.n_edges
        self.e_state[e] = s2
        self.e_child[e] = child
        self.e_W[e] = 0.0
        self.e_next[e] = -1
        i = node * self.A + a
        if self.tail[i] < 0:
            self.head[i] = e
        else:
            self.e_next[self.tail[i]] = e
        self.tail[i] = e
        self.n_edges = e + 1
        return e

    def is_leaf(self, int node):
        return self.depth_[node] >= self.H or self.term[self.state_[node]] != 0

    cdef inline double _leaf_value(self, double node_acc) noexcept:
        if self.gamma > 0:
            return -exp(-self.gamma * node_acc)
        return 0.0

    cdef inline int _draw(self, int model, int s, int a, double u) noexcept:
        cdef int row = (model * self.S + s) * self.A + a
        cdef int n = self.nsucc[row]
        cdef int base = row * self.K
        cdef int k
        for k in range(n):
            if u < self.cdf[base + k]:
                return self.succ[base + k]
        return self.succ[base + n - 1]

    cdef inline int _argmax_q(self, int base) noexcept:
        cdef int best = 0
        cdef double bq = self.Q[base]
        cdef int a
        for a in range(1, self.A):
            if self.Q[base + a] > bq:
                bq = self.Q[base + a]
                best = a
        return best

    def greedy_action(self, int node):
        return self._argmax_q(node * self.A)

    # --- Simulate ------------------------------------------------------------

    def simulate(self, int model, double w, const double[::1] uniforms, int node=0):
        """One exhaustive weighted simulation from ``node``; returns V_br."""
        if not 0 <= node < self.n_nodes:
            raise IndexError("node out of range")
        # an empty buffer is legal when nothing needs drawing (horizon 0); reads are bounds-checked
        self.u = &uniforms[0] if uniforms.shape[0] > 0 else NULL
        self.ulen = uniforms.shape[0]
        self.pos = 0
        try:
            return self._simulate(node, model, w, self.acc[node])
        finally:
            self.u = NULL

    cdef double _simulate(self, int node, int model, double w, double acc) except? -1.5e308:
        cdef int d, s, a, i, e, best, base
        cdef int A = self.A
        cdef int s2
        cdef double r, v, q, vbr
        cdef double* scratch
        cdef bint utility = self.gamma > 0
        self.N[node] += 1
        self.W[node] += w
        d = self.depth_[node]
        s = self.state_[node]
        if d >= self.H or self.term[s] != 0:
            return self._leaf_value(acc)
        base = node * A
        scratch = self.scratch + d * A
        for a in range(A):
            i = base + a
            self.Na[i] += 1
            self.Wa[i] += w
            if self.pos >= self.ulen:
                raise IndexError("uniform buffer exhausted")
            s2 = self._draw(model, s, a, self.u[self.pos])
            self.pos += 1
            r = self.R[(s * A + a) * self.S + s2]
            e = self._edge(node, a, s2, r)
            self.e_W[e] += w
            v = self._simulate(self.e_child[e], model, w, acc + r)
            if utility:
                q = v
            else:
                q = r + v
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
        return [self.scratch[a] for a in range(self.A)]

    # --- ComputeQValues ------------------------------------------------------

    def compute_q_values(self, int node=0):
        """Dynamic programming over the empirical (weight-ratio) transitions."""
        self.gen += 1
        self.zero_weight_actions = 0
        return self._cq(node)

    cdef double _cq(self, int node) noexcept:
        cdef int A = self.A
        cdef int base, a, i, e, s
        cdef double tot, vc, r, v
        cdef bint utility = self.gamma > 0
        if self.stamp[node] == self.gen:
            return self.V[node]
        self.stamp[node] = self.gen
        s = self.state_[node]
        if self.depth_[node] >= self.H or self.term[s] != 0:
            self.V[node] = self._leaf_value(self.acc[node])
            return self.V[node]
        base = node * A
        for a in range(A):
            i = base + a
            e = self.head[i]
            if self.Wa[i] <= 0.0:
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
                if utility:
                    r = 0.0
                else:
                    r = self.R[(s * A + a) * self.S + self.e_state[e]]
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

    def rollouts(self, int model, Py_ssize_t n, const double[::1] uniforms, bint strict=True):
        """Episodes following the W_br-proportional policy stored in the tree."""
        cdef int A = self.A, H = self.H
        cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
        cdef long fallbacks = 0
        cdef Py_ssize_t k, start
        cdef int t, node, s, a, b, last, base, s2, e
        cdef double J, u, tot, target, cum, wb
        if uniforms.shape[0] < n * 2 * H:
            raise IndexError("uniform buffer too short")
        for k in range(n):
            node = 0
            s = self.state_[0]
            J = 0.0
            start = k * 2 * H
            for t in range(H):
                if self.term[s] != 0:
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
                        raise PolicyUndefinedError(self._replay_path(model, uniforms, start, t),
                                                   "no averaged-policy mass")
                    fallbacks += 1
                    if node >= 0:
                        a = self._argmax_q(node * A)
                    else:
                        a = 0
                s2 = self._draw(model, s, a, uniforms[start + 2 * t + 1])
                J += self.R[(s * A + a) * self.S + s2]
                if node >= 0:
                    e = self._find_edge(node, a, s2)
                    node = self.e_child[e] if e >= 0 else -1
                s = s2
            out[k] = J
        return out, fallbacks

    cdef list _replay_path(self, int model, const double[::1] uniforms, Py_ssize_t start, int steps):
        # Reconstruct the history of a failing episode (strict mode only).
        cdef list path = [self.state_[0]]
        cdef int node = 0, s = self.state_[0], t, a, s2, e, b, last
        cdef double tot, target, cum
        for t in range(steps):
            base = node * self.A
            tot = 0.0
            for b in range(self.A):
                tot += self.Wbr[base + b]
            target = uniforms[start + 2 * t] * tot
            cum = 0.0
            a = -1
            last = -1
            for b in range(self.A):
                if self.Wbr[base + b] > 0.0:
                    cum += self.Wbr[base + b]
                    last = b
                    if target < cum:
                        a = b
                        break
            if a < 0:
                a = last
            s2 = self._draw(model, s, a, uniforms[start + 2 * t + 1])
            e = self._find_edge(node, a, s2)
            node = self.e_child[e]
            path += [a, s2]
            s = s2
        return path

    # --- export ----------------------------------------------------------------

    def export(self):
        """Copies of all arena arrays as numpy arrays."""
        cdef int n = self.n_nodes, m = self.n_edges, A = self.A
        cdef Py_ssize_t i
        out = {
            "depth": np.empty(n, dtype=np.int64),
            "state": np.empty(n, dtype=np.int64),
            "parent": np.empty(n, dtype=np.int64),
            "parent_action": np.empty(n, dtype=np.int64),
            "N": np.empty(n, dtype=np.int64),
            "W": np.empty(n, dtype=float),
            "V": np.empty(n, dtype=float),
            "acc": np.empty(n, dtype=float),
            "Na": np.empty(n * A, dtype=np.int64),
            "Wa": np.empty(n * A, dtype=float),
            "Wbr": np.empty(n * A, dtype=float),
            "Q": np.empty(n * A, dtype=float),
            "head": np.empty(n * A, dtype=np.int64),
            "e_state": np.empty(m, dtype=np.int64),
            "e_child": np.empty(m, dtype=np.int64),
            "e_W": np.empty(m, dtype=float),
            "e_next": np.empty(m, dtype=np.int64),
        }
        cdef cnp.int64_t[::1] depth = out["depth"], state = out["state"], parent = out["parent"]
        cdef cnp.int64_t[::1] paction = out["parent_action"], N = out["N"], Na = out["Na"], head = out["head"]
        cdef cnp.int64_t[::1] e_state = out["e_state"], e_child = out["e_child"], e_next = out["e_next"]
        cdef double[::1] W = out["W"], V = out["V"], acc = out["acc"], Wa = out["Wa"]
        cdef double[::1] Wbr = out["Wbr"], Q = out["Q"], e_W = out["e_W"]
        for i in range(n):
            depth[i] = self.depth_[i]
            state[i] = self.state_[i]
            parent[i] = self.parent_[i]
            paction[i] = self.paction_[i]
            N[i] = self.N[i]
            W[i] = self.W[i]
            V[i] = self.V[i]
            acc[i] = self.acc[i]
        for i in range(n * A):
            Na[i] = self.Na[i]
            Wa[i] = self.Wa[i]
            Wbr[i] = self.Wbr[i]
            Q[i] = self.Q[i]
            head[i] = self.head[i]
        for i in range(m):
            e_state[i] = self.e_state[i]
            e_child[i] = self.e_child[i]
            e_W[i] = self.e_W[i]
            e_next[i] = self.e_next[i]
        for key in ("Na", "Wa", "Wbr", "Q", "head"):
            out[key] = out[key].reshape(n, A)
        return out
