"""Polytopic risk envelopes and the adversary's best response.

A coherent risk metric over a finite set of models is a worst-case
expectation ``min_{zeta in B} sum_i prior_i * zeta_i * Z_i`` over a convex
set ``B`` of densities. The perturbed belief is ``b_adv = prior * zeta``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .errors import EnvelopeError, InfeasibleError, RamcpError, UnboundedError
from .problem import check_belief

KINDS = ("expectation", "worst_case", "cvar", "polytope")


@dataclass(frozen=True)
class LPSolution:
    x: np.ndarray
    objective: float
    duals_ub: Optional[np.ndarray] = None
    duals_eq: Optional[np.ndarray] = None


def simplex_solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=(0, None)) -> LPSolution:
    """Minimize ``c @ x`` subject to linear constraints (default ``x >= 0``).

    Uses the HiGHS dual simplex, so the returned point is a vertex. Raises
    :class:`InfeasibleError` or :class:`UnboundedError` accordingly.
    """
    res = linprog(
        np.asarray(c, dtype=float), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
        bounds=bounds, method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        raise InfeasibleError(res.message)
    if res.status == 3:
        raise UnboundedError(res.message)
    if res.status != 0:
        raise RamcpError(f"LP solver failed: {res.message}")
    duals_ub = np.asarray(res.ineqlin.marginals) if A_ub is not None else None
    duals_eq = np.asarray(res.eqlin.marginals) if A_eq is not None else None
    return LPSolution(np.asarray(res.x), float(res.fun), duals_ub, duals_eq)


@dataclass(frozen=True, eq=False)
class RiskEnvelope:
    """Density set ``B`` around a base belief.

    ``cvar`` with level ``alpha`` is ``{0 <= zeta <= 1/alpha}``; ``expectation``
    is CVaR at 1, ``worst_case`` its alpha -> 0 limit, and ``polytope`` adds
    ``A @ zeta <= c`` to the density constraint.
    """

    kind: str
    base: np.ndarray
    alpha: Optional[float] = None
    A: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EnvelopeError(f"unknown envelope kind {self.kind!r}")
        base = check_belief(self.base)
        base.flags.writeable = False
        object.__setattr__(self, "base", base)
        if self.kind == "cvar":
            if self.alpha is None or not (0.0 < float(self.alpha) <= 1.0):
                raise EnvelopeError(f"CVaR level must lie in (0, 1], got {self.alpha}")
            object.__setattr__(self, "alpha", float(self.alpha))
        if self.kind == "polytope":
            A = np.atleast_2d(np.asarray(self.A, dtype=float))
            c = np.atleast_1d(np.asarray(self.c, dtype=float))
            if A.shape != (c.shape[0], base.shape[0]):
                raise EnvelopeError(f"constraint matrix shape {A.shape} does not match")
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "c", c)
            try:
                simplex_solve(np.zeros(self.size), *self._lp_constraints())
            except InfeasibleError as exc:
                raise InfeasibleError(f"risk envelope is empty: {exc}") from exc

    @classmethod
    def cvar(cls, base, alpha: float) -> "RiskEnvelope":
        return cls("cvar", np.asarray(base, dtype=float), alpha=alpha)

    @classmethod
    def expectation(cls, base) -> "RiskEnvelope":
        return cls("expectation", np.asarray(base, dtype=float))

    @classmethod
    def worst_case(cls, base) -> "RiskEnvelope":
        return cls("worst_case", np.asarray(base, dtype=float))

    @classmethod
    def polytope(cls, base, A, c) -> "RiskEnvelope":
        return cls("polytope", np.asarray(base, dtype=float), A=A, c=c)

    @classmethod
    def from_metric(cls, metric: str, base, alpha: Optional[float] = None, **kw) -> "RiskEnvelope":
        metric = metric.lower().replace("-", "_")
        if metric in ("cvar", "cvar_alpha"):
            return cls.cvar(base, alpha)
        if metric in ("expectation", "mean", "risk_neutral"):
            return cls.expectation(base)
        if metric in ("worst_case", "worstcase", "min"):
            return cls.worst_case(base)
        if metric == "polytope":
            return cls.polytope(base, kw["A"], kw["c"])
        raise EnvelopeError(f"unknown risk metric {metric!r}")

    @property
    def size(self) -> int:
        return self.base.shape[0]

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "cvar":
            d["alpha"] = self.alpha
        if self.kind == "polytope":
            d["A"] = self.A.tolist()
            d["c"] = self.c.tolist()
        return d

    def _lp_constraints(self):
        """Constraints on zeta as (A_ub, b_ub, A_eq, b_eq, bounds)."""
        M = self.size
        A_eq = self.base[None, :]
        b_eq = np.ones(1)
        A_ub = b_ub = None
        bounds = [(0, None)] * M
        if self.kind == "cvar":
            bounds = [(0, 1.0 / self.alpha)] * M
        elif self.kind == "expectation":
            bounds = [(0, 1.0)] * M
        elif self.kind == "polytope":
            A_ub, b_ub = self.A, self.c
        return A_ub, b_ub, A_eq, b_eq, bounds

    def contains(self, zeta, tol: float = 1e-9) -> bool:
        zeta = np.asarray(zeta, dtype=float)
        A_ub, b_ub, A_eq, b_eq, bounds = self._lp_constraints()
        live = self.base > 0
        if np.any(zeta < -tol) or abs(float(A_eq[0] @ zeta) - 1.0) > tol:
            return False
        hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
        if np.any(zeta[live] > hi[live] + tol):
            return False
        if A_ub is not None and np.any(A_ub @ zeta > b_ub + tol):
            return False
        return True

    def belief_vertices(self, max_models: int = 16) -> np.ndarray:
        """Extreme points of the perturbed-belief set ``{prior * zeta}`` (CVaR family)."""
        if self.kind == "polytope":
            raise EnvelopeError("vertex enumeration is only provided for the CVaR family")
        live = np.flatnonzero(self.base > 0)
        if len(live) > max_models:
            raise EnvelopeError(f"too many models for vertex enumeration ({len(live)})")
        if self.kind == "expectation":
            return self.base[None, :].copy()
        if self.kind == "worst_case":
            return np.eye(self.size)[live]
        caps = self.base / self.alpha
        found = []
        for f in live:
            others = [i for i in live if i != f]
            for pattern in itertools.product((0, 1), repeat=len(others)):
                x = np.zeros(self.size)
                for i, on in zip(others, pattern):
                    x[i] = caps[i] if on else 0.0
                rest = 1.0 - x.sum()
                if -1e-12 <= rest <= caps[f] + 1e-12:
                    x[f] = min(max(rest, 0.0), caps[f])
                    if not any(np.allclose(x, y, atol=1e-12) for y in found):
                        found.append(x)
        return np.array(found)


@dataclass(frozen=True)
class AdversarialResponse:
    b_adv: np.ndarray
    zeta: np.ndarray
    objective_value: float


def _check_values(envelope: RiskEnvelope, values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != (envelope.size,):
        raise EnvelopeError(f"expected {envelope.size} values, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise EnvelopeError("values must be finite")
    return v


def _zeta_from_belief(base: np.ndarray, b_adv: np.ndarray) -> np.ndarray:
    zeta = np.ones_like(base)
    live = base > 0
    zeta[live] = b_adv[live] / base[live]
    return zeta


def cvar_belief(base: np.ndarray, values: np.ndarray, alpha: float) -> np.ndarray:
    """Greedy fill: cheapest models first, each up to ``prior_i / alpha``."""
    b_adv = np.zeros_like(base)
    live = [i for i in range(base.shape[0]) if base[i] > 0]
    order = sorted(live, key=lambda i: (values[i], i))
    remaining = 1.0
    for i in order:
        mass = min(base[i] / alpha, remaining)
        b_adv[i] = mass
        remaining -= mass
        if remaining <= 0.0:
            break
    return b_adv


def adversary_best_response(envelope: RiskEnvelope, values) -> AdversarialResponse:
    """Belief in the envelope minimizing the expected value of ``values``."""
    v = _check_values(envelope, values)
    base = envelope.base
    kind = envelope.kind
    if kind == "expectation" or (kind == "cvar" and envelope.alpha == 1.0):
        b_adv = base.copy()
    elif kind == "cvar":
        b_adv = cvar_belief(base, v, envelope.alpha)
    elif kind == "worst_case":
        live = np.flatnonzero(base > 0)
        b_adv = np.zeros_like(base)
        b_adv[live[np.argmin(v[live])]] = 1.0
    else:
        return _belief_space_lp(envelope, v)
    return AdversarialResponse(b_adv, _zeta_from_belief(base, b_adv), float(b_adv @ v))


def adversary_best_response_lp(envelope: RiskEnvelope, values) -> AdversarialResponse:
    """Same optimization solved as a dense LP (independent of the closed forms)."""
    return _belief_space_lp(envelope, _check_values(envelope, values))


def _belief_space_lp(envelope: RiskEnvelope, v: np.ndarray) -> AdversarialResponse:
    # Variables are b_adv = prior * zeta on live models and zeta itself on
    # zero-prior models. Tiny prior entries then become tiny bounds instead of
    # huge coefficients, which keeps the solver's tolerances meaningful.
    base = envelope.base
    A_env, b_env, _, _, bounds = envelope._lp_constraints()
    live = base > 0
    scale = np.where(live, base, 1.0)
    c = np.where(live, v, 0.0)
    A_eq = live[None, :].astype(float)
    lp_bounds = []
    for i, (lo, hi) in enumerate(bounds):
        if envelope.kind == "worst_case":
            hi = None
        lp_bounds.append((lo * scale[i], None if hi is None else hi * scale[i]))
    A_ub = None if A_env is None else A_env / scale[None, :]
    sol = simplex_solve(c, A_ub, b_env, A_eq, np.ones(1), lp_bounds)
    zeta = sol.x / scale
    b_adv = np.where(live, sol.x, 0.0)
    return AdversarialResponse(b_adv, zeta, float(b_adv @ v))


def risk_value(envelope: RiskEnvelope, values) -> float:
    """Risk-adjusted value ``min_{zeta in B} E_{prior*zeta}[values]``."""
    return adversary_best_response(envelope, values).objective_value


def tie_canonical(values, b_adv, tol: float = 1e-12) -> np.ndarray:
    """Pool belief mass within groups of (numerically) equal values.

    Any split of mass among tied models attains the same objective; pooling
    gives a representation on which two optimal answers must agree.
    """
    values = np.asarray(values, dtype=float)
    b_adv = np.asarray(b_adv, dtype=float)
    out = b_adv.copy()
    order = np.argsort(values, kind="stable")
    start = 0
    while start < len(order):
        end = start + 1
        while end < len(order) and values[order[end]] - values[order[start]] <= tol:
            end += 1
        group = order[start:end]
        out[group] = 0.0
        out[group[0]] = b_adv[group].sum()
        start = end
    return out
