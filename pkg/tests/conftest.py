import numpy as np
import pytest

from ramcp._backend import KERNELS
from ramcp.environments import build_bandit, build_patient
from ramcp.problem import BamdpProblem

BACKENDS = sorted(KERNELS)


@pytest.fixture(scope="session")
def bandit():
    return build_bandit()


@pytest.fixture(scope="session")
def patient():
    return build_patient()


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def chain_problem(rewards=(1.0,), horizon=1, models=1, prior=None):
    """Deterministic chain: state t moves to t+1 with reward rewards[t] whatever the action."""
    S = horizon + 1
    A = len(rewards) if horizon == 1 else 1
    T = np.zeros((models, S, A, S))
    R = np.zeros((S, A, S))
    for s in range(S):
        T[:, s, :, min(s + 1, S - 1)] = 1.0
    for s in range(horizon):
        R[s, :, s + 1] = rewards[s] if horizon > 1 else rewards
    prior = np.full(models, 1.0 / models) if prior is None else prior
    return BamdpProblem(T, R, prior, horizon)


def random_problem(rng, M=2, S=4, A=2, H=3, terminal=()):
    T = rng.random((M, S, A, S)) * (rng.random((M, S, A, S)) < 0.6)
    T[..., 0] += 0.05
    T /= T.sum(axis=3, keepdims=True)
    R = rng.normal(size=(S, A, S)).round(2)
    prior = rng.dirichlet(np.ones(M))
    prior[-1] = 1.0 - prior[:-1].sum()
    return BamdpProblem(T, R, prior, H, terminal_states=frozenset(terminal))
