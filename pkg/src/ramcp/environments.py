"""Benchmark problems: the two-model n-pull bandit and the patient-treatment family."""
from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .problem import BamdpProblem

# Rewards of the six reward states, in column order.
BANDIT_REWARDS = (-1.0, -0.5, -0.1, 0.0, 0.5, 1.0)

# BANDIT_TABLE[model][action] = P(reward column | action, model)
BANDIT_TABLE = (
    (
        (0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
        (0.0, 0.0, 0.0, 0.0, 1.0, 0.0),
        (0.2, 0.0, 0.0, 0.0, 0.0, 0.8),
        (0.8, 0.0, 0.0, 0.0, 0.0, 0.2),
    ),
    (
        (0.0, 0.0, 0.0, 1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0, 0.0, 0.0, 0.0),
        (0.8, 0.0, 0.0, 0.0, 0.0, 0.2),
        (0.2, 0.0, 0.0, 0.0, 0.0, 0.8),
    ),
)
BANDIT_PRIOR = (0.6, 0.4)
DECISION_STATE = 0


def bandit_reward_state(reward: float) -> int:
    """State index of the reward state paying ``reward`` on entry."""
    return 1 + BANDIT_REWARDS.index(reward)


def build_bandit(pulls: int = 2, prior=BANDIT_PRIOR) -> BamdpProblem:
    """The 4-armed, 2-model bandit as an MDP.

    State 0 is the decision state; states 1..6 are reward states entered with
    the corresponding reward. Every action in a reward state returns to the
    decision state with reward 0, so one pull takes two MDP steps and the
    horizon is ``2 * pulls``.
    """
    S, A = 1 + len(BANDIT_REWARDS), 4
    T = np.zeros((2, S, A, S))
    for i, rows in enumerate(BANDIT_TABLE):
        for a, row in enumerate(rows):
            T[i, DECISION_STATE, a, 1:] = row
        T[i, 1:, :, DECISION_STATE] = 1.0
    R = np.zeros((S, A, S))
    R[DECISION_STATE, :, 1:] = BANDIT_REWARDS
    return BamdpProblem(T, R, np.array(prior, dtype=float), horizon=2 * pulls,
                        initial_state=DECISION_STATE, name="bandit")


# --- patient treatment --------------------------------------------------------

PATIENT_SEED = 1
PATIENT_STATES = 20
PATIENT_START = 3
PATIENT_HORIZON = 4
PATIENT_PROFILES = 15
PATIENT_ACTIONS = 3
DELTAS = tuple(range(-3, 4))
NOISE_SD = 0.1


def patient_prior(num_profiles: int = PATIENT_PROFILES) -> np.ndarray:
    """0.25 on the first profile, the rest split evenly."""
    rest = 0.75 / (num_profiles - 1)
    prior = np.full(num_profiles, rest)
    prior[0] = 0.25
    # fold the rounding residue into the first entry so the sum is exactly 1
    prior[0] += 1.0 - prior.sum()
    return prior


def generate_patient_profiles(seed: int = PATIENT_SEED,
                              num_profiles: int = PATIENT_PROFILES) -> np.ndarray:
    """Response profiles of shape (profiles, actions, 7) over health changes -3..3.

    Each action's row is a randomly chosen identity row plus N(0, 0.1) noise,
    clipped at zero and renormalized.
    """
    rng = np.random.default_rng(seed)
    eye = np.eye(len(DELTAS))
    profiles = np.empty((num_profiles, PATIENT_ACTIONS, len(DELTAS)))
    for p in range(num_profiles):
        rows = rng.integers(0, len(DELTAS), size=PATIENT_ACTIONS)
        m = eye[rows] + rng.normal(0.0, NOISE_SD, size=(PATIENT_ACTIONS, len(DELTAS)))
        m = np.clip(m, 0.0, None)
        sums = m.sum(axis=1, keepdims=True)
        m = np.where(sums > 0, m / np.where(sums > 0, sums, 1.0), eye[rows])
        profiles[p] = m
    return profiles


def patient_reward(s2: int) -> float:
    return s2 / 20.0 - (2.0 if s2 == 0 else 0.0)


def patient_from_profiles(profiles, prior=None, horizon: int = PATIENT_HORIZON) -> BamdpProblem:
    profiles = np.asarray(profiles, dtype=float)
    M = profiles.shape[0]
    S, A = PATIENT_STATES, profiles.shape[1]
    T = np.zeros((M, S, A, S))
    for i in range(M):
        for s in range(1, S):
            for a in range(A):
                for k, d in enumerate(DELTAS):
                    T[i, s, a, min(max(s + d, 0), S - 1)] += profiles[i, a, k]
        T[i, 0, :, 0] = 1.0  # death is absorbing
    T /= T.sum(axis=3, keepdims=True)
    R = np.zeros((S, A, S))
    for s2 in range(S):
        R[:, :, s2] = patient_reward(s2)
    if prior is None:
        prior = patient_prior(M)
    return BamdpProblem(T, R, prior, horizon=horizon, initial_state=PATIENT_START,
                        terminal_states=frozenset({0}), name="patient")


def build_patient(seed: int = PATIENT_SEED, horizon: int = PATIENT_HORIZON) -> BamdpProblem:
    """Patient-treatment problem: 20 health levels, 3 treatments, 15 profiles."""
    return patient_from_profiles(generate_patient_profiles(seed), horizon=horizon)


def load_patient_fixture() -> dict:
    """The checked-in profile matrices generated from :data:`PATIENT_SEED`."""
    text = resources.files("ramcp").joinpath("data/patient_profiles.json").read_text()
    return json.loads(text)


def patient_fixture_document(seed: int = PATIENT_SEED) -> dict:
    return {
        "schema": "ramcp.patient_profiles/1",
        "seed": seed,
        "deltas": list(DELTAS),
        "noise_sd": NOISE_SD,
        "prior": patient_prior().tolist(),
        "profiles": generate_patient_profiles(seed).tolist(),
    }


ENVIRONMENTS = {"bandit": build_bandit, "patient": build_patient}
