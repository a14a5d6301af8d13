"""Checked-in reference data: exact bandit constants and the canonical patient profiles."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Dict

from .environments import PATIENT_SEED, build_bandit, patient_fixture_document
from .oracle import bandit_oracle_constants, exact_policy_value

ORACLE_FILE = "oracle_fixtures.json"
PATIENT_FILE = "patient_profiles.json"

# Tolerances the acceptance suite applies when comparing search output to these constants.
TOLERANCES = {"risk_neutral_value": 0.02, "nash_value": 0.03, "fictitious_play_agreement": 1e-3}


def _explore_then_exploit_values() -> list:
    """Values of "pull arm 1, then arm 3" on each model (hand-checkable)."""
    problem = build_bandit()

    def policy(h):
        # second decision point is the history of length 5: (s0, a, r, a, s0)
        return 2 if len(h) == 5 else 0

    return [exact_policy_value(problem, policy, i) for i in range(problem.num_models)]


def oracle_document() -> dict:
    doc = {"schema": "ramcp.oracle_fixtures/1", "environment": "bandit",
           "tolerances": TOLERANCES, "patient_seed": PATIENT_SEED,
           "a1_then_a3": _explore_then_exploit_values()}
    doc.update(bandit_oracle_constants())
    return doc


def fixture_files() -> Dict[str, str]:
    dump = lambda d: json.dumps(d, indent=2, sort_keys=True) + "\n"  # noqa: E731
    return {ORACLE_FILE: dump(oracle_document()), PATIENT_FILE: dump(patient_fixture_document())}


def packaged_fixture_dir() -> Path:
    return Path(str(resources.files("ramcp").joinpath("data")))


def load_fixture(name: str) -> dict:
    return json.loads(resources.files("ramcp").joinpath("data", name).read_text(encoding="utf-8"))
