"""Experiment runners: convergence traces, prior-shift robustness curves, patient study.

Every task draws its randomness from a seed sequence derived from
``(config seed, replicate, task key)``, so any single number in the output can
be regenerated in isolation and results do not depend on worker scheduling.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import exponential_utility_search, rmcp_search
from .driver import evaluate_all_models, search
from .envelope import RiskEnvelope, risk_value
from .environments import ENVIRONMENTS
from .errors import ConfigError
from .problem import BamdpProblem, load_problem

SCHEMA = "ramcp.run/1"
DEFAULT_BETAS = tuple(round(0.1 * j, 1) for j in range(1, 11))
METHODS = ("cvar", "exp", "rmcp")


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "robustness"
    env: str = "bandit"
    problem_file: Optional[str] = None
    alphas: Tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    gammas: Tuple[float, ...] = ()
    rmcp_alphas: Tuple[float, ...] = ()
    modes: Tuple[str, ...] = ("F",)
    budget: int = 10_000
    seed: int = 0
    replicates: int = 1
    n_rollouts: int = 2000
    betas: Tuple[float, ...] = DEFAULT_BETAS
    bootstrap: int = 2000
    strict_eval: bool = False
    save_traces: bool = True
    dump_trees: bool = False
    workers: int = 1
    backend: Optional[str] = None
    output: str = "runs"

    def validate(self) -> "RunConfig":
        if self.experiment not in ("converge", "robustness", "patient"):
            raise ConfigError(f"unknown experiment {self.experiment!r}", key="experiment")
        if self.problem_file is None and self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown environment {self.env!r}; choose from {sorted(ENVIRONMENTS)}",
                              key="env")
        if self.problem_file is not None and not Path(self.problem_file).is_file():
            raise ConfigError(f"problem file {self.problem_file!r} does not exist", key="problem_file")
        for key in ("alphas", "rmcp_alphas", "betas"):
            for x in getattr(self, key):
                if not (0.0 < x <= 1.0):
                    raise ConfigError(f"{key} entries must lie in (0, 1], got {x}", key=key)
        for g in self.gammas:
            if not g > 0:
                raise ConfigError(f"gammas entries must be positive, got {g}", key="gammas")
        for m in self.modes:
            if m not in ("F", "I"):
                raise ConfigError(f"modes entries must be 'F' or 'I', got {m!r}", key="modes")
        if not self.modes:
            raise ConfigError("at least one mode is required", key="modes")
        for key, low in (("budget", 1), ("replicates", 1), ("n_rollouts", 2), ("workers", 1),
                         ("bootstrap", 1)):
            if getattr(self, key) < low:
                raise ConfigError(f"{key} must be at least {low}", key=key)
        if not (self.alphas or self.gammas or self.rmcp_alphas):
            raise ConfigError("nothing to run: alphas, gammas and rmcp_alphas are all empty", key="alphas")
        if self.backend not in (None, "python", "cython"):
            raise ConfigError(f"unknown backend {self.backend!r}", key="backend")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


CONVERGE_DEFAULTS = dict(experiment="converge", alphas=(0.25, 0.5, 0.75, 1.0), modes=("F", "I"),
                         budget=10_000, replicates=1, n_rollouts=2000)
ROBUSTNESS_DEFAULTS = dict(experiment="robustness", alphas=(0.25, 0.5, 0.75, 1.0), modes=("F", "I"),
                           budget=10_000, replicates=50, n_rollouts=2000, save_traces=False)
PATIENT_DEFAULTS = dict(experiment="patient", env="patient", alphas=(0.2, 0.6, 1.0), gammas=(1.0,),
                        modes=("I",), budget=12_500, replicates=50, n_rollouts=1000,
                        save_traces=False)
DEFAULTS = {"converge": CONVERGE_DEFAULTS, "robustness": ROBUSTNESS_DEFAULTS,
            "patient": PATIENT_DEFAULTS}
FULL_PATIENT_REPLICATES = 500

DEFAULTS_NOTE = ("replicate counts, iteration budgets, rollout counts, the exponential-utility "
                 "gamma grid and the beta grid are this package's defaults, not published settings")


def make_config(experiment: str, **overrides) -> RunConfig:
    base = dict(DEFAULTS[experiment])
    base.update({k: v for k, v in overrides.items() if v is not None})
    for k in ("alphas", "gammas", "rmcp_alphas", "modes", "betas"):
        if k in base:
            base[k] = tuple(base[k])
    return RunConfig(**base).validate()


def build_problem(config: RunConfig) -> BamdpProblem:
    if config.problem_file is not None:
        return load_problem(config.problem_file)
    return ENVIRONMENTS[config.env]()


# --- tasks ---------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Task:
    method: str  # cvar | exp | rmcp
    param: float  # alpha for cvar/rmcp, gamma for exp
    mode: str
    replicate: int

    @property
    def label(self) -> str:
        return f"{self.method}-{self.param!r}-{self.mode}"

    @property
    def key(self) -> str:
        return f"{self.label}-r{self.replicate}"


def task_seeds(seed: int, task: Task) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent (search, evaluation) generators for one task."""
    ss = np.random.SeedSequence([int(seed), int(task.replicate), zlib.crc32(task.label.encode())])
    train, evaluate = ss.spawn(2)
    return np.random.default_rng(train), np.random.default_rng(evaluate)


def make_tasks(config: RunConfig) -> List[Task]:
    tasks = []
    for r in range(config.replicates):
        for mode in config.modes:
            tasks += [Task("cvar", float(a), mode, r) for a in config.alphas]
            tasks += [Task("exp", float(g), mode, r) for g in config.gammas]
            tasks += [Task("rmcp", float(a), mode, r) for a in config.rmcp_alphas]
    return sorted(tasks)


def _train(problem: BamdpProblem, task: Task, config: RunConfig, rng):
    if task.method == "cvar":
        env = RiskEnvelope.cvar(problem.prior, task.param)
        return search(problem, env, task.mode, config.budget, rng, backend=config.backend)
    if task.method == "exp":
        return exponential_utility_search(problem, task.param, task.mode, config.budget, rng,
                                          backend=config.backend)
    env = RiskEnvelope.cvar(problem.prior, task.param)
    return rmcp_search(problem, env, config.budget, rng, mode=task.mode, backend=config.backend)


def run_task(problem: BamdpProblem, config: RunConfig, task: Task, evaluate: bool = True) -> dict:
    train_rng, eval_rng = task_seeds(config.seed, task)
    result = _train(problem, task, config, train_rng)
    st = result.state
    out = {
        "task": task, "V_hat": st.V_hat.tolist(), "b_avg": st.b_avg.tolist(),
        "b_adv": st.b_adv.tolist(), "game_value": st.game_value,
        "prior_expected": st.prior_expected_value, "worst_model": st.worst_model_value(),
        "num_nodes": result.policy.tree.num_nodes,
        "trace": result.trace.to_csv() if config.save_traces else None,
        "tree": json_text(result.policy.tree.to_json()) if config.dump_trees else None,
    }
    if evaluate:
        evals = evaluate_all_models(problem, result.policy, config.n_rollouts, eval_rng,
                                    strict=config.strict_eval)
        out["eval_mean"] = [e.mean for e in evals]
        out["eval_ci90"] = [e.ci90 for e in evals]
        out["fallbacks"] = [e.fallbacks for e in evals]
    return out


def _worker(args):
    config, task, evaluate = args
    return run_task(build_problem(config), config, task, evaluate)


def run_tasks(config: RunConfig, tasks: Sequence[Task], evaluate: bool = True) -> List[dict]:
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_worker, [(config, t, evaluate) for t in tasks]))
    else:
        problem = build_problem(config)
        results = [run_task(problem, config, t, evaluate) for t in tasks]
    return sorted(results, key=lambda r: r["task"])


# --- output helpers --------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_files(outdir: Path, files: Dict[str, str]) -> List[Path]:
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(files):
        path = outdir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(files[name], encoding="utf-8")
        written.append(path)
    return written


def _metadata(config: RunConfig, problem: BamdpProblem, extra: dict) -> dict:
    from . import __version__

    meta = {"schema": SCHEMA, "version": __version__, "config": config.to_dict(),
            "problem": {"name": problem.name, "num_models": problem.num_models,
                        "num_states": problem.num_states, "num_actions": problem.num_actions,
                        "horizon": problem.horizon, "prior": problem.prior.tolist()},
            "defaults_note": DEFAULTS_NOTE}
    meta.update(extra)
    return meta


def _task_row(r: dict) -> list:
    t = r["task"]
    return [t.method, t.param, t.mode, t.replicate]


# --- convergence -------------------------------------------------------------------


SUMMARY_HEADER_BASE = ["method", "param", "mode", "replicate", "k", "game_value",
                       "prior_expected", "worst_model", "num_nodes"]


def convergence_files(config: RunConfig, problem: BamdpProblem, results: List[dict]) -> Dict[str, str]:
    M = problem.num_models
    header = (SUMMARY_HEADER_BASE + [f"V_hat[{i}]" for i in range(M)]
              + [f"b_avg[{i}]" for i in range(M)])
    rows = [_task_row(r) + [config.budget, r["game_value"], r["prior_expected"], r["worst_model"],
                            r["num_nodes"]] + r["V_hat"] + r["b_avg"] for r in results]
    files = {"summary.csv": csv_text(header, rows)}
    if config.save_traces:
        for r in results:
            files[f"traces/{r['task'].key}.csv"] = r["trace"]
    files.update(_tree_files(results))
    files["run.json"] = json_text(_metadata(config, problem, {"tasks": [r["task"].key for r in results]}))
    return files


def run_convergence(config: RunConfig, outdir: Optional[Path] = None) -> Dict[str, str]:
    """Belief and value traces per (alpha, mode, replicate)."""
    problem = build_problem(config)
    results = run_tasks(config, make_tasks(config), evaluate=False)
    files = convergence_files(config, problem, results)
    if outdir is not None:
        write_files(Path(outdir), files)
    return files


# --- robustness --------------------------------------------------------------------


def shifted_value(prior, values, beta: float) -> float:
    """Value when the model distribution may shift adversarially within CVaR_beta of the prior."""
    return risk_value(RiskEnvelope.cvar(prior, beta), values)


def bootstrap_ci(samples: np.ndarray, n_boot: int, rng: np.random.Generator,
                 level: float = 0.90) -> Tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        return float(x.mean()), float(x.mean())
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    means = x[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


@dataclass
class Curve:
    method: str
    param: float
    mode: str
    betas: List[float]
    values: np.ndarray  # (replicates, betas)

    @property
    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        n = self.values.shape[0]
        if n < 2:
            return np.zeros(self.values.shape[1])
        return self.values.std(axis=0, ddof=1) / math.sqrt(n)

    def at(self, beta: float) -> np.ndarray:
        return self.values[:, self.betas.index(beta)]


def robustness_curves(config: RunConfig, problem: BamdpProblem, results: List[dict]) -> List[Curve]:
    groups: Dict[tuple, List[dict]] = {}
    for r in results:
        t = r["task"]
        groups.setdefault((t.method, t.param, t.mode), []).append(r)
    curves = []
    for (method, param, mode), rs in sorted(groups.items()):
        vals = np.array([[shifted_value(problem.prior, r["eval_mean"], b) for b in config.betas]
                         for r in sorted(rs, key=lambda r: r["task"].replicate)])
        curves.append(Curve(method, param, mode, list(config.betas), vals))
    return curves


def _tree_files(results: List[dict]) -> Dict[str, str]:
    return {f"trees/{r['task'].key}.json": r["tree"] for r in results if r.get("tree")}


def robustness_files(config: RunConfig, problem: BamdpProblem, results: List[dict]) -> Dict[str, str]:
    M = problem.num_models
    model_rows = []
    for r in results:
        for i in range(M):
            model_rows.append(_task_row(r) + [i, r["eval_mean"][i], r["eval_ci90"][i],
                                              r["fallbacks"][i], r["V_hat"][i]])
    curves = robustness_curves(config, problem, results)
    point_rows, curve_rows = [], []
    for c in curves:
        # one bootstrap stream per curve keeps each curve's CI independent of the others
        brng = np.random.default_rng([int(config.seed), zlib.crc32(f"{c.method}-{c.param!r}-{c.mode}".encode())])
        for j, beta in enumerate(c.betas):
            col = c.values[:, j]
            lo, hi = bootstrap_ci(col, config.bootstrap, brng)
            curve_rows.append([c.method, c.param, c.mode, beta, len(col), float(col.mean()),
                               float(c.se[j]), lo, hi])
            for rep, v in enumerate(col):
                point_rows.append([c.method, c.param, c.mode, rep, beta, float(v)])
    summary_header = (SUMMARY_HEADER_BASE + [f"V_hat[{i}]" for i in range(M)]
                      + [f"b_avg[{i}]" for i in range(M)])
    summary_rows = [_task_row(r) + [config.budget, r["game_value"], r["prior_expected"],
                                    r["worst_model"], r["num_nodes"]] + r["V_hat"] + r["b_avg"]
                    for r in results]
    total_fallbacks = int(sum(sum(r["fallbacks"]) for r in results))
    files = _tree_files(results)
    if config.save_traces:
        files.update({f"traces/{r['task'].key}.csv": r["trace"] for r in results})
    return files | {
        "models.csv": csv_text(["method", "param", "mode", "replicate", "model", "eval_mean",
                                "eval_ci90", "fallbacks", "V_hat"], model_rows),
        "points.csv": csv_text(["method", "param", "mode", "replicate", "beta", "value"], point_rows),
        "curves.csv": csv_text(["method", "param", "mode", "beta", "n", "mean", "se",
                                "ci90_lo", "ci90_hi"], curve_rows),
        "summary.csv": csv_text(summary_header, summary_rows),
        "run.json": json_text(_metadata(config, problem, {
            "tasks": [r["task"].key for r in results],
            "evaluation_fallback_steps": total_fallbacks,
            "shift_model": "value under the worst model distribution within CVaR_beta of the prior",
        })),
    }


def run_robustness(config: RunConfig, outdir: Optional[Path] = None) -> Dict[str, str]:
    """Train per (method, parameter, mode, replicate), evaluate per model, sweep the shift level."""
    problem = build_problem(config)
    results = run_tasks(config, make_tasks(config), evaluate=True)
    files = robustness_files(config, problem, results)
    if outdir is not None:
        write_files(Path(outdir), files)
    return files


def run_patient(config: RunConfig, outdir: Optional[Path] = None) -> Dict[str, str]:
    """Robustness study on the patient-treatment problem (CVaR grid plus utility baseline)."""
    if config.problem_file is None and config.env != "patient":
        config = replace(config, env="patient")
    return run_robustness(config, outdir)


RUNNERS = {"converge": run_convergence, "robustness": run_robustness, "patient": run_patient}


def run(config: RunConfig, outdir: Optional[Path] = None) -> Dict[str, str]:
    return RUNNERS[config.experiment](config, outdir)


def read_curves(text: str) -> Dict[Tuple[str, float, str], Dict[float, dict]]:
    """Parse curves.csv back into {(method, param, mode): {beta: row}}."""
    out: Dict[Tuple[str, float, str], Dict[float, dict]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        key = (row["method"], float(row["param"]), row["mode"])
        out.setdefault(key, {})[float(row["beta"])] = {k: (v if k in ("method", "mode") else float(v))
                                                       for k, v in row.items()}
    return out


def output_root(default: str = "runs") -> Path:
    return Path(os.environ.get("RAMCP_OUTPUT_ROOT", default))
