import csv
import dataclasses
import io
import json

import numpy as np
import pytest

from ramcp import experiments as ex
from ramcp.errors import ConfigError
from ramcp.problem import save_problem


def small(experiment, **kw):
    base = dict(alphas=(0.5, 1.0), modes=("I",), budget=200, replicates=2, n_rollouts=100,
                bootstrap=50)
    base.update(kw)
    return ex.make_config(experiment, **base)


def header(text):
    return next(csv.reader(io.StringIO(text)))


def test_defaults():
    assert ex.make_config("converge").budget == 10_000
    pat = ex.make_config("patient")
    assert (pat.env, pat.budget, pat.replicates, pat.modes) == ("patient", 12_500, 50, ("I",))
    assert ex.make_config("robustness").betas == ex.DEFAULT_BETAS


@pytest.mark.parametrize("overrides,key", [
    (dict(alphas=(0.0,)), "alphas"), (dict(alphas=(1.5,)), "alphas"), (dict(gammas=(-1.0,)), "gammas"),
    (dict(modes=("X",)), "modes"), (dict(modes=()), "modes"), (dict(budget=0), "budget"),
    (dict(env="chess"), "env"), (dict(replicates=0), "replicates"), (dict(backend="gpu"), "backend"),
    (dict(alphas=(), gammas=(), rmcp_alphas=()), "alphas"), (dict(problem_file="/no/such"), "problem_file"),
])
def test_config_validation(overrides, key):
    with pytest.raises(ConfigError) as info:
        ex.make_config("converge", **overrides)
    assert info.value.key == key


def test_task_seeds_depend_on_label_and_replicate():
    a = ex.Task("cvar", 0.5, "F", 0)
    draws = lambda t: ex.task_seeds(7, t)[0].random()  # noqa: E731
    assert draws(a) == draws(a)
    assert draws(a) != draws(ex.Task("cvar", 0.5, "F", 1))
    assert draws(a) != draws(ex.Task("cvar", 0.5, "I", 0))
    train, evaluate = ex.task_seeds(7, a)
    assert train.random() != evaluate.random()


def test_convergence_files():
    cfg = small("converge", replicates=1)
    files = ex.run(cfg)
    assert set(files) == {"summary.csv", "run.json", "traces/cvar-0.5-I-r0.csv",
                          "traces/cvar-1.0-I-r0.csv"}
    assert header(files["summary.csv"]) == ["method", "param", "mode", "replicate", "k", "game_value",
                                            "prior_expected", "worst_model", "num_nodes", "V_hat[0]",
                                            "V_hat[1]", "b_avg[0]", "b_avg[1]"]
    assert header(files["traces/cvar-0.5-I-r0.csv"])[0] == "k"
    meta = json.loads(files["run.json"])
    assert meta["schema"] == ex.SCHEMA and meta["config"]["budget"] == 200


def test_robustness_files():
    cfg = small("robustness", gammas=(1.0,), rmcp_alphas=(1.0,), dump_trees=True)
    files = ex.run(cfg)
    assert header(files["curves.csv"]) == ["method", "param", "mode", "beta", "n", "mean", "se",
                                           "ci90_lo", "ci90_hi"]
    assert header(files["models.csv"]) == ["method", "param", "mode", "replicate", "model",
                                           "eval_mean", "eval_ci90", "fallbacks", "V_hat"]
    assert header(files["points.csv"]) == ["method", "param", "mode", "replicate", "beta", "value"]
    curves = ex.read_curves(files["curves.csv"])
    assert set(curves) == {("cvar", 0.5, "I"), ("cvar", 1.0, "I"), ("exp", 1.0, "I"),
                           ("rmcp", 1.0, "I")}
    for rows in curves.values():
        assert sorted(rows) == list(ex.DEFAULT_BETAS)
        means = [rows[b]["mean"] for b in sorted(rows)]
        assert np.all(np.diff(means) >= -1e-12)  # a wider shift set can only hurt
        for row in rows.values():
            assert row["ci90_lo"] <= row["mean"] + 1e-12 <= row["ci90_hi"] + 2e-12
    tree = json.loads(files["trees/cvar-0.5-I-r0.json"])
    assert tree["schema"] == "ramcp.tree/1"


def test_runs_are_byte_identical():
    cfg = small("robustness", gammas=(1.0,))
    assert ex.run(cfg) == ex.run(cfg)


def test_worker_count_does_not_change_output():
    cfg = small("converge", replicates=2)
    one, two = ex.run(cfg), ex.run(dataclasses.replace(cfg, workers=2))
    # run.json records the worker count itself; every data file must match
    assert set(one) == set(two)
    assert {k: v for k, v in one.items() if k != "run.json"} == \
           {k: v for k, v in two.items() if k != "run.json"}


def test_seed_changes_output():
    a = ex.run(small("converge", replicates=1))
    b = ex.run(small("converge", replicates=1, seed=99))
    assert a["summary.csv"] != b["summary.csv"]


def test_problem_file(tmp_path, bandit):
    path = tmp_path / "bandit.json"
    save_problem(bandit, path)
    a = ex.run(small("converge", replicates=1))
    b = ex.run(small("converge", replicates=1, problem_file=str(path)))
    assert a["summary.csv"] == b["summary.csv"]


def test_shifted_value_endpoints(bandit):
    v = np.array([1.0, -1.0])
    assert ex.shifted_value(bandit.prior, v, 1.0) == pytest.approx(0.2)
    assert ex.shifted_value(bandit.prior, v, 0.4) == pytest.approx(-1.0)


def test_write_files(tmp_path):
    paths = ex.write_files(tmp_path / "out", {"a.csv": "x\n", "sub/b.json": "{}\n"})
    assert sorted(p.name for p in paths) == ["a.csv", "b.json"]
    assert (tmp_path / "out" / "sub" / "b.json").read_text() == "{}\n"


def test_output_root(monkeypatch, tmp_path):
    monkeypatch.setenv("RAMCP_OUTPUT_ROOT", str(tmp_path))
    assert ex.output_root() == tmp_path
    monkeypatch.delenv("RAMCP_OUTPUT_ROOT")
    assert str(ex.output_root()) == "runs"
