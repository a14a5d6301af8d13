import numpy as np
import pytest

from ramcp.errors import PolicyUndefinedError, ProblemError, RamcpError, WeightError
from ramcp.problem import BamdpProblem
from ramcp.tree import (SearchTree, avg_action, compute_q_values, simulate,
                        weighted_value_estimator_check)

from conftest import chain_problem, random_problem


def two_outcome_problem(r1=1.0, r2=5.0):
    T = np.zeros((1, 3, 1, 3))
    T[0, 0, 0, 1:] = 0.5
    T[0, 1:, 0, 1:] = 0.5
    R = np.zeros((3, 1, 3))
    R[0, 0, 1], R[0, 0, 2] = r1, r2
    return BamdpProblem(T, R, [1.0], 1)


def test_single_step_counts(backend):
    problem = chain_problem(rewards=(2.0,))
    tree = SearchTree(problem, backend=backend)
    rng = np.random.default_rng(0)
    assert simulate(tree, problem, (0,), 0, 1.0, rng) == 2.0
    st = tree.stats((0,))
    assert (st.N, st.W, st.W_a[0], st.W_br[0]) == (1, 1.0, 1.0, 1.0)


def test_zero_weight_visit_still_counts(backend):
    problem = chain_problem(rewards=(1.0,))
    tree = SearchTree(problem, backend=backend)
    rng = np.random.default_rng(0)
    simulate(tree, problem, (0,), 0, 2.0, rng)
    simulate(tree, problem, (0,), 0, 0.0, rng)
    st = tree.stats((0,))
    assert st.N == 2 and st.W == 2.0


def test_bad_weights_rejected(bandit, backend):
    tree = SearchTree(bandit, backend=backend)
    rng = np.random.default_rng(0)
    for w in (-1.0, np.nan, np.inf):
        with pytest.raises(WeightError):
            simulate(tree, bandit, (0,), 0, w, rng)
    with pytest.raises(ProblemError):
        simulate(tree, bandit, (0,), 5, 1.0, rng)


def test_first_bandit_simulation_follows_lowest_index(bandit, backend):
    # With every Q at zero the greedy path takes action 0 everywhere:
    # a1 twice, paying -0.1 per pull under model 1 and 0.0 under model 2.
    for model, expected in ((0, -0.2), (1, 0.0)):
        tree = SearchTree(bandit, backend=backend)
        v = simulate(tree, bandit, (0,), model, 1.0, np.random.default_rng(0))
        assert v == pytest.approx(expected)


def test_weighted_average_q(backend):
    problem = two_outcome_problem()
    tree = SearchTree(problem, backend=backend)
    tree.raw.simulate(0, 3.0, np.array([0.1]), 0)  # lands in state 1
    tree.raw.simulate(0, 1.0, np.array([0.9]), 0)  # lands in state 2
    assert compute_q_values(tree) == pytest.approx(0.75 * 1 + 0.25 * 5)
    assert tree.stats((0,)).Q[0] == pytest.approx(2.0)


def test_leaf_value_is_zero(bandit, backend):
    tree = SearchTree(bandit, backend=backend)
    rng = np.random.default_rng(0)
    simulate(tree, bandit, (0,), 0, 1.0, rng)
    leaf = (0, 0, 3, 0, 0, 0, 3, 0, 0)
    compute_q_values(tree)
    assert tree.stats(leaf).V == 0.0


def _reference_dp(tree, problem, history):
    st = tree.stats(history)
    if st.depth >= problem.horizon or problem.is_terminal(st.state):
        return 0.0
    q = np.zeros(problem.num_actions)
    for a in range(problem.num_actions):
        if st.W_a[a] <= 0:
            continue
        for (b, s2), w in st.children.items():
            if b == a:
                child = _reference_dp(tree, problem, history + (a, s2))
                q[a] += w / st.W_a[a] * (problem.reward(st.state, a, s2) + child)
    return q.max()


def test_compute_q_matches_reference_dp(backend):
    problem = random_problem(np.random.default_rng(8), M=3, S=5, A=2, H=3, terminal=(4,))
    tree = SearchTree(problem, backend=backend)
    rng = np.random.default_rng(9)
    for k in range(60):
        simulate(tree, problem, (0,), k % 3, float(rng.uniform(0.1, 2.0)), rng)
    assert compute_q_values(tree) == pytest.approx(_reference_dp(tree, problem, (0,)), abs=1e-12)


def test_compute_q_is_idempotent(bandit, backend):
    tree = SearchTree(bandit, backend=backend)
    rng = np.random.default_rng(1)
    for k in range(30):
        simulate(tree, bandit, (0,), k % 2, 0.7, rng)
    compute_q_values(tree)
    first = tree.raw.export()
    compute_q_values(tree)
    second = tree.raw.export()
    for key in first:
        assert np.array_equal(first[key], second[key])


def test_compute_q_requires_mode_f(bandit):
    with pytest.raises(RamcpError):
        compute_q_values(SearchTree(bandit, mode="I"))


@pytest.mark.parametrize("mode", ["F", "I"])
@pytest.mark.parametrize("keying", ["history", "state_depth"])
def test_weight_bookkeeping_invariants(backend, mode, keying):
    problem = random_problem(np.random.default_rng(2), M=2, S=4, A=3, H=3, terminal=(3,))
    tree = SearchTree(problem, mode=mode, keying=keying, backend=backend)
    rng = np.random.default_rng(3)
    for k in range(40):
        simulate(tree, problem, (0,), k % 2, float(rng.choice([0.0, 0.4, 1.3])), rng)
        if mode == "F":
            compute_q_values(tree)
    for st in tree.items():
        internal = st.depth < problem.horizon and not problem.is_terminal(st.state)
        if not internal:
            assert not st.N_a.any()
            continue
        assert np.all(st.N_a == st.N)  # every action expanded on every visit
        assert st.W_a.sum() == pytest.approx(problem.num_actions * st.W)
        assert st.W_br.sum() == pytest.approx(st.W)
        assert np.all(st.W_br <= st.W + 1e-12)
        for a in range(problem.num_actions):
            w_children = sum(w for (b, _), w in st.children.items() if b == a)
            assert w_children == pytest.approx(st.W_a[a])


def test_transition_estimates_sum_to_one(bandit):
    tree = SearchTree(bandit)
    rng = np.random.default_rng(4)
    for k in range(50):
        simulate(tree, bandit, (0,), k % 2, 1.0, rng)
    st = tree.stats((0,))
    for a in range(4):
        p = [w / st.W_a[a] for (b, _), w in st.children.items() if b == a]
        assert sum(p) == pytest.approx(1.0, abs=1e-15)


def test_state_keying_merges_nodes(bandit):
    rng = np.random.default_rng(5)
    full, merged = SearchTree(bandit), SearchTree(bandit, keying="state_depth")
    for k in range(50):
        u = rng.random(full.draws_per_simulation)
        full.raw.simulate(k % 2, 1.0, u, 0)
        merged.raw.simulate(k % 2, 1.0, u, 0)
    assert merged.num_nodes < full.num_nodes
    keys = [st.key for st in merged.items()]
    assert len(keys) == len(set(keys))
    assert all(len(k) == 2 for k in keys)


def test_lookup_of_unknown_history(bandit):
    tree = SearchTree(bandit)
    assert tree.node_of((0, 1, 5)) is None
    assert tree.node_of((3,)) is None
    with pytest.raises(PolicyUndefinedError):
        tree.stats((0, 1, 5))


def _tree_with_wbr(problem, wbr):
    tree = SearchTree(problem, backend="python")
    tree.raw.simulate(0, 1.0, np.zeros(tree.draws_per_simulation), 0)
    A = problem.num_actions
    tree.raw.Wbr[0:A] = list(wbr)
    return tree


def _frequency(tree, n, seed):
    rng = np.random.default_rng(seed)
    return np.mean([avg_action(tree, (0,), rng) == 0 for _ in range(n)])


def test_avg_action_proportions():
    two = chain_problem(rewards=(1.0, 1.0))
    assert _frequency(_tree_with_wbr(two, (5.0, 0.0)), 1000, 0) == 1.0
    assert abs(_frequency(_tree_with_wbr(two, (1.0, 1.0)), 100_000, 1) - 0.5) <= 0.005
    assert abs(_frequency(_tree_with_wbr(two, (3.0, 1.0)), 100_000, 2) - 0.75) <= 0.004


def test_avg_action_without_mass():
    tree = _tree_with_wbr(chain_problem(rewards=(1.0, 1.0)), (0.0, 0.0))
    with pytest.raises(PolicyUndefinedError):
        avg_action(tree, (0,), np.random.default_rng(0))


def test_tree_json_dump(bandit):
    tree = SearchTree(bandit)
    simulate(tree, bandit, (0,), 0, 1.0, np.random.default_rng(0))
    doc = tree.to_json()
    assert doc["num_nodes"] == tree.num_nodes == len(doc["nodes"])
    root = doc["nodes"][0]
    assert root["key"] == [0] and root["N"] == 1 and root["W_br"] == [1.0, 0.0, 0.0, 0.0]


def test_estimator_check_equal_beliefs(bandit):
    p = np.array([0.6, 0.4])
    res = weighted_value_estimator_check(bandit, p, p, 5000, np.random.default_rng(0), action=2)
    assert res.gap <= 3 * res.pooled_se


def test_estimator_check_degenerate_target(bandit):
    res = weighted_value_estimator_check(bandit, [1.0, 0.0], [0.5, 0.5], 20_000,
                                         np.random.default_rng(1), action=2)
    # the single-model root value of a3 is 0.6 plus the best second pull (1.1 - 0.5 = 0.6)
    assert res.gap <= 3 * res.pooled_se
    assert abs(res.est_weighted - res.est_direct) <= 3 * res.pooled_se


def test_estimator_check_support_violation(bandit):
    with pytest.raises(ProblemError):
        weighted_value_estimator_check(bandit, [0.5, 0.5], [1.0, 0.0], 10, np.random.default_rng(0))
