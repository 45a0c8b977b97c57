from __future__ import annotations

import json
import math

import numpy as np
import pytest

from sparseq.elimination import (
    EliminationConfig,
    compute_m,
    empirical_bellman_error,
    iteration_cap,
    level_value_table,
    rollin_policy,
    run_elimination,
    select_level_param,
)
from sparseq.errors import EliminationExhausted, ParameterError
from sparseq.instances import make_bandit_instance, make_random_sparse_instance, make_tree_instance
from sparseq.mdp import TrajectoryBatch, exact_optimal, exact_policy_value, sample_trajectories
from sparseq.oracles import exact_avg_bellman_error
from sparseq.sparse import FeatureMap, SparseParam, build_net, greedy_policy


def _cfg(**kw):
    base = dict(eps=0.0, eps_net=0.5, eps_stat=0.2, delta=0.1)
    base.update(kw)
    return EliminationConfig(**base)


def test_compute_m_examples():
    # ceil(2908.959...) and ceil(15528.058...), from direct evaluation of the formula
    assert compute_m(_cfg(eps_net=0.5, eps_stat=0.2, delta=0.1), d=8, k=1, H=2) == 2909
    assert compute_m(_cfg(eps_net=0.1, eps_stat=0.1, delta=0.1), d=10, k=1, H=4) == 15529
    assert compute_m(_cfg(), d=6, k=1, H=3) == 2957


def test_compute_m_override_and_scaling():
    assert compute_m(_cfg(m=17), 8, 1, 2) == 17
    raw = lambda s: (16 * math.log((1 + 4 / 0.5) * 8) + 16 * math.log(2 / 0.1)) / s ** 2
    assert raw(0.1) == pytest.approx(4 * raw(0.2), rel=1e-15)
    assert compute_m(_cfg(eps_stat=0.1), 8, 1, 2) == math.ceil(raw(0.1))


def test_iteration_cap_examples():
    assert iteration_cap(4, 1, 3, 1.0) == 60
    assert iteration_cap(4, 1, 1, 1.0) == 20
    with pytest.raises(ParameterError):
        iteration_cap(10 ** 6, 40, 10, 1e-3)


def test_config_validation_and_thresholds():
    c = _cfg(eps=0.02)
    assert c.thresholds(3) == pytest.approx([1.64, 1.64, 0.72], abs=1e-15)
    assert c.suboptimality_bound(3) == pytest.approx((0.8 + 1.0 + 0.04) * 3)
    for bad in (dict(eps=-0.1), dict(eps_net=0), dict(eps_stat=0), dict(delta=1.0), dict(eps_net=2.5), dict(m=0)):
        with pytest.raises(ParameterError):
            _cfg(**bad)


def test_select_single_and_dominating_candidates():
    net = build_net(2, 1, 0.5)
    phi = np.zeros((3, 2, 2))
    phi[:, :, 1] = 0.3
    f = FeatureMap((phi,))
    only = np.zeros(net.size, dtype=bool)
    only[3] = True
    assert select_level_param(net, only, f, 0, np.array([0, 1, 2])) == 3
    # +e_1 dominates every other candidate on every state
    assert net.candidate(select_level_param(net, np.ones(net.size, bool), f, 0, np.array([0, 2, 2]))) == \
        SparseParam.one_hot(1, 1.0)
    with pytest.raises(EliminationExhausted):
        select_level_param(net, np.zeros(net.size, bool), f, 0, np.array([0]))


def test_select_on_tree_picks_positive_sign():
    inst = make_tree_instance(3, 0.1, a_star=(0, 1, 1))
    net = build_net(1, 1, 0.5)
    c = select_level_param(net, np.ones(2, bool), inst.features, 0, np.array([0]))
    assert net.candidate(c) == SparseParam.one_hot(0, 1.0)


def test_rollin_policy_boundaries():
    inst = make_tree_instance(3, 0.1, a_star=(1, 1, 1))
    plus = [SparseParam.one_hot(0)] * 3
    assert all(np.all(t == 0) for t in rollin_policy(inst.features, [], 0).table)
    full = rollin_policy(inst.features, plus, 3)
    greedy = greedy_policy(inst.features, plus)
    assert all(np.array_equal(a, b) for a, b in zip(full.table, greedy.table))
    # features are action-independent, so ties give a1 before h and a1 after
    assert all(np.all(t == 0) for t in rollin_policy(inst.features, plus[:1], 1).table)
    with pytest.raises(ParameterError):
        rollin_policy(inst.features, plus[:1], 2)


def test_empirical_bellman_error_zero_model():
    f = FeatureMap((np.zeros((1, 2, 3)), np.zeros((2, 2, 3))))
    batch = TrajectoryBatch(np.array([[0, 1]]), np.array([[1, 0]]), np.zeros((1, 2)))
    thetas = [SparseParam.one_hot(0)] * 2
    assert [empirical_bellman_error(batch, f, thetas, h) for h in range(2)] == [0.0, 0.0]
    with pytest.raises(ParameterError):
        empirical_bellman_error(TrajectoryBatch(np.zeros((0, 2), int), np.zeros((0, 2), int), np.zeros((0, 2))),
                                f, thetas, 0)


def test_empirical_matches_exact_on_deterministic_instances():
    inst = make_tree_instance(4, 0.1, a_star=(0, 1, 1, 0))
    rng = np.random.default_rng(0)
    for signs in [(1, 1, 1, 1), (1, -1, 1, -1), (-1, -1, 1, 1)]:
        thetas = [SparseParam.one_hot(0, s) for s in signs]
        pi = greedy_policy(inst.features, thetas)
        for m in (1, 5):
            batch = sample_trajectories(inst.mdp, pi, m, rng)
            for h in range(4):
                assert empirical_bellman_error(batch, inst.features, thetas, h) == pytest.approx(
                    exact_avg_bellman_error(inst.mdp, inst.features, thetas, h, pi), abs=1e-15)


def test_last_level_error_on_tree_within_threshold():
    inst = make_tree_instance(3, 0.1, a_star=(1, 0, 1))
    thetas = inst.theta_star
    batch = sample_trajectories(inst.mdp, greedy_policy(inst.features, thetas), 3, np.random.default_rng(0))
    e = empirical_bellman_error(batch, inst.features, thetas, 2)
    assert -0.1 - 1e-15 <= e <= 0.0
    assert e <= _cfg().last_threshold


def test_realizable_tree_run_meets_bound():
    inst = make_tree_instance(3, 0.1, a_star=(0, 1, 0))
    cfg = _cfg(eps=0.1)
    rep = run_elimination(inst.mdp, inst.features, 1, cfg, np.random.default_rng(0), reference=inst.theta_star)
    sub = exact_optimal(inst.mdp).value - exact_policy_value(inst.mdp, rep.policy)
    assert rep.status == "terminated"
    assert sub <= cfg.suboptimality_bound(3)
    assert not rep.hat_eliminated
    assert rep.n_iterations <= rep.realized_cap <= rep.cap


def test_bandit_run_meets_corollary_gap():
    rng = np.random.default_rng(4)
    inst = make_bandit_instance(20, 0.1, rng)
    cfg = _cfg(eps=0.1)
    rep = run_elimination(inst.mdp, inst.features, 1, cfg, rng)
    best = max(inst.reward(a) for a in range(20))
    chosen = int(rep.policy.table[0][0])
    assert best - inst.reward(chosen) <= 2 * 0.1 + 2 * 0.5 + 4 * 0.2


def _exhausting_bandit():
    # theta* = -1 on a negative-reward arm 0; with tiny thresholds both signs fail
    return make_bandit_instance(3, 0.25, np.random.default_rng(0), sign=-1, best=0)


def test_elimination_removes_exactly_failing_levels_and_exhausts():
    inst = _exhausting_bandit()
    cfg = EliminationConfig(0.0, 0.01, 0.01, 0.1, m=1)
    with pytest.raises(EliminationExhausted) as info:
        run_elimination(inst.mdp, inst.features, 1, cfg, np.random.default_rng(0), reference=inst.theta_star)
    rep = info.value.report
    assert rep.status == "exhausted" and rep.n_iterations == 2
    net = build_net(1, 1, 0.01)
    assert [net.candidate(r.selected[0]) for r in rep.iterations] == [SparseParam.one_hot(0, 1.0),
                                                                      SparseParam.one_hot(0, -1.0)]
    assert [r.e_hat[0] for r in rep.iterations] == pytest.approx([0.75, 0.25])
    for r in rep.iterations:
        assert r.eliminated == [h for h, e in enumerate(r.e_hat) if e > cfg.thresholds(1)[h]]
    assert rep.hat_eliminated


def test_eliminations_happen_and_run_terminates_with_small_thresholds():
    rng = np.random.default_rng(11)
    inst = make_random_sparse_instance(4, 1, 3, 0.0, 2, rng)
    cfg = EliminationConfig(0.0, 0.05, 0.05, 0.1, m=200)
    rep = run_elimination(inst.mdp, inst.features, 1, cfg, rng, reference=inst.theta_star)
    assert rep.status == "terminated"
    assert rep.n_iterations > 1 and any(r.eliminated for r in rep.iterations)
    assert rep.n_iterations <= rep.realized_cap
    # candidates eliminated at a level are never selected there again
    for h in range(3):
        gone = set()
        for r in rep.iterations:
            assert r.selected[h] not in gone
            gone.update([r.selected[h]] if h in r.eliminated else [])


def test_sample_accounting_and_serialization():
    inst = make_tree_instance(3, 0.1, a_star=(0, 0, 1))
    rep = run_elimination(inst.mdp, inst.features, 1, _cfg(eps=0.1, m=40), np.random.default_rng(2))
    assert rep.sampled_trajectories == rep.trajectories == rep.n_iterations * 3 * 40
    assert rep.samples == rep.trajectories * 3
    lines = rep.to_jsonl().splitlines()
    head = json.loads(lines[0])
    assert head["record"] == "run" and head["m"] == 40 and len(lines) == 1 + rep.n_iterations
    csv_lines = rep.to_csv().splitlines()
    assert csv_lines[0] == "iteration,level,candidate,e_hat,eliminated"
    assert len(csv_lines) == 1 + 3 * rep.n_iterations


def test_run_is_deterministic_given_seed():
    inst = make_random_sparse_instance(4, 1, 3, 0.02, 2, np.random.default_rng(1), stochastic_rewards=True)
    cfg = _cfg(eps=0.02, m=300)
    a = run_elimination(inst.mdp, inst.features, 1, cfg, np.random.default_rng(9))
    b = run_elimination(inst.mdp, inst.features, 1, cfg, np.random.default_rng(9))
    assert a.to_csv() == b.to_csv() and a.to_jsonl() == b.to_jsonl()


def test_level_value_table_matches_candidates():
    inst = make_random_sparse_instance(5, 2, 2, 0.0, 3, np.random.default_rng(0))
    net = build_net(5, 2, 1.0, rng=0)
    V, greedy = level_value_table(net, inst.features, 1)
    for c in (0, net.size // 2, net.size - 1):
        th = net.candidate(c)
        q = inst.features.phi[1] @ th.dense(5)
        assert np.allclose(V[:, c], q.max(axis=1), atol=1e-15)
        assert np.array_equal(greedy[:, c], q.argmax(axis=1))
