from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import all_policies, brute_values, small_mdps
from sparseq.errors import ParameterError, StructuralError
from sparseq.instances import make_block_instance, make_tree_instance
from sparseq.mdp import (
    TabularMdp,
    TabularPolicy,
    exact_optimal,
    exact_policy_value,
    sample_trajectories,
    sample_trajectory,
    state_distribution,
)


def _zero_mdp(H=3):
    nxt = [np.stack([2 * np.arange(2 ** h), 2 * np.arange(2 ** h) + 1], axis=1) for h in range(H - 1)]
    return TabularMdp.deterministic(nxt, [np.zeros((2 ** h, 2)) for h in range(H)])


def _split_mdp():
    # s0 splits 50/50 into two level-1 states; reward 0.5 only on the second
    return TabularMdp(
        2, ((0,), (1, 2)), ("a1",),
        (np.array([[[0, 1]]]),), (np.array([[[0.5, 0.5]]]),),
        (np.zeros((1, 1, 1)), np.array([[[0.0]], [[0.5]]])),
        (np.ones((1, 1, 1)), np.ones((2, 1, 1))),
    )


def test_tree_trajectory_under_all_a1():
    inst = make_tree_instance(3, 0.1, a_star=(0, 1, 0))
    traj = sample_trajectory(inst.mdp, TabularPolicy.constant(inst.mdp, 0), np.random.default_rng(0))
    assert traj.rewards == (0.1, 0.0, 0.1)
    assert traj.global_states(inst.mdp) == (0, 1, 3)


def test_zero_reward_mdp_trajectory_and_values():
    mdp = _zero_mdp()
    pol = TabularPolicy.from_lists([[1], [0, 1], [1, 0, 1, 0]])
    assert sample_trajectory(mdp, pol, np.random.default_rng(1)).rewards == (0.0, 0.0, 0.0)
    sol = exact_optimal(mdp)
    assert all(np.all(q == 0) for q in sol.q) and sol.value == 0
    assert exact_policy_value(mdp, pol) == 0


def test_block_trajectory_rewards_last_step_of_the_block():
    inst = make_block_instance(2, 2, 0.1, targets=(0,))
    traj = sample_trajectory(inst.mdp, TabularPolicy.constant(inst.mdp, 0), np.random.default_rng(0))
    assert traj.rewards == (0.0, 0.1)


def test_tree_optimum_matches_closed_form_at_root():
    inst = make_tree_instance(3, 0.1, a_star=(0, 1, 0))
    q = exact_optimal(inst.mdp).q[0][0]
    assert q[0] == pytest.approx(0.3, abs=1e-15)
    assert q[1] == pytest.approx(0.2, abs=1e-15)


def test_block_optimal_value():
    inst = make_block_instance(4, 2, 0.1, targets=(2, 1))
    assert exact_optimal(inst.mdp).value == pytest.approx(0.2, abs=1e-15)


def test_tree_policy_values():
    inst = make_tree_instance(5, 0.1, a_star=(0, 1, 1, 0, 1))
    opt = exact_optimal(inst.mdp)
    assert exact_policy_value(inst.mdp, opt.policy) == pytest.approx(0.5, abs=1e-15)
    # wrong at every level: take the other action everywhere on the path
    wrong = TabularPolicy(tuple(np.full(n, 1 - a) for n, a in zip(inst.mdp.level_sizes, inst.a_star)))
    assert exact_policy_value(inst.mdp, wrong) == 0


def test_state_distribution():
    inst = make_tree_instance(4, 0.1, a_star=(0, 0, 0, 0))
    pol = TabularPolicy.constant(inst.mdp, 1)
    assert state_distribution(inst.mdp, pol, 0).tolist() == [1.0]
    d3 = state_distribution(inst.mdp, pol, 3)
    assert d3.sum() == 1.0 and d3.max() == 1.0 and d3[7] == 1.0
    assert state_distribution(_split_mdp(), TabularPolicy.from_lists([[0], [0, 0]]), 1).tolist() == [0.5, 0.5]


def test_undefined_policy_at_reached_state_is_structural_error():
    mdp = _zero_mdp()
    pol = TabularPolicy.from_lists([[0], [-1, 0], [0, 0, 0, 0]])
    with pytest.raises(StructuralError):
        sample_trajectory(mdp, pol, np.random.default_rng(0))
    with pytest.raises(StructuralError):
        exact_policy_value(mdp, pol)
    # unreached undefined entries are fine
    ok = TabularPolicy.from_lists([[0], [0, -1], [0, -1, -1, -1]])
    assert exact_policy_value(mdp, ok) == 0


def test_validation_rejects_bad_models():
    r = [np.zeros((1, 2)), np.zeros((2, 2))]
    with pytest.raises(StructuralError):
        TabularMdp.deterministic([np.array([[0, 2]])], r)           # target outside level 1
    with pytest.raises(StructuralError):
        TabularMdp.deterministic([np.array([[0, 1]])], [np.full((1, 2), 0.6), np.full((2, 2), 0.6)])  # sum 1.2
    with pytest.raises(StructuralError):
        TabularMdp.deterministic([], [np.array([[1.5, 0.0]])])        # reward outside [0, 1]
    with pytest.raises(StructuralError):
        TabularMdp(2, ((0,), (1, 2)), ("a1",), (np.array([[[0, 1]]]),), (np.array([[[0.5, 0.4]]]),),
                   (np.zeros((1, 1, 1)), np.zeros((2, 1, 1))), (np.ones((1, 1, 1)), np.ones((2, 1, 1))))
    with pytest.raises(StructuralError):
        TabularMdp.deterministic([np.array([[0, 1]])], r, levels=[(0,), (0, 1)])  # ids shared across levels
    with pytest.raises(ParameterError):
        sample_trajectories(_zero_mdp(), TabularPolicy.constant(_zero_mdp()), -1, np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(small_mdps())
def test_backward_induction_matches_policy_enumeration(mdp):
    sol = exact_optimal(mdp)
    best_q = [np.full((n, mdp.n_actions), -np.inf) for n in mdp.level_sizes]
    best_v0 = -np.inf
    for table in all_policies(mdp):
        V = brute_values(mdp, table)
        best_v0 = max(best_v0, V[0][0])
        for h in range(mdp.horizon):
            for s in range(mdp.level_sizes[h]):
                for a in range(mdp.n_actions):
                    q = sum(float(r) * float(p) for r, p in zip(mdp.reward_values[h][s, a], mdp.reward_probs[h][s, a]))
                    if h < mdp.horizon - 1:
                        q += sum(float(p) * V[h + 1][int(t)]
                                 for t, p in zip(mdp.next_states[h][s, a], mdp.next_probs[h][s, a]))
                    best_q[h][s, a] = max(best_q[h][s, a], q)
    assert sol.value == best_v0
    for h in range(mdp.horizon):
        assert np.array_equal(sol.q[h], best_q[h])


@settings(max_examples=60, deadline=None)
@given(small_mdps(max_actions=3))
def test_optimal_policy_value_equals_optimal_value(mdp):
    sol = exact_optimal(mdp)
    assert exact_policy_value(mdp, sol.policy) == pytest.approx(sol.value, abs=1e-12)
    # lowest index among maximizers
    for h in range(mdp.horizon):
        q = sol.q[h]
        first = np.array([np.flatnonzero(row == row.max())[0] for row in q])
        assert np.array_equal(sol.policy.table[h], first)


@settings(max_examples=60, deadline=None)
@given(small_mdps(max_actions=3))
def test_state_distributions_are_probability_vectors(mdp):
    pol = exact_optimal(mdp).policy
    for h in range(mdp.horizon):
        d = state_distribution(mdp, pol, h)
        assert d.min() >= 0 and abs(d.sum() - 1) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(small_mdps(max_actions=3))
def test_monte_carlo_mean_converges_to_exact_value(mdp):
    pol = exact_optimal(mdp).policy
    N = 4000
    batch = sample_trajectories(mdp, pol, N, np.random.default_rng(7))
    assert abs(batch.rewards.sum(axis=1).mean() - exact_policy_value(mdp, pol)) <= 3 / math.sqrt(N) + 1e-12
    lo, hi = mdp.path_reward_bounds()
    sums = batch.rewards.sum(axis=1)
    assert lo - 1e-12 <= sums.min() and sums.max() <= hi + 1e-12


@settings(max_examples=20, deadline=None)
@given(small_mdps())
def test_same_seed_gives_identical_trajectories(mdp):
    pol = TabularPolicy.constant(mdp, 0)
    a = sample_trajectories(mdp, pol, 50, np.random.default_rng(3))
    b = sample_trajectories(mdp, pol, 50, np.random.default_rng(3))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.rewards, b.rewards)


def test_deterministic_system_ignores_generator_state():
    inst = make_tree_instance(6, 0.1, a_star=(1, 0, 1, 1, 0, 0))
    pol = exact_optimal(inst.mdp).policy
    trajs = {sample_trajectory(inst.mdp, pol, np.random.default_rng(s)) for s in range(5)}
    assert len(trajs) == 1
    assert next(iter(trajs)).total_reward == pytest.approx(exact_policy_value(inst.mdp, pol), abs=1e-15)
