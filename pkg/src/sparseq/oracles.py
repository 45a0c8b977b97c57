"""Exact reference computations.

* average Bellman errors under an arbitrary roll-in policy, computed from the
  exact state distribution;
* Bellman-error matrices for the rank instance, and a pivoting rank routine;
* the multi-index query game, an exact counting formula for fixed query
  sequences, and the reduction from block-instance trajectories to queries.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InstanceIntegrityError, ParameterError, StrategyError
from .instances import BlockInstance, RankInstance, block_bijection_g_inv
from .mdp import TabularMdp, TabularPolicy, Trajectory, exact_policy_value, state_distribution
from .sparse import FeatureMap, SparseParam, greedy_policy, q_table


def exact_avg_bellman_error(
    mdp: TabularMdp,
    features: FeatureMap,
    thetas: Sequence[SparseParam],
    h: int,
    rollin: TabularPolicy,
) -> float:
    """E[<phi(s_h,a_h),theta_h> - r_h - V_{theta_{h+1}}(s_{h+1})] under ``rollin``.

    The V term is dropped at the last level.
    """
    H = mdp.horizon
    if len(thetas) != H:
        raise ParameterError("need one parameter per level")
    dist = state_distribution(mdp, rollin, h)
    a = rollin.table[h]
    s = np.arange(len(dist))
    live = dist > 0
    a = np.where(live, a, 0)
    term = q_table(features, thetas[h], h)[s, a] - mdp.mean_rewards(h)[s, a]
    if h < H - 1:
        v_next = q_table(features, thetas[h + 1], h + 1).max(axis=1)
        term = term - mdp.expected_next(h, v_next)[s, a]
    return float(dist[live] @ term[live])


def telescoping_sides(mdp: TabularMdp, features: FeatureMap, thetas: Sequence[SparseParam]) -> tuple[float, float]:
    """``(V_theta0(s_0) - V^{pi_theta}, sum_h E_h(theta, pi_theta))``; the two agree exactly in theory."""
    pi = greedy_policy(features, thetas)
    lhs = float(q_table(features, thetas[0], 0)[0].max()) - exact_policy_value(mdp, pi)
    rhs = sum(exact_avg_bellman_error(mdp, features, thetas, h, pi) for h in range(mdp.horizon))
    return lhs, rhs


# -- Bellman rank ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BellmanErrorMatrix:
    level: int
    family: tuple[tuple[SparseParam, ...], ...]
    W: np.ndarray


def bellman_error_matrix(instance: RankInstance, level: int | None = None) -> BellmanErrorMatrix:
    """W[i, j] = E_level(theta^(i), pi_{theta^(j)}) over the d routing sequences.

    Sequence ``theta^(i)`` routes greedily to terminal pair ``i`` and is
    one-hot on ``i`` at the last level.
    """
    H = instance.horizon
    level = H - 1 if level is None else level
    if not 0 <= level < H:
        raise ParameterError(f"level {level} outside [0, {H})")
    mdp, feats = instance.mdp, instance.features
    family = tuple(tuple(instance.route(i)) for i in range(instance.d))
    policies = [greedy_policy(feats, seq) for seq in family]
    W = np.array([
        [exact_avg_bellman_error(mdp, feats, row, level, pol) for pol in policies]
        for row in family
    ])
    return BellmanErrorMatrix(level, family, W)


def expected_rank_pattern(d: int, eps: float) -> np.ndarray:
    return eps * (np.eye(d) - np.ones((d, d)))


def matrix_rank(M: np.ndarray, tol: float = 1e-9) -> int:
    """Rank by Gaussian elimination; pivots below tol * max|M| count as zero."""
    A = np.array(M, dtype=float, copy=True)
    if A.size == 0:
        return 0
    scale = np.abs(A).max()
    if scale == 0:
        return 0
    thresh = tol * scale
    rows, cols = A.shape
    rank = 0
    for c in range(cols):
        if rank == rows:
            break
        p = rank + int(np.argmax(np.abs(A[rank:, c])))
        if abs(A[p, c]) <= thresh:
            continue
        A[[rank, p]] = A[[p, rank]]
        A[rank + 1:] -= np.outer(A[rank + 1:, c] / A[rank, c], A[rank])
        rank += 1
    return rank


# -- multi-index query game --------------------------------------------------


@dataclass
class IndqGame:
    n: int
    m: int
    targets: tuple[int, ...]
    log: list[tuple[int, int, bool]] = field(default_factory=list)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ParameterError("need n, m >= 1")
        if len(self.targets) != self.m or not all(0 <= i < self.n for i in self.targets):
            raise ParameterError("targets must be m indices in [0, n)")

    def query(self, j: int, i: int) -> bool:
        if not (0 <= j < self.m and 0 <= i < self.n):
            raise StrategyError(f"query ({j}, {i}) outside [{self.m}] x [{self.n}]")
        hit = self.targets[j] == i
        self.log.append((j, i, hit))
        return hit


Strategy = Callable[[Sequence[tuple[int, int, bool]]], "tuple[int, int] | None"]


@dataclass
class IndqOutcome:
    success: bool
    answer: tuple[int, int] | None
    queries: int


class FixedSequence:
    """Deterministic strategy that plays a fixed list of queries."""

    def __init__(self, queries: Iterable[tuple[int, int]]):
        self.queries = [tuple(q) for q in queries]

    def __call__(self, history):
        return self.queries[len(history)] if len(history) < len(self.queries) else None


def scan_queries(n: int, m: int, budget: int, j: int = 0) -> list[tuple[int, int]]:
    """Scan indices 0, 1, ... of coordinate ``j``."""
    return [(j, i) for i in range(min(budget, n))]


def indq_play(game: IndqGame, strategy: Strategy, budget: int) -> IndqOutcome:
    """Run ``strategy`` for at most ``budget`` queries; success on the first hit."""
    if budget < 0:
        raise ParameterError("budget must be non-negative")
    for _ in range(budget):
        q = strategy(game.log)  # read-only view
        if q is None:
            break
        j, i = q
        if game.query(j, i):
            return IndqOutcome(True, (j, i), len(game.log))
    return IndqOutcome(False, None, len(game.log))


def indq_success_probability(n: int, m: int, queries: Sequence[tuple[int, int]]) -> Fraction:
    """Exact success chance of a fixed query list against uniform targets."""
    if n < 1 or m < 1:
        raise ParameterError("need n, m >= 1")
    guessed: list[set] = [set() for _ in range(m)]
    for j, i in queries:
        if not (0 <= j < m and 0 <= i < n):
            raise StrategyError(f"query ({j}, {i}) outside [{m}] x [{n}]")
        guessed[j].add(i)
    bad = 1
    for g in guessed:
        bad *= n - len(g)
    return 1 - Fraction(bad, n ** m)


def indq_enumerate(n: int, m: int, make_strategy: Callable[[], Strategy], budget: int) -> Fraction:
    """Success probability by playing against every target in [n]^m."""
    if n ** m > 2 ** 16:
        raise ParameterError("enumeration limited to n^m <= 2^16")
    wins = 0
    for targets in itertools.product(range(n), repeat=m):
        wins += indq_play(IndqGame(n, m, targets), make_strategy(), budget).success
    return Fraction(wins, n ** m)


# -- reduction from block-instance trajectories ----------------------------------


@dataclass(frozen=True)
class Guess:
    trajectory: int
    block: int
    index: int
    correct: bool


def rl_to_indq_reduction(instance: BlockInstance, trace: Iterable[Trajectory]) -> tuple[IndqGame, list[Guess]]:
    """Translate each trajectory into one query per block and audit its rewards.

    Raises ``InstanceIntegrityError`` if a block's last reward is not eps
    exactly when its guess is right, or if any other reward is non-zero.
    """
    T, Q = instance.block, instance.n_blocks
    game = IndqGame(2 ** T, Q, instance.targets)
    guesses = []
    for n, traj in enumerate(trace):
        if len(traj.actions) != instance.horizon:
            raise ParameterError("trajectory length does not match the horizon")
        paying = set()
        for q in range(Q):
            i = block_bijection_g_inv(traj.actions[q * T:(q + 1) * T])
            ok = game.query(q, i)
            guesses.append(Guess(n, q, i, ok))
            last = (q + 1) * T - 1
            if (traj.rewards[last] == instance.eps) != ok:
                raise InstanceIntegrityError(
                    f"trajectory {n}, block {q}: reward {traj.rewards[last]} but guess correct={ok}"
                )
            if ok:
                paying.add(last)
        stray = [h for h, r in enumerate(traj.rewards) if r != 0 and h not in paying]
        if stray:
            raise InstanceIntegrityError(f"trajectory {n}: unexpected reward at levels {stray}")
    return game, guesses
