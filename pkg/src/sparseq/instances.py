"""Instance generators: binary-tree hard instances, the bandit instance, the
Bellman-rank instance and a random family that satisfies the sparse linear
approximation assumption by construction.

Binary trees use the heap layout: global state ``2**h - 1 + j`` is the
``j``-th state of level ``h``; action ``a1`` (index 0) leads to local ``2j``
and ``a2`` (index 1) to local ``2j + 1`` on the next level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .mdp import TabularMdp, exact_optimal
from .sparse import FeatureMap, ParamNet, SparseParam, assumption_gap

A1, A2 = 0, 1
MAX_TREE_HORIZON = 18


def _heap_levels(H: int) -> list[tuple[int, ...]]:
    return [tuple(range(2 ** h - 1, 2 ** (h + 1) - 1)) for h in range(H)]


def _tree_children(H: int) -> list[np.ndarray]:
    return [np.stack([2 * np.arange(2 ** h), 2 * np.arange(2 ** h) + 1], axis=1) for h in range(H - 1)]


def _check_materializable(H: int):
    if H > MAX_TREE_HORIZON:
        raise ParameterError(f"a depth-{H} tree has {2 ** H - 1} states; materialize only up to H={MAX_TREE_HORIZON}")


def _draw_actions(H: int, a_star, rng) -> tuple[int, ...]:
    if a_star is None:
        if rng is None:
            raise ParameterError("need either an action sequence or a random generator")
        return tuple(int(x) for x in rng.integers(0, 2, size=H))
    a_star = tuple(int(a) for a in a_star)
    if len(a_star) != H or not set(a_star) <= {A1, A2}:
        raise ParameterError("optimal actions must be a length-H sequence over {0, 1}")
    return a_star


# -- level-wise optimal actions on a binary tree ------------------------------


@dataclass(frozen=True)
class TreeInstance:
    """Reward eps for taking the level's optimal action, 0 otherwise; d = k = 1."""

    horizon: int
    eps: float
    a_star: tuple[int, ...]

    @property
    def theta_star(self) -> list[SparseParam]:
        return [SparseParam.one_hot(0)] * self.horizon

    def walk(self, actions: Sequence[int]) -> list[float]:
        """Rewards along the path with the given actions; works for any depth."""
        return [self.eps if a == a_h else 0.0 for a, a_h in zip(actions, self.a_star)]

    def closed_form_q(self) -> list[np.ndarray]:
        H, e = self.horizon, self.eps
        out = []
        for h in range(H):
            q = np.full((2 ** h, 2), (H - h - 1) * e)
            q[:, self.a_star[h]] = (H - h) * e
            out.append(q)
        return out

    @cached_property
    def mdp(self) -> TabularMdp:
        H = self.horizon
        _check_materializable(H)
        rewards = []
        for h in range(H):
            r = np.zeros((2 ** h, 2))
            r[:, self.a_star[h]] = self.eps
            rewards.append(r)
        return TabularMdp.deterministic(_tree_children(H), rewards, ("a1", "a2"), _heap_levels(H))

    @cached_property
    def features(self) -> FeatureMap:
        H = self.horizon
        _check_materializable(H)
        return FeatureMap(tuple(np.full((2 ** h, 2, 1), (H - h - 1) * self.eps) for h in range(H)))


def make_tree_instance(H: int, eps: float, a_star: Sequence[int] | None = None,
                       rng: np.random.Generator | None = None) -> TreeInstance:
    if H < 1:
        raise ParameterError("H must be >= 1")
    if eps < 0 or H * eps > 1:
        raise ParameterError(f"need 0 <= eps and H*eps <= 1, got H={H}, eps={eps}")
    return TreeInstance(H, float(eps), _draw_actions(H, a_star, rng))


# -- block instance -------------------------------------------------------------


def block_bijection_g(index: int, T: int) -> tuple[int, ...]:
    """Index in [2**T] to an action tuple; MSB first, bit 0 is a1."""
    if T < 1 or not 0 <= index < 2 ** T:
        raise ParameterError(f"index {index} outside [0, 2**{T})")
    return tuple((index >> (T - 1 - t)) & 1 for t in range(T))


def block_bijection_g_inv(actions: Sequence[int]) -> int:
    out = 0
    for a in actions:
        if a not in (A1, A2):
            raise ParameterError(f"unknown action {a}")
        out = 2 * out + int(a)
    return out


@dataclass(frozen=True)
class BlockInstance:
    """Blocks of T levels; only the end of each block's optimal spine pays eps."""

    horizon: int
    block: int
    eps: float
    targets: tuple[int, ...]

    @property
    def n_blocks(self) -> int:
        return self.horizon // self.block

    @cached_property
    def a_star(self) -> tuple[int, ...]:
        return tuple(a for i in self.targets for a in block_bijection_g(i, self.block))

    @property
    def theta_star(self) -> list[SparseParam]:
        return [SparseParam.one_hot(0)] * self.horizon

    def _spine_mask(self, level: int) -> np.ndarray:
        # local x at level qT+t is P*(s', t) for some block-start s' iff
        # its low t bits spell the block's first t optimal actions
        q, t = divmod(level, self.block)
        prefix = block_bijection_g_inv(self.a_star[q * self.block: q * self.block + t]) if t else 0
        return (np.arange(2 ** level) % (2 ** t)) == prefix

    def closed_form_q(self) -> list[np.ndarray]:
        out = []
        for h in range(self.horizon):
            q_blk = h // self.block
            q = np.full((2 ** h, 2), (self.n_blocks - q_blk - 1) * self.eps)
            q[self._spine_mask(h), self.a_star[h]] = (self.n_blocks - q_blk) * self.eps
            out.append(q)
        return out

    def walk(self, actions: Sequence[int]) -> list[float]:
        T = self.block
        out = [0.0] * self.horizon
        for q in range(self.n_blocks):
            if tuple(actions[q * T:(q + 1) * T]) == self.a_star[q * T:(q + 1) * T]:
                out[(q + 1) * T - 1] = self.eps
        return out

    @cached_property
    def mdp(self) -> TabularMdp:
        H, T = self.horizon, self.block
        _check_materializable(H)
        rewards = [np.zeros((2 ** h, 2)) for h in range(H)]
        for q in range(self.n_blocks):
            h = (q + 1) * T - 1
            rewards[h][self._spine_mask(h), self.a_star[h]] = self.eps
        return TabularMdp.deterministic(_tree_children(H), rewards, ("a1", "a2"), _heap_levels(H))

    @cached_property
    def features(self) -> FeatureMap:
        H, T = self.horizon, self.block
        _check_materializable(H)
        return FeatureMap(tuple(
            np.full((2 ** h, 2, 1), (self.n_blocks - h // T) * self.eps) for h in range(H)
        ))


def make_block_instance(H: int, T: int, eps: float, targets: Sequence[int] | None = None,
                        rng: np.random.Generator | None = None) -> BlockInstance:
    if T < 1 or H < 1 or H % T:
        raise ParameterError(f"block length T={T} must divide H={H}")
    if eps < 0 or (H // T) * eps > 1:
        raise ParameterError("need (H/T)*eps <= 1")
    n_blocks = H // T
    if targets is None:
        if rng is None:
            raise ParameterError("need either targets or a random generator")
        targets = rng.integers(0, 2 ** T, size=n_blocks)
    targets = tuple(int(i) for i in targets)
    if len(targets) != n_blocks or not all(0 <= i < 2 ** T for i in targets):
        raise ParameterError(f"need {n_blocks} targets in [0, {2 ** T})")
    return BlockInstance(H, T, float(eps), targets)


# -- bandit instance ----------------------------------------------------------------


@dataclass(frozen=True)
class BanditInstance:
    """n arms, constant feature eps; arm ``best`` pays 2*sign*eps, others 0.

    With ``sign = -1`` the paying arm has a negative reward, so the MDP is
    built with reward range [-1, 1].
    """

    n_arms: int
    eps: float
    sign: int
    best: int

    @property
    def theta_star(self) -> list[SparseParam]:
        return [SparseParam.one_hot(0, self.sign)]

    def reward(self, arm: int) -> float:
        return 2 * self.sign * self.eps if arm == self.best else 0.0

    @cached_property
    def mdp(self) -> TabularMdp:
        r = np.array([[self.reward(a) for a in range(self.n_arms)]])
        return TabularMdp.deterministic([], [r], tuple(f"a{i + 1}" for i in range(self.n_arms)),
                                        reward_range=(-1.0, 1.0))

    @cached_property
    def features(self) -> FeatureMap:
        return FeatureMap((np.full((1, self.n_arms, 1), self.eps),))


def make_bandit_instance(n: int, eps: float, rng: np.random.Generator,
                         sign: int | None = None, best: int | None = None) -> BanditInstance:
    if n < 1:
        raise ParameterError("need at least one arm")
    if eps < 0 or 2 * eps > 1:
        raise ParameterError("need 0 <= 2*eps <= 1")
    if sign is None:
        sign = int(rng.choice([-1, 1]))
    if best is None:
        best = int(rng.integers(n))
    if sign not in (-1, 1) or not 0 <= best < n:
        raise ParameterError("invalid hidden sign or arm")
    return BanditInstance(n, float(eps), sign, best)


# -- Bellman-rank instance ------------------------------------------------------


@dataclass(frozen=True)
class RankInstance:
    """Binary tree of depth log2(d) with terminal reward eps on both actions.

    At level h, feature coordinate ``i < 2**(h+1)`` is "in-level": it equals
    eps only on the pair (local state i // 2, action i % 2).  Coordinates
    ``j >= 2**(h+1)`` equal ``j * eps`` on every level-h pair.
    """

    d: int
    eps: float

    @property
    def horizon(self) -> int:
        return self.d.bit_length() - 1

    @staticmethod
    def feature_norm_factor(d: int) -> float:
        """Largest feature norm divided by eps; eps must not exceed its inverse."""
        H = d.bit_length() - 1
        return max(
            math.sqrt(1 + sum(j * j for j in range(2 ** (h + 1), d))) for h in range(H)
        )

    @property
    def theta_star(self) -> list[SparseParam]:
        return [SparseParam.one_hot(0)] * self.horizon

    @cached_property
    def mdp(self) -> TabularMdp:
        H = self.horizon
        rewards = [np.zeros((2 ** h, 2)) for h in range(H)]
        rewards[-1][:] = self.eps
        return TabularMdp.deterministic(_tree_children(H), rewards, ("a1", "a2"), _heap_levels(H))

    @cached_property
    def features(self) -> FeatureMap:
        H, d, e = self.horizon, self.d, self.eps
        phi = []
        for h in range(H):
            f = np.zeros((2 ** h, 2, d))
            inlevel = 2 ** (h + 1)
            f[:, :, inlevel:] = np.arange(inlevel, d) * e
            i = np.arange(inlevel)
            f[i // 2, i % 2, i] = e
            phi.append(f)
        return FeatureMap(tuple(phi))

    def route(self, pair: int) -> list[SparseParam]:
        """One-hot sequence whose greedy policy ends at terminal pair ``pair``.

        ``pair`` indexes level H-1 as ``2 * local_state + action``.
        """
        H = self.horizon
        if not 0 <= pair < 2 ** H:
            raise ParameterError(f"terminal pair {pair} outside [0, {2 ** H})")
        target = pair // 2
        out = []
        for h in range(H - 1):
            here = target >> (H - 1 - h)
            bit = (target >> (H - 2 - h)) & 1
            out.append(SparseParam.one_hot(2 * here + bit))
        out.append(SparseParam.one_hot(pair))
        return out


def make_rank_instance(d: int, eps: float) -> RankInstance:
    if d < 2 or d & (d - 1):
        raise ParameterError(f"d={d} is not a power of two >= 2")
    if not 0 < eps <= 1:
        raise ParameterError("need 0 < eps <= 1")
    limit = 1 / RankInstance.feature_norm_factor(d)
    if eps > limit:
        raise ParameterError(f"eps={eps} gives features of norm > 1; need eps <= {limit:.6g} for d={d}")
    return RankInstance(d, float(eps))


# -- random assumption-satisfying instances ----------------------------------------


@dataclass(frozen=True, eq=False)
class SparseInstance:
    mdp: TabularMdp
    features: FeatureMap
    theta_star: list[SparseParam]
    gap: float
    eps: float
    base_q: tuple[np.ndarray, ...] = field(repr=False)


def _random_unit_sparse(rng, d, k, net: ParamNet | None) -> SparseParam:
    if net is not None:
        return net.candidate(int(rng.integers(net.size)))
    support = tuple(sorted(int(i) for i in rng.choice(d, size=k, replace=False)))
    v = rng.standard_normal(k)
    return SparseParam(support, tuple(float(x) for x in v / np.linalg.norm(v)))


def make_random_sparse_instance(
    d: int,
    k: int,
    H: int,
    eps: float,
    branching: int,
    rng: np.random.Generator,
    net: ParamNet | None = None,
    transition_noise: float = 0.0,
    stochastic_rewards: bool = False,
) -> SparseInstance:
    """Layered MDP whose Q* is k-sparse linear in the features up to ``eps``.

    Rewards are drawn first; Q* of that base model is encoded exactly along
    theta*_h (phi = Q* theta*_h plus random mass on coordinates outside the
    support).  Last-level rewards are then shifted by independent
    U[-eps, eps] noise, which moves every Q* entry by at most eps.

    ``transition_noise`` sends each step to a uniformly random next-level
    state with that probability.  ``stochastic_rewards`` replaces each reward
    r by the fair two-point law on {0, 2r}.
    """
    if not 1 <= k <= d:
        raise ParameterError("need 1 <= k <= d")
    if H < 1 or branching < 2:
        raise ParameterError("need H >= 1 and branching >= 2")
    if branching ** (H - 1) > 200_000:
        raise ParameterError("instance too large for a desk-scale run")
    if not 0 <= transition_noise <= 1:
        raise ParameterError("transition_noise must lie in [0, 1]")
    if net is not None and (net.d, net.k) != (d, k):
        raise ParameterError("net does not match (d, k)")
    total = 0.5 if stochastic_rewards else 1.0
    budget = total - 2 * eps
    if eps < 0 or budget < 0:
        raise ParameterError(f"need 0 <= eps <= {total / 2}")

    A = branching
    sizes = [A ** h for h in range(H)]
    targets, tprobs = [], []
    for h in range(H - 1):
        child = np.arange(sizes[h])[:, None] * A + np.arange(A)[None, :]
        if transition_noise == 0:
            targets.append(child[:, :, None])
            tprobs.append(np.ones((sizes[h], A, 1)))
            continue
        # child first, then every next-level state with the noise mass
        n1 = sizes[h + 1]
        t = np.concatenate([child[:, :, None], np.broadcast_to(np.arange(n1), (sizes[h], A, n1))], axis=-1)
        p = np.concatenate([np.full((sizes[h], A, 1), 1 - transition_noise),
                            np.full((sizes[h], A, n1), transition_noise / n1)], axis=-1)
        targets.append(t.copy())
        tprobs.append(p)
    base = [rng.uniform(0, budget / H, size=(n, A)) for n in sizes]
    base[-1] = base[-1] + eps
    unit = np.ones((1,))

    def build(rewards):
        if stochastic_rewards:
            vals = tuple(np.stack([np.zeros_like(r), 2 * r], axis=-1) for r in rewards)
            probs = tuple(np.full(v.shape, 0.5) for v in vals)
        else:
            vals = tuple(r[:, :, None] for r in rewards)
            probs = tuple(np.broadcast_to(unit, v.shape).copy() for v in vals)
        return TabularMdp(H, tuple(_seq_levels(sizes)), tuple(f"a{i + 1}" for i in range(A)),
                          tuple(targets), tuple(tprobs), vals, probs)

    base_q = exact_optimal(build(base)).q
    thetas = [_random_unit_sparse(rng, d, k, net) for _ in range(H)]
    phi = []
    for h, th in enumerate(thetas):
        q = base_q[h]
        f = np.zeros((sizes[h], A, d))
        f[:, :, list(th.support)] = q[:, :, None] * np.asarray(th.values)
        off = [j for j in range(d) if j not in th.support]
        if off:
            w = rng.standard_normal((sizes[h], A, len(off)))
            w /= np.linalg.norm(w, axis=-1, keepdims=True)
            room = np.sqrt(np.clip(1 - q ** 2, 0, None)) * rng.uniform(0, 1, size=q.shape)
            f[:, :, off] = w * room[:, :, None]
        phi.append(f)
    features = FeatureMap(tuple(phi))

    rewards = list(base)
    if eps > 0:
        rewards[-1] = rewards[-1] + rng.uniform(-eps, eps, size=rewards[-1].shape)
    mdp = build(rewards)
    gap = assumption_gap(mdp, features, thetas)
    return SparseInstance(mdp, features, thetas, gap, float(eps), tuple(base_q))


def _seq_levels(sizes):
    start = 0
    for n in sizes:
        yield tuple(range(start, start + n))
        start += n
