"""Finite-horizon layered MDPs, trajectory sampling and exact DP oracles.

States are addressed by ``(level, local index)``; each level also carries a
tuple of global identifiers used for serialization and display.  Actions are
addressed by index; ``mdp.actions`` holds their labels.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError, StructuralError

PROB_TOL = 1e-12
SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Layered finite-horizon MDP.

    Transitions and rewards are finite-support distributions stored as
    parallel arrays of shape ``(n_h, A, K)``: ``next_states[h]`` holds local
    indices into level ``h+1`` (for ``h < H-1``) with ``next_probs[h]`` their
    probabilities; ``reward_values[h]`` and ``reward_probs[h]`` likewise.
    ``K = 1`` is a deterministic entry.
    """

    horizon: int
    levels: tuple[tuple[int, ...], ...]
    actions: tuple[str, ...]
    next_states: tuple[np.ndarray, ...]
    next_probs: tuple[np.ndarray, ...]
    reward_values: tuple[np.ndarray, ...]
    reward_probs: tuple[np.ndarray, ...]
    reward_range: tuple[float, float] = (0.0, 1.0)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._validate()

    # -- construction -----------------------------------------------------

    @classmethod
    def deterministic(
        cls,
        next_state: Sequence[np.ndarray],
        rewards: Sequence[np.ndarray],
        actions: Sequence[str] | None = None,
        levels: Sequence[Sequence[int]] | None = None,
        reward_range: tuple[float, float] = (0.0, 1.0),
    ) -> "TabularMdp":
        """Build a deterministic system from next-state and reward tables.

        ``next_state[h]`` is an int array ``(n_h, A)`` of local indices into
        level ``h+1``; ``rewards[h]`` is a float array ``(n_h, A)``.
        """
        H = len(rewards)
        if H < 1 or len(next_state) != H - 1:
            raise StructuralError("need H reward tables and H-1 transition tables")
        rewards = [np.asarray(r, dtype=float) for r in rewards]
        sizes = [r.shape[0] for r in rewards]
        A = rewards[0].shape[1]
        nxt = [np.asarray(x, dtype=int)[:, :, None] for x in next_state]
        return cls(
            horizon=H,
            levels=_levels(levels, sizes),
            actions=tuple(actions) if actions is not None else tuple(f"a{i + 1}" for i in range(A)),
            next_states=tuple(nxt),
            next_probs=tuple(np.ones(x.shape) for x in nxt),
            reward_values=tuple(r[:, :, None] for r in rewards),
            reward_probs=tuple(np.ones_like(r)[:, :, None] for r in rewards),
            reward_range=reward_range,
        )

    # -- shape helpers ----------------------------------------------------

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(len(lv) for lv in self.levels)

    @property
    def n_states(self) -> int:
        return sum(self.level_sizes)

    @property
    def initial_state(self) -> int:
        return self.levels[0][0]

    def mean_rewards(self, h: int) -> np.ndarray:
        key = ("mean", h)
        if key not in self._cache:
            self._cache[key] = (self.reward_values[h] * self.reward_probs[h]).sum(axis=-1)
        return self._cache[key]

    @property
    def is_deterministic(self) -> bool:
        if "det" not in self._cache:
            det_t = all(np.all(p.max(axis=-1) == 1.0) for p in self.next_probs)
            det_r = all(np.all(p.max(axis=-1) == 1.0) for p in self.reward_probs)
            self._cache["det"] = bool(det_t and det_r)
        return self._cache["det"]

    def expected_next(self, h: int, values: np.ndarray) -> np.ndarray:
        """E[values(s_{h+1}) | s_h, a_h] as an ``(n_h, A)`` table."""
        return (values[self.next_states[h]] * self.next_probs[h]).sum(axis=-1)

    def transition_matrix(self, h: int) -> np.ndarray:
        """Dense ``(n_h, A, n_{h+1})`` transition probabilities."""
        n, A, _ = self.next_states[h].shape
        P = np.zeros((n, A, self.level_sizes[h + 1]))
        i = np.arange(n)[:, None, None]
        a = np.arange(A)[None, :, None]
        np.add.at(P, (np.broadcast_to(i, self.next_states[h].shape),
                      np.broadcast_to(a, self.next_states[h].shape),
                      self.next_states[h]), self.next_probs[h])
        return P

    def local_index(self, h: int, state_id: int) -> int:
        key = ("index", h)
        if key not in self._cache:
            self._cache[key] = {s: i for i, s in enumerate(self.levels[h])}
        try:
            return self._cache[key][state_id]
        except KeyError:
            raise StructuralError(f"state {state_id} is not in level {h}") from None

    # -- validation -------------------------------------------------------

    def _validate(self):
        H = self.horizon
        if H < 1:
            raise StructuralError("horizon must be positive")
        if len(self.levels) != H or len(self.reward_values) != H or len(self.reward_probs) != H:
            raise StructuralError("levels and reward tables must have one entry per level")
        if len(self.next_states) != H - 1 or len(self.next_probs) != H - 1:
            raise StructuralError("need exactly H-1 transition tables")
        if len(self.levels[0]) != 1:
            raise StructuralError("level 0 must contain exactly the initial state")
        seen: set = set()
        for lv in self.levels:
            if not lv:
                raise StructuralError("empty level")
            if seen.intersection(lv) or len(set(lv)) != len(lv):
                raise StructuralError("state identifiers must be unique across levels")
            seen.update(lv)
        A = self.n_actions
        sizes = self.level_sizes
        lo, hi = self.reward_range
        for h, (t, p) in enumerate(zip(self.next_states, self.next_probs)):
            if t.shape != p.shape or t.ndim != 3 or t.shape[:2] != (sizes[h], A):
                raise StructuralError(f"transition table {h} has shape {t.shape}")
            if not np.issubdtype(t.dtype, np.integer):
                raise StructuralError(f"transition targets at level {h} must be integers")
            if t.min() < 0 or t.max() >= sizes[h + 1]:
                raise StructuralError(f"transition target outside level {h + 1}")
            if not np.all(np.isfinite(p)) or p.min() < 0:
                raise StructuralError(f"transition table {h} has invalid entries")
            if np.abs(p.sum(axis=-1) - 1.0).max() > PROB_TOL:
                raise StructuralError(f"transition rows at level {h} do not sum to 1")
        for h, (v, p) in enumerate(zip(self.reward_values, self.reward_probs)):
            if v.shape != p.shape or v.shape[:2] != (sizes[h], A):
                raise StructuralError(f"reward table {h} has shape {v.shape}")
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))) or p.min() < 0:
                raise StructuralError(f"reward table {h} has invalid entries")
            if np.abs(p.sum(axis=-1) - 1.0).max() > PROB_TOL:
                raise StructuralError(f"reward distribution at level {h} does not sum to 1")
            support = v[p > 0]
            if support.size and (support.min() < lo - SUM_TOL or support.max() > hi + SUM_TOL):
                raise StructuralError(f"reward at level {h} outside {self.reward_range}")
        smin, smax = self.path_reward_bounds()
        if smin < lo - SUM_TOL or smax > hi + SUM_TOL:
            raise StructuralError(
                f"reachable reward sums span [{smin}, {smax}], outside {self.reward_range}"
            )

    def path_reward_bounds(self) -> tuple[float, float]:
        """Extremes of the realizable reward sum over every reachable path.

        Exact for both deterministic and stochastic models: a backward pass over
        the support of each transition row and reward distribution.
        """
        H = self.horizon
        lo = np.zeros(self.level_sizes[-1])
        hi = np.zeros(self.level_sizes[-1])
        for h in range(H - 1, -1, -1):
            v, p = self.reward_values[h], self.reward_probs[h]
            rmax = np.where(p > 0, v, -np.inf).max(axis=-1)
            rmin = np.where(p > 0, v, np.inf).min(axis=-1)
            if h < H - 1:
                reach = self.next_probs[h] > 0
                tgt = self.next_states[h]
                nxt_hi = np.where(reach, hi[tgt], -np.inf).max(axis=-1)
                nxt_lo = np.where(reach, lo[tgt], np.inf).min(axis=-1)
            else:
                nxt_hi = nxt_lo = 0.0
            hi = (rmax + nxt_hi).max(axis=-1)
            lo = (rmin + nxt_lo).min(axis=-1)
        return float(lo[0]), float(hi[0])


def _levels(levels, sizes) -> tuple[tuple[int, ...], ...]:
    if levels is not None:
        out = tuple(tuple(int(s) for s in lv) for lv in levels)
        if tuple(len(lv) for lv in out) != tuple(sizes):
            raise StructuralError("level identifiers do not match table sizes")
        return out
    out, start = [], 0
    for n in sizes:
        out.append(tuple(range(start, start + n)))
        start += n
    return tuple(out)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Action index per ``(level, local state)``; ``-1`` marks an undefined entry."""

    table: tuple[np.ndarray, ...]

    @classmethod
    def constant(cls, mdp: TabularMdp, action: int = 0) -> "TabularPolicy":
        return cls(tuple(np.full(n, action, dtype=int) for n in mdp.level_sizes))

    @classmethod
    def from_lists(cls, rows: Sequence[Sequence[int]]) -> "TabularPolicy":
        return cls(tuple(np.asarray(r, dtype=int) for r in rows))

    def __call__(self, h: int, s: int) -> int:
        return int(self.table[h][s])

    def check(self, mdp: TabularMdp):
        if len(self.table) != mdp.horizon:
            raise StructuralError("policy must have one table per level")
        for h, (row, n) in enumerate(zip(self.table, mdp.level_sizes)):
            if row.shape != (n,):
                raise StructuralError(f"policy table {h} has shape {row.shape}, expected ({n},)")
            if row.max(initial=-1) >= mdp.n_actions or row.min(initial=0) < -1:
                raise StructuralError(f"policy table {h} names an unknown action")


@dataclass(frozen=True)
class Trajectory:
    """One episode; ``states`` are local indices within each level."""

    states: tuple[int, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...]

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def global_states(self, mdp: TabularMdp) -> tuple[int, ...]:
        return tuple(mdp.levels[h][s] for h, s in enumerate(self.states))


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """``m`` episodes stored column-wise; every array has shape ``(m, H)``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(
            tuple(int(x) for x in self.states[i]),
            tuple(int(x) for x in self.actions[i]),
            tuple(float(x) for x in self.rewards[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def concat(cls, batches: Sequence["TrajectoryBatch"]) -> "TrajectoryBatch":
        return cls(
            np.concatenate([b.states for b in batches]),
            np.concatenate([b.actions for b in batches]),
            np.concatenate([b.rewards for b in batches]),
        )


def _sample_rows(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    # cdf: (m, K) rows; returns the first column whose cdf exceeds u
    idx = (u[:, None] < cdf).argmax(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def sample_trajectories(
    mdp: TabularMdp, policy: TabularPolicy, m: int, rng: np.random.Generator
) -> TrajectoryBatch:
    """Sample ``m`` independent episodes under ``policy``.

    Random draws are only consumed where the model is stochastic, so a
    deterministic system yields the same episode regardless of the generator
    state.
    """
    if m < 0:
        raise ParameterError("m must be non-negative")
    policy.check(mdp)
    H = mdp.horizon
    states = np.zeros((m, H), dtype=int)
    actions = np.zeros((m, H), dtype=int)
    rewards = np.zeros((m, H))
    s = np.zeros(m, dtype=int)
    for h in range(H):
        a = policy.table[h][s]
        if np.any(a < 0):
            bad = mdp.levels[h][int(s[np.argmax(a < 0)])]
            raise StructuralError(f"policy undefined at reached state {bad} (level {h})")
        states[:, h] = s
        actions[:, h] = a
        vals, probs = mdp.reward_values[h][s, a], mdp.reward_probs[h][s, a]
        if vals.shape[1] == 1:
            rewards[:, h] = vals[:, 0]
        elif np.all(probs.max(axis=1) == 1.0):
            rewards[:, h] = vals[np.arange(m), probs.argmax(axis=1)]
        else:
            k = _sample_rows(np.cumsum(probs, axis=1), rng.random(m))
            rewards[:, h] = vals[np.arange(m), k]
        if h < H - 1:
            tgt, probs = mdp.next_states[h][s, a], mdp.next_probs[h][s, a]
            if tgt.shape[1] == 1:
                s = tgt[:, 0]
            elif np.all(probs.max(axis=1) == 1.0):
                s = tgt[np.arange(m), probs.argmax(axis=1)]
            else:
                s = tgt[np.arange(m), _sample_rows(np.cumsum(probs, axis=1), rng.random(m))]
    return TrajectoryBatch(states, actions, rewards)


def sample_trajectory(mdp: TabularMdp, policy: TabularPolicy, rng: np.random.Generator) -> Trajectory:
    return sample_trajectories(mdp, policy, 1, rng)[0]


@dataclass(frozen=True, eq=False)
class OptimalSolution:
    q: tuple[np.ndarray, ...]   # (n_h, A) per level
    v: tuple[np.ndarray, ...]   # (n_h,) per level
    policy: TabularPolicy

    @property
    def value(self) -> float:
        return float(self.v[0][0])


def exact_optimal(mdp: TabularMdp) -> OptimalSolution:
    """Backward induction on expected rewards; ties go to the lowest action index."""
    if "optimal" in mdp._cache:
        return mdp._cache["optimal"]
    H = mdp.horizon
    q: list = [None] * H
    v: list = [None] * H
    pi: list = [None] * H
    nxt = np.zeros(mdp.level_sizes[-1])
    for h in range(H - 1, -1, -1):
        qh = mdp.mean_rewards(h).copy()
        if h < H - 1:
            qh = qh + mdp.expected_next(h, nxt)
        q[h] = qh
        pi[h] = qh.argmax(axis=1)
        v[h] = qh.max(axis=1)
        nxt = v[h]
    sol = OptimalSolution(tuple(q), tuple(v), TabularPolicy(tuple(pi)))
    mdp._cache["optimal"] = sol
    return sol


def state_distribution(mdp: TabularMdp, policy: TabularPolicy, h: int) -> np.ndarray:
    """Exact law of ``s_h`` under ``policy``, by forward propagation."""
    return _forward(mdp, policy, h)[h]


def _forward(mdp: TabularMdp, policy: TabularPolicy, upto: int) -> list[np.ndarray]:
    policy.check(mdp)
    if not 0 <= upto < mdp.horizon:
        raise ParameterError(f"level {upto} outside [0, {mdp.horizon})")
    dist = [np.zeros(1)]
    dist[0][0] = 1.0
    for h in range(upto):
        d = dist[h]
        a = policy.table[h]
        _require_defined(mdp, a, d, h)
        idx = np.arange(len(d))
        aa = np.maximum(a, 0)
        nxt = np.zeros(mdp.level_sizes[h + 1])
        np.add.at(nxt, mdp.next_states[h][idx, aa], d[:, None] * mdp.next_probs[h][idx, aa])
        dist.append(nxt)
    return dist


def _require_defined(mdp: TabularMdp, a: np.ndarray, d: np.ndarray, h: int):
    bad = (a < 0) & (d > 0)
    if np.any(bad):
        s = mdp.levels[h][int(np.argmax(bad))]
        raise StructuralError(f"policy undefined at reachable state {s} (level {h})")


def exact_policy_value(mdp: TabularMdp, policy: TabularPolicy) -> float:
    """V^pi(s_0) computed exactly from the forward state distributions."""
    dist = _forward(mdp, policy, mdp.horizon - 1)
    total = 0.0
    for h, d in enumerate(dist):
        a = policy.table[h]
        _require_defined(mdp, a, d, h)
        r = mdp.mean_rewards(h)[np.arange(len(d)), np.maximum(a, 0)]
        total += float(d @ r)
    return total
