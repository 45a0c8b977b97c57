from __future__ import annotations

import itertools

import numpy as np
from hypothesis import strategies as st

from sparseq.mdp import TabularMdp

# dyadic rewards and probabilities keep every sum exact in floating point
REWARD_STEP = 1 / 64


@st.composite
def small_mdps(draw, max_states: int = 12, max_actions: int = 2, stochastic: bool = True):
    """Layered MDPs with at most ``max_states`` states and per-step reward <= 21/64."""
    H = draw(st.integers(1, 3))
    A = draw(st.integers(1, max_actions))
    sizes = [1]
    for _ in range(H - 1):
        room = max_states - sum(sizes)
        sizes.append(draw(st.integers(1, max(1, min(4, room - (H - len(sizes) - 1))))))
    next_states, next_probs = [], []
    for h in range(H - 1):
        n, n1 = sizes[h], sizes[h + 1]
        tgt = np.zeros((n, A, 2), dtype=int)
        prob = np.zeros((n, A, 2))
        for s, a in itertools.product(range(n), range(A)):
            t0, t1 = draw(st.integers(0, n1 - 1)), draw(st.integers(0, n1 - 1))
            p = draw(st.sampled_from([1.0, 0.5, 0.75])) if stochastic else 1.0
            tgt[s, a] = (t0, t1)
            prob[s, a] = (p, 1 - p)
        next_states.append(tgt)
        next_probs.append(prob)
    reward_values, reward_probs = [], []
    for h in range(H):
        n = sizes[h]
        vals = np.array(draw(st.lists(st.integers(0, 21), min_size=2 * n * A, max_size=2 * n * A)),
                        dtype=float).reshape(n, A, 2) * REWARD_STEP
        p = draw(st.sampled_from([1.0, 0.5, 0.25])) if stochastic else 1.0
        probs = np.empty((n, A, 2))
        probs[..., 0], probs[..., 1] = p, 1 - p
        reward_values.append(vals)
        reward_probs.append(probs)
    levels, start = [], 0
    for n in sizes:
        levels.append(tuple(range(start, start + n)))
        start += n
    return TabularMdp(H, tuple(levels), tuple(f"a{i + 1}" for i in range(A)), tuple(next_states),
                      tuple(next_probs), tuple(reward_values), tuple(reward_probs))


def all_policies(mdp: TabularMdp):
    """Every deterministic policy, as per-level action arrays."""
    slots = [(h, s) for h in range(mdp.horizon) for s in range(mdp.level_sizes[h])]
    for choice in itertools.product(range(mdp.n_actions), repeat=len(slots)):
        table = [np.zeros(n, dtype=int) for n in mdp.level_sizes]
        for (h, s), a in zip(slots, choice):
            table[h][s] = a
        yield tuple(table)


def brute_values(mdp: TabularMdp, table) -> list[list[float]]:
    """V^pi for every state, by plain recursion over the support lists."""
    H = mdp.horizon
    V = [[0.0] * n for n in mdp.level_sizes]
    for h in reversed(range(H)):
        for s in range(mdp.level_sizes[h]):
            a = int(table[h][s])
            v = sum(float(r) * float(p) for r, p in zip(mdp.reward_values[h][s, a], mdp.reward_probs[h][s, a]))
            if h < H - 1:
                v += sum(float(p) * V[h + 1][int(t)] for t, p in zip(mdp.next_states[h][s, a], mdp.next_probs[h][s, a]))
            V[h][s] = v
    return V


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
