"""JSON documents for MDPs, feature maps and parameter sequences.

MDP document::

    {"horizon": H, "levels": [[id, ...], ...], "actions": [label, ...],
     "initial_state": id, "reward_range": [lo, hi],
     "transitions": [[[entry per action] per state] per level < H-1],
     "rewards":     [[[entry per action] per state] per level]}

A transition entry is a target id (deterministic) or a list of
``[target id, probability]`` pairs; a reward entry is a number or a list of
``[value, probability]`` pairs.  Floats go through ``repr`` so a write/read
round trip is exact.
"""
from __future__ import annotations

import json
from typing import Any, Sequence

import numpy as np

from .errors import StructuralError
from .mdp import TabularMdp
from .sparse import FeatureMap, SparseParam


def mdp_to_dict(mdp: TabularMdp) -> dict[str, Any]:
    H = mdp.horizon
    transitions = []
    for h in range(H - 1):
        ids = mdp.levels[h + 1]
        tgt, prob = mdp.next_states[h], mdp.next_probs[h]
        transitions.append([
            [_entry([ids[t] for t in tgt[s, a]], prob[s, a], int) for a in range(mdp.n_actions)]
            for s in range(tgt.shape[0])
        ])
    rewards = []
    for h in range(H):
        val, prob = mdp.reward_values[h], mdp.reward_probs[h]
        rewards.append([
            [_entry(val[s, a], prob[s, a], float) for a in range(mdp.n_actions)]
            for s in range(val.shape[0])
        ])
    return {
        "horizon": H,
        "levels": [list(lv) for lv in mdp.levels],
        "actions": list(mdp.actions),
        "initial_state": mdp.initial_state,
        "reward_range": list(mdp.reward_range),
        "transitions": transitions,
        "rewards": rewards,
    }


def _entry(values, probs, cast):
    if len(probs) == 1:
        return cast(values[0])
    return [[cast(v), float(p)] for v, p in zip(values, probs)]


def mdp_from_dict(doc: dict[str, Any]) -> TabularMdp:
    try:
        H = int(doc["horizon"])
        levels = tuple(tuple(int(s) for s in lv) for lv in doc["levels"])
        actions = tuple(str(a) for a in doc["actions"])
        trans, rew = doc["transitions"], doc["rewards"]
    except (KeyError, TypeError, ValueError) as e:
        raise StructuralError(f"malformed MDP document: {e}") from None
    if len(levels) != H or len(trans) != H - 1 or len(rew) != H:
        raise StructuralError("level, transition and reward counts must match the horizon")
    if "initial_state" in doc and (not levels[0] or doc["initial_state"] != levels[0][0]):
        raise StructuralError("initial_state must be the level-0 state")
    A = len(actions)
    index = [{s: i for i, s in enumerate(lv)} for lv in levels]

    def table(rows, h, what, decode):
        if len(rows) != len(levels[h]):
            raise StructuralError(f"{what} at level {h}: expected {len(levels[h])} states, got {len(rows)}")
        cells = []
        for s, row in enumerate(rows):
            if row is None or len(row) != A:
                raise StructuralError(f"{what} at level {h}, state {levels[h][s]}: missing action entries")
            for a, e in enumerate(row):
                if e is None:
                    raise StructuralError(f"{what} at level {h}, state {levels[h][s]}, action {actions[a]} missing")
                cells.append(_decode(e, decode))
        K = max(len(c[0]) for c in cells)
        vals = np.zeros((len(rows), A, K))
        probs = np.zeros((len(rows), A, K))
        for n, (v, p) in enumerate(cells):
            s, a = divmod(n, A)
            # pad short supports by repeating the first value with zero mass
            vals[s, a] = v + [v[0]] * (K - len(v))
            probs[s, a] = p + [0.0] * (K - len(p))
        return vals, probs

    next_states, next_probs = [], []
    for h in range(H - 1):
        def to_local(t, h=h):
            try:
                return index[h + 1][int(t)]
            except KeyError:
                raise StructuralError(f"transition target {t} is not a level-{h + 1} state") from None
        v, p = table(trans[h], h, "transition", to_local)
        next_states.append(v.astype(int))
        next_probs.append(p)
    reward_values, reward_probs = [], []
    for h in range(H):
        v, p = table(rew[h], h, "reward", float)
        reward_values.append(v)
        reward_probs.append(p)
    lo, hi = doc.get("reward_range", (0.0, 1.0))
    return TabularMdp(H, levels, actions, tuple(next_states), tuple(next_probs),
                      tuple(reward_values), tuple(reward_probs), (float(lo), float(hi)))


def _decode(entry, decode):
    if isinstance(entry, list):
        if not entry:
            raise StructuralError("empty distribution entry")
        return [decode(v) for v, _ in entry], [float(p) for _, p in entry]
    return [decode(entry)], [1.0]


def dump_mdp(mdp: TabularMdp) -> str:
    return json.dumps(mdp_to_dict(mdp))


def load_mdp(text: str) -> TabularMdp:
    return mdp_from_dict(json.loads(text))


def dump_features(features: FeatureMap) -> str:
    return json.dumps({"dim": features.dim, "phi": [f.tolist() for f in features.phi]})


def load_features(text: str) -> FeatureMap:
    doc = json.loads(text)
    phi = tuple(np.asarray(f, dtype=float).reshape(len(f), -1, doc["dim"]) for f in doc["phi"])
    return FeatureMap(phi)


def params_to_list(thetas: Sequence[SparseParam]) -> list[dict]:
    return [{"support": list(t.support), "values": list(t.values)} for t in thetas]


def params_from_list(items: Sequence[dict]) -> list[SparseParam]:
    return [SparseParam(tuple(int(i) for i in it["support"]), tuple(float(v) for v in it["values"]))
            for it in items]
