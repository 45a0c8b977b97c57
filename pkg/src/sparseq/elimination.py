"""Optimistic per-level elimination over a finite sparse candidate family.

Each iteration picks, level by level, the surviving candidate with the largest
empirical value under a roll-in that follows the already-chosen parameters,
then evaluates the resulting greedy policy.  If every empirical Bellman error
is under its threshold the greedy policy is returned; otherwise exactly the
offending per-level choices are removed and the loop repeats.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import EliminationExhausted, IterationCapExceeded, ParameterError
from .mdp import TabularMdp, TabularPolicy, TrajectoryBatch, sample_trajectories
from .sparse import (
    FeatureMap,
    ParamNet,
    SparseParam,
    build_net,
    nearest_candidate,
    q_table,
    sparse_dot,
)


@dataclass(frozen=True)
class EliminationConfig:
    eps: float
    eps_net: float
    eps_stat: float
    delta: float
    m: int | None = None
    net_seed: int = 0

    def __post_init__(self):
        # eps = 0 is the realizable case and is allowed
        if self.eps < 0:
            raise ParameterError("eps must be non-negative")
        for name in ("eps_net", "eps_stat", "delta"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.delta >= 1:
            raise ParameterError("delta must be < 1")
        if self.eps_net > 2:
            raise ParameterError("eps_net must be <= 2")
        if self.m is not None and self.m < 1:
            raise ParameterError("m override must be a positive integer")

    @property
    def inner_threshold(self) -> float:
        return 2 * self.eps + 2 * self.eps_net + 3 * self.eps_stat

    @property
    def last_threshold(self) -> float:
        return self.eps + self.eps_net + self.eps_stat

    def thresholds(self, H: int) -> list[float]:
        return [self.inner_threshold] * (H - 1) + [self.last_threshold]

    def suboptimality_bound(self, H: int) -> float:
        return (4 * self.eps_stat + 2 * self.eps_net + 2 * self.eps) * H


def compute_m(config: EliminationConfig, d: int, k: int, H: int) -> int:
    """Trajectories per dataset; the ``m`` override wins when set."""
    if config.m is not None:
        return config.m
    num = 16 * k * math.log((1 + 4 / config.eps_net) * d) + 16 * math.log(H / config.delta)
    return math.ceil(num / config.eps_stat ** 2)


def iteration_cap(d: int, k: int, H: int, eps_net: float) -> int:
    if not (1 <= k <= d) or H < 1 or eps_net <= 0:
        raise ParameterError("invalid (d, k, H, eps_net)")
    per_support = (1 + 4 / eps_net) ** k
    if not math.isfinite(per_support) or per_support > 2 ** 62:
        raise ParameterError("iteration cap overflows")
    cap = math.ceil(per_support) * math.comb(d, k) * H
    if cap > 2 ** 62:
        raise ParameterError("iteration cap overflows")
    return cap


def level_value_table(net: ParamNet, features: FeatureMap, h: int) -> tuple[np.ndarray, np.ndarray]:
    """``(V, greedy)`` for every level-``h`` state and candidate, each ``(n_h, C)``."""
    q = net.q_values(features.phi[h])
    return q.max(axis=1), q.argmax(axis=1)


def select_level_param(
    net: ParamNet,
    active: np.ndarray,
    features: FeatureMap,
    h: int,
    states: np.ndarray,
    table: np.ndarray | None = None,
) -> int:
    """Surviving candidate maximizing sum_i V_theta(s_i); first in net order on ties."""
    if not np.any(active):
        raise EliminationExhausted(f"candidate set at level {h} is empty")
    if table is None:
        table = level_value_table(net, features, h)[0]
    counts = np.bincount(np.asarray(states, dtype=int), minlength=table.shape[0])
    nz = np.flatnonzero(counts)
    scores = counts[nz].astype(float) @ table[nz]
    scores = np.where(active, scores, -np.inf)
    return int(np.argmax(scores))


def rollin_policy(features: FeatureMap, prefix: Sequence[SparseParam], h: int) -> TabularPolicy:
    """Greedy under ``prefix[h']`` on levels h' < h, action 0 from level h on."""
    if len(prefix) < h:
        raise ParameterError(f"roll-in to level {h} needs {h} parameters")
    table = []
    for lv, phi in enumerate(features.phi):
        if lv < h:
            table.append(q_table(features, prefix[lv], lv).argmax(axis=1))
        else:
            table.append(np.zeros(phi.shape[0], dtype=int))
    return TabularPolicy(tuple(table))


def empirical_bellman_error(
    batch: TrajectoryBatch, features: FeatureMap, thetas: Sequence[SparseParam], h: int
) -> float:
    """Mean one-step inconsistency of ``thetas`` at level ``h`` over a dataset."""
    m = len(batch)
    H = features.horizon
    if m == 0:
        raise ParameterError("empty dataset")
    if not 0 <= h < H:
        raise ParameterError(f"level {h} outside [0, {H})")
    s, a = batch.states[:, h], batch.actions[:, h]
    th = thetas[h]
    err = sparse_dot(features.phi[h][s, a], th.support, th.values) - batch.rewards[:, h]
    if h < H - 1:
        nxt = thetas[h + 1]
        err = err - sparse_dot(features.phi[h + 1][batch.states[:, h + 1]], nxt.support, nxt.values).max(axis=1)
    return float(err.mean())


@dataclass
class IterationRecord:
    t: int
    selected: list[int]
    e_hat: list[float]
    passed: list[bool]
    eliminated: list[int]
    hat_eliminated: bool
    rollin_mean_return: list[float]
    eval_mean_return: float


@dataclass
class RunReport:
    d: int
    k: int
    horizon: int
    m: int
    config: EliminationConfig
    net_size: int
    cap: int
    realized_cap: int
    iterations: list[IterationRecord] = field(default_factory=list)
    returned: list[int] | None = None
    returned_params: list[SparseParam] | None = None
    policy: TabularPolicy | None = None
    reference: list[int] | None = None
    status: str = "running"
    sampled_trajectories: int = 0

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    @property
    def trajectories(self) -> int:
        return self.n_iterations * self.horizon * self.m

    @property
    def samples(self) -> int:
        return self.trajectories * self.horizon

    @property
    def hat_eliminated(self) -> bool:
        return any(r.hat_eliminated for r in self.iterations)

    def to_jsonl(self) -> str:
        head = {
            "record": "run", "d": self.d, "k": self.k, "H": self.horizon, "m": self.m,
            "config": asdict(self.config), "net_size": self.net_size, "cap": self.cap,
            "realized_cap": self.realized_cap, "status": self.status,
            "returned": self.returned, "reference": self.reference,
            "iterations": self.n_iterations, "trajectories": self.trajectories,
            "samples": self.samples, "sampled_trajectories": self.sampled_trajectories,
        }
        lines = [json.dumps(head)]
        lines += [json.dumps({"record": "iteration", **asdict(r)}) for r in self.iterations]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "level", "candidate", "e_hat", "eliminated"])
        for r in self.iterations:
            for h, (c, e) in enumerate(zip(r.selected, r.e_hat)):
                w.writerow([r.t, h, c, repr(e), int(h in r.eliminated)])
        return buf.getvalue()


def run_elimination(
    mdp: TabularMdp,
    features: FeatureMap,
    k: int,
    config: EliminationConfig,
    rng: np.random.Generator,
    net: ParamNet | None = None,
    reference: Sequence[SparseParam] | None = None,
) -> RunReport:
    """Run the elimination loop to termination.

    ``reference`` (optional) is a parameter sequence satisfying the
    approximation assumption; its nearest candidates are tracked so the
    report can say whether any of them was ever eliminated.

    Raises ``EliminationExhausted`` or ``IterationCapExceeded`` with the
    partial report attached when the loop cannot finish normally.
    """
    features.check_against(mdp)
    H, d = mdp.horizon, features.dim
    if net is None:
        net = build_net(d, k, config.eps_net, np.random.default_rng(config.net_seed))
    elif (net.d, net.k) != (d, k):
        raise ParameterError("net does not match (d, k)")
    m = compute_m(config, d, k, H)
    report = RunReport(
        d=d, k=k, horizon=H, m=m, config=config, net_size=net.size,
        cap=iteration_cap(d, k, H, config.eps_net), realized_cap=net.size * H,
    )
    hat = None
    if reference is not None:
        if len(reference) != H:
            raise ParameterError("reference needs one parameter per level")
        hat = [nearest_candidate(net, th)[0] for th in reference]
        report.reference = hat

    tables = [level_value_table(net, features, h) for h in range(H)]
    active = [np.ones(net.size, dtype=bool) for _ in range(H)]
    thresholds = config.thresholds(H)
    for t in range(report.cap):
        sel = [select_level_param(net, active[0], features, 0, np.zeros(1, dtype=int), tables[0][0])]
        rollin_returns = []
        for h in range(1, H):
            pi = _policy_from(tables, sel, h)
            batch = sample_trajectories(mdp, pi, m, rng)
            report.sampled_trajectories += m
            rollin_returns.append(float(batch.rewards.sum(axis=1).mean()))
            sel.append(select_level_param(net, active[h], features, h, batch.states[:, h], tables[h][0]))
        params = [net.candidate(c) for c in sel]
        batch = sample_trajectories(mdp, _policy_from(tables, sel, H), m, rng)
        report.sampled_trajectories += m
        e_hat = [empirical_bellman_error(batch, features, params, h) for h in range(H)]
        passed = [e <= thr for e, thr in zip(e_hat, thresholds)]
        failing = [h for h in range(H) if not passed[h]]
        for h in failing:
            active[h][sel[h]] = False
        report.iterations.append(IterationRecord(
            t=t, selected=sel, e_hat=e_hat, passed=passed, eliminated=failing,
            hat_eliminated=hat is not None and any(sel[h] == hat[h] for h in failing),
            rollin_mean_return=rollin_returns,
            eval_mean_return=float(batch.rewards.sum(axis=1).mean()),
        ))
        if not failing:
            report.returned = sel
            report.returned_params = params
            report.policy = _policy_from(tables, sel, H)
            report.status = "terminated"
            return report
        empty = [h for h in range(H) if not active[h].any()]
        if empty:
            report.status = "exhausted"
            raise EliminationExhausted(f"candidate sets emptied at levels {empty}", report)
    report.status = "cap"
    raise IterationCapExceeded(f"no termination within {report.cap} iterations", report)


def _policy_from(tables, sel: Sequence[int], h: int) -> TabularPolicy:
    # greedy under sel[h'] before level h, action 0 afterwards
    out = []
    for lv, (_, greedy) in enumerate(tables):
        out.append(greedy[:, sel[lv]] if lv < h else np.zeros(greedy.shape[0], dtype=int))
    return TabularPolicy(tuple(out))
