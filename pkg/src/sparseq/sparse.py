"""Feature maps, k-sparse unit parameters and the finite candidate family.

A candidate is identified by its position in ``ParamNet`` order: supports in
lexicographic order (``itertools.combinations``), and within each support the
sphere points in the order the packing accepted them.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError, StructuralError
from .mdp import TabularMdp, TabularPolicy, exact_optimal

log = logging.getLogger(__name__)

NORM_TOL = 1e-9
MAX_REJECTIONS = 100_000


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """``phi[h]`` has shape ``(n_h, A, d)``."""

    phi: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.phi:
            raise StructuralError("feature map needs at least one level")
        d = self.phi[0].shape[-1]
        for h, f in enumerate(self.phi):
            if f.ndim != 3 or f.shape[-1] != d:
                raise StructuralError(f"features at level {h} have shape {f.shape}")
            if not np.all(np.isfinite(f)):
                raise StructuralError(f"non-finite feature at level {h}")
            norm = np.linalg.norm(f, axis=-1).max(initial=0.0)
            if norm > 1 + NORM_TOL:
                raise StructuralError(f"feature norm {norm:.6g} > 1 at level {h}")

    @property
    def dim(self) -> int:
        return self.phi[0].shape[-1]

    @property
    def horizon(self) -> int:
        return len(self.phi)

    def check_against(self, mdp: TabularMdp):
        if self.horizon != mdp.horizon:
            raise StructuralError("feature map and MDP disagree on the horizon")
        for h, f in enumerate(self.phi):
            if f.shape[:2] != (mdp.level_sizes[h], mdp.n_actions):
                raise StructuralError(f"feature table {h} does not match level {h} of the MDP")


@dataclass(frozen=True)
class SparseParam:
    support: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.values) or not self.support:
            raise ParameterError("support and values must be non-empty and equally long")
        if len(set(self.support)) != len(self.support) or min(self.support) < 0:
            raise ParameterError("support indices must be distinct and non-negative")
        norm = math.sqrt(sum(v * v for v in self.values))
        if abs(norm - 1.0) > NORM_TOL:
            raise ParameterError(f"parameter norm {norm} is not 1")

    @classmethod
    def one_hot(cls, index: int, sign: float = 1.0) -> "SparseParam":
        return cls((index,), (float(sign),))

    @classmethod
    def from_dense(cls, vec: Sequence[float], support: Sequence[int]) -> "SparseParam":
        vec = np.asarray(vec, dtype=float)
        return cls(tuple(int(i) for i in support), tuple(float(vec[i]) for i in support))

    @property
    def k(self) -> int:
        return len(self.support)

    def dense(self, d: int) -> np.ndarray:
        out = np.zeros(d)
        out[list(self.support)] = self.values
        return out


def sparse_dot(phi: np.ndarray, support, values) -> np.ndarray:
    """Contract the last axis of ``phi`` against a sparse vector.

    ``support`` may be ``(k,)`` or ``(C, k)``; in the second case the result
    gains a trailing candidate axis.
    """
    return (phi[..., np.asarray(support)] * np.asarray(values, dtype=float)).sum(axis=-1)


def inner_value(features: FeatureMap, theta: SparseParam, h: int, state: int, action: int) -> float:
    """<phi(s, a), theta> for a level-``h`` state, summed over the support only."""
    return float(sparse_dot(features.phi[h][state, action], theta.support, theta.values))


def q_table(features: FeatureMap, theta: SparseParam, h: int) -> np.ndarray:
    return sparse_dot(features.phi[h], theta.support, theta.values)


def greedy_action(features: FeatureMap, theta: SparseParam, h: int, state: int) -> int:
    return int(np.argmax(sparse_dot(features.phi[h][state], theta.support, theta.values)))


def v_theta(features: FeatureMap, theta: SparseParam, h: int, state: int) -> float:
    return float(np.max(sparse_dot(features.phi[h][state], theta.support, theta.values)))


def greedy_policy(features: FeatureMap, thetas: Sequence[SparseParam]) -> TabularPolicy:
    if len(thetas) != features.horizon:
        raise ParameterError("need one parameter per level")
    return TabularPolicy(tuple(q_table(features, th, h).argmax(axis=1) for h, th in enumerate(thetas)))


def assumption_gap(mdp: TabularMdp, features: FeatureMap, thetas: Sequence[SparseParam]) -> float:
    """max over (h, s, a) of |<phi(s,a), theta_h> - Q*(s,a)|."""
    if len(thetas) != mdp.horizon:
        raise ParameterError(f"expected {mdp.horizon} parameters, got {len(thetas)}")
    features.check_against(mdp)
    q = exact_optimal(mdp).q
    return max(float(np.abs(q_table(features, th, h) - q[h]).max()) for h, th in enumerate(thetas))


# -- the candidate family ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class ParamNet:
    d: int
    k: int
    eps_net: float
    sphere: np.ndarray                  # (N, k) unit vectors
    supports: tuple[tuple[int, ...], ...]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.supports) * len(self.sphere)

    def __len__(self) -> int:
        return self.size

    @property
    def support_index(self) -> np.ndarray:
        """``(C, k)`` support of every candidate."""
        if "sup" not in self._cache:
            sup = np.asarray(self.supports, dtype=int).reshape(len(self.supports), self.k)
            self._cache["sup"] = np.repeat(sup, len(self.sphere), axis=0)
        return self._cache["sup"]

    @property
    def value_matrix(self) -> np.ndarray:
        """``(C, k)`` values of every candidate."""
        if "val" not in self._cache:
            self._cache["val"] = np.tile(self.sphere, (len(self.supports), 1))
        return self._cache["val"]

    def dense_matrix(self) -> np.ndarray:
        out = np.zeros((self.size, self.d))
        rows = np.arange(self.size)[:, None]
        out[rows, self.support_index] = self.value_matrix
        return out

    def candidate(self, c: int) -> SparseParam:
        sup, pt = divmod(c, len(self.sphere))
        return SparseParam(self.supports[sup], tuple(float(x) for x in self.sphere[pt]))

    def index_of(self, theta: SparseParam) -> int | None:
        """Net position of ``theta`` if it is exactly a candidate."""
        order = np.argsort(theta.support)
        key = tuple(int(theta.support[i]) for i in order)
        if key not in self.supports:
            return None
        s = self.supports.index(key)
        vals = np.asarray(theta.values)[order]
        hit = np.flatnonzero(np.all(self.sphere == vals, axis=1))
        return int(s * len(self.sphere) + hit[0]) if hit.size else None

    def q_values(self, phi_block: np.ndarray) -> np.ndarray:
        """<phi, theta_c> for every candidate; appends a candidate axis."""
        return sparse_dot(phi_block, self.support_index, self.value_matrix)

    def bound(self) -> float:
        return (1 + 4 / self.eps_net) ** self.k * math.comb(self.d, self.k)


def _uniform_sphere(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    x = rng.standard_normal((n, k))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _pack_sphere(k: int, radius: float, rng: np.random.Generator, max_rejections: int) -> np.ndarray:
    axes = np.concatenate([np.eye(k), -np.eye(k)])
    points = [p for p in axes]
    if k == 1:
        return np.array(points)
    batch = 4096
    rejected = 0
    while rejected < max_rejections:
        cand = _uniform_sphere(rng, batch, k)
        acc = np.array(points)
        mind = np.sqrt(((cand[:, None, :] - acc[None, :, :]) ** 2).sum(-1)).min(axis=1)
        for i in range(batch):
            if mind[i] >= radius:
                points.append(cand[i])
                rejected = 0
                upd = np.linalg.norm(cand[i + 1:] - cand[i], axis=1)
                mind[i + 1:] = np.minimum(mind[i + 1:], upd)
            else:
                rejected += 1
                if rejected >= max_rejections:
                    break
    return np.array(points)


def build_net(
    d: int,
    k: int,
    eps_net: float,
    rng: np.random.Generator | int | None = 0,
    max_rejections: int = MAX_REJECTIONS,
) -> ParamNet:
    """Greedy ``eps_net/2``-packing of the unit sphere in R^k times all k-subsets of [d].

    The packing is seeded with the 2k signed axis points, then consumes
    uniform sphere samples and keeps any sample at distance >= eps_net/2 from
    everything kept so far; it stops after ``max_rejections`` consecutive
    rejections.  For k = 1 the net is exactly {+1, -1}.
    """
    if not (1 <= k <= d):
        raise ParameterError(f"need 1 <= k <= d, got k={k}, d={d}")
    if not (0 < eps_net <= 2):
        raise ParameterError(f"eps_net must lie in (0, 2], got {eps_net}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    sphere = _pack_sphere(k, eps_net / 2, rng, max_rejections)
    supports = tuple(itertools.combinations(range(d), k))
    net = ParamNet(d, k, eps_net, sphere, supports)
    if net.size > net.bound() * (1 + 1e-12):
        raise ParameterError("packing exceeded the volumetric cardinality bound")
    return net


def min_separation(net: ParamNet) -> float:
    pts = net.sphere
    diff = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(diff, np.inf)
    return float(diff.min())


def covering_fraction(net: ParamNet, rng: np.random.Generator, n_probes: int = 10_000) -> float:
    """Fraction of uniform sphere probes within eps_net/2 of the sphere net."""
    probes = _uniform_sphere(rng, n_probes, net.k)
    dist = np.sqrt(((probes[:, None, :] - net.sphere[None, :, :]) ** 2).sum(-1)).min(axis=1)
    frac = float(np.mean(dist <= net.eps_net / 2))
    if frac < 0.99:
        log.warning("covering probe: only %.4f of probes within eps_net/2", frac)
    return frac


def nearest_candidate(net: ParamNet, theta: SparseParam) -> tuple[int, float]:
    """Index and distance of the closest candidate (first in net order on ties)."""
    if theta.k != net.k or max(theta.support) >= net.d:
        raise ParameterError("parameter does not match the net's (d, k)")
    target = theta.dense(net.d)
    dist = np.linalg.norm(net.dense_matrix() - target, axis=1)
    c = int(np.argmin(dist))
    return c, float(dist[c])


# -- export -----------------------------------------------------------------


def dump_net(net: ParamNet) -> str:
    lines = [f"net d={net.d} k={net.k} eps_net={net.eps_net:.17g}"]
    lines += ["support " + " ".join(str(i) for i in s) for s in net.supports]
    lines += ["point " + " ".join(f"{x:.17g}" for x in p) for p in net.sphere]
    return "\n".join(lines) + "\n"


def load_net(text: str) -> ParamNet:
    head, *rest = text.strip().splitlines()
    fields = dict(kv.split("=") for kv in head.split()[1:])
    supports, points = [], []
    for line in rest:
        tag, *vals = line.split()
        if tag == "support":
            supports.append(tuple(int(v) for v in vals))
        elif tag == "point":
            points.append([float(v) for v in vals])
        else:
            raise StructuralError(f"unknown net record {tag!r}")
    return ParamNet(int(fields["d"]), int(fields["k"]), float(fields["eps_net"]),
                    np.array(points), tuple(supports))
