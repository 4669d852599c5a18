"""Exact marginal inference.

``query_marginal`` runs variable elimination with a deterministic min-fill
order. ``enumerate_joint`` materialises the full joint table and is kept as
an independent oracle for testing; it shares nothing with the elimination
path beyond reading CPDs.
"""

from __future__ import annotations

import functools
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidEvidence,
    StateSpaceTooLarge,
    TargetObserved,
    ZeroProbabilityEvidence,
)
from .network import BayesianNetwork, Evidence

MAX_JOINT_STATES = 2**24
_EINSUM_CHUNK = 16


class MarginalTable(Mapping):
    """Posterior marginal vectors keyed by variable id (read-only)."""

    __slots__ = ("_vectors",)

    def __init__(self, vectors: Mapping[str, np.ndarray]):
        frozen = {}
        for vid, vec in vectors.items():
            arr = np.array(vec, dtype=np.float64)
            arr.setflags(write=False)
            frozen[vid] = arr
        self._vectors = frozen

    def __getitem__(self, vid):
        return self._vectors[vid]

    def __iter__(self):
        return iter(self._vectors)

    def __len__(self):
        return len(self._vectors)

    def __repr__(self):
        inner = ", ".join(f"{k}: {np.round(v, 6).tolist()}" for k, v in self._vectors.items())
        return f"MarginalTable({{{inner}}})"


@dataclass(frozen=True)
class Factor:
    scope: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != len(self.scope):
            raise ValueError("factor values must have one axis per scope variable")

    def reduce(self, evidence: Mapping[str, int]) -> Factor:
        if not any(v in evidence for v in self.scope):
            return self
        index = tuple(evidence[v] if v in evidence else slice(None) for v in self.scope)
        scope = tuple(v for v in self.scope if v not in evidence)
        return Factor(scope, self.values[index])


def _factor_product(factors: Sequence[Factor], keep: Sequence[str]) -> Factor:
    """Multiply ``factors`` and sum out every variable not in ``keep``."""
    if len(factors) > _EINSUM_CHUNK:
        # einsum takes at most 32 operands; fold the surplus in first
        head = factors[:_EINSUM_CHUNK]
        scope = list(dict.fromkeys(v for f in head for v in f.scope))
        return _factor_product([_factor_product(head, scope), *factors[_EINSUM_CHUNK:]], keep)
    axes: dict[str, int] = {}
    operands = []
    for f in factors:
        operands.append(f.values)
        operands.append([axes.setdefault(v, len(axes)) for v in f.scope])
    keep = tuple(v for v in keep if v in axes)
    values = np.einsum(*operands, [axes[v] for v in keep], optimize=False)
    return Factor(keep, np.asarray(values, dtype=np.float64))


def _relevant_variables(network: BayesianNetwork, roots: Iterable[str]) -> set[str]:
    # barren nodes (non-ancestors of targets and evidence) sum to one and can be dropped
    keep = set()
    stack = list(roots)
    while stack:
        v = stack.pop()
        if v in keep:
            continue
        keep.add(v)
        stack.extend(network.parents(v))
    return keep


def min_fill_order(scopes: Iterable[Sequence[str]], eliminate: Iterable[str]) -> list[str]:
    """Greedy min-fill elimination order; ties go to the smallest id."""
    adj: dict[str, set[str]] = {}
    for scope in scopes:
        for v in scope:
            adj.setdefault(v, set()).update(u for u in scope if u != v)
    remaining = set(eliminate)
    for v in remaining:
        adj.setdefault(v, set())
    order = []
    while remaining:
        best, best_fill = None, None
        for v in sorted(remaining):
            nbrs = sorted(adj[v])
            fill = 0
            for i, a in enumerate(nbrs):
                for b in nbrs[i + 1:]:
                    if b not in adj[a]:
                        fill += 1
            if best_fill is None or fill < best_fill:
                best, best_fill = v, fill
        nbrs = adj.pop(best)
        for a in nbrs:
            adj[a].discard(best)
            adj[a].update(n for n in nbrs if n != a)
        remaining.discard(best)
        order.append(best)
    return order


def _check_query(network: BayesianNetwork, evidence: Evidence, targets: Sequence[str]) -> None:
    if not targets:
        raise ValueError("at least one target is required")
    evidence.validate(network)
    for t in targets:
        if t not in network:
            raise InvalidEvidence(f"unknown target variable {t!r}")
        if t in evidence:
            raise TargetObserved(f"target {t!r} is observed in the evidence")


def _eliminate_for(network: BayesianNetwork, evidence: Evidence, target: str) -> np.ndarray:
    relevant = _relevant_variables(network, [target, *evidence])
    factors = []
    for vid in network.topological_order():
        if vid not in relevant:
            continue
        cpd = network.cpd(vid)
        f = Factor(cpd.parent_order + (vid,), network.cpd_array(vid)).reduce(evidence)
        factors.append(f)
    hidden = [v for v in relevant if v not in evidence and v != target]
    order = min_fill_order((f.scope for f in factors), hidden)
    for var in order:
        touching = [f for f in factors if var in f.scope]
        rest = [f for f in factors if var not in f.scope]
        scope = []
        for f in touching:
            scope.extend(v for v in f.scope if v != var and v not in scope)
        new = _factor_product(touching, scope)
        peak = new.values.max() if new.values.size else 0.0
        if peak > 0:
            # rescale to keep long chains away from underflow; constants cancel on normalization
            new = Factor(new.scope, new.values / peak)
        factors = rest + [new]
    # scalar factors carry only the evidence likelihood, which normalization
    # removes; a zero among them still means impossible evidence
    if any(not f.scope and f.values == 0 for f in factors):
        raise ZeroProbabilityEvidence(f"evidence {dict(evidence)} has probability 0")
    factors = [f for f in factors if f.scope]
    result = _factor_product(factors, (target,))
    vec = result.values
    if vec.shape != (network.cardinality(target),):
        vec = np.broadcast_to(vec, (network.cardinality(target),)).copy()
    total = vec.sum()
    if not total > 0:
        raise ZeroProbabilityEvidence(f"evidence {dict(evidence)} has probability 0")
    return vec / total


@functools.lru_cache(maxsize=1 << 16)
def _cached_marginal(network: BayesianNetwork, evidence: Evidence, target: str) -> np.ndarray:
    vec = _eliminate_for(network, evidence, target)
    vec.setflags(write=False)
    return vec


def query_marginal(
    network: BayesianNetwork, evidence: Evidence | Mapping[str, int], targets: Sequence[str]
) -> MarginalTable:
    """Posterior marginals ``p(target | evidence)`` by variable elimination.

    Results are memoised per (network, evidence, target); networks and
    evidence are immutable so cached vectors never go stale.
    """
    if not isinstance(evidence, Evidence):
        evidence = Evidence(evidence)
    targets = list(targets)
    _check_query(network, evidence, targets)
    return MarginalTable({t: _cached_marginal(network, evidence, t) for t in targets})


def enumerate_joint(
    network: BayesianNetwork, evidence: Evidence | Mapping[str, int], targets: Sequence[str]
) -> MarginalTable:
    """Same contract as :func:`query_marginal`, by summing the explicit joint."""
    if not isinstance(evidence, Evidence):
        evidence = Evidence(evidence)
    targets = list(targets)
    _check_query(network, evidence, targets)
    ids = network.ids
    size = math.prod(network.cardinality(v) for v in ids)
    if size > MAX_JOINT_STATES:
        raise StateSpaceTooLarge(f"joint has {size} states (limit {MAX_JOINT_STATES})")

    axis = {v: i for i, v in enumerate(ids)}
    joint = np.ones([network.cardinality(v) for v in ids])
    for vid in ids:
        cpd = network.cpd(vid)
        table = network.cpd_array(vid)
        scope = cpd.parent_order + (vid,)
        # lift the CPD to a full-rank broadcastable array
        perm = sorted(range(len(scope)), key=lambda i: axis[scope[i]])
        lifted = np.transpose(table, perm)
        shape = [1] * len(ids)
        for i in perm:
            shape[axis[scope[i]]] = table.shape[i]
        joint = joint * lifted.reshape(shape)

    index = tuple(evidence[v] if v in evidence else slice(None) for v in ids)
    conditioned = joint[index]
    free = [v for v in ids if v not in evidence]
    total = conditioned.sum()
    if not total > 0:
        raise ZeroProbabilityEvidence(f"evidence {dict(evidence)} has probability 0")
    out = {}
    for t in targets:
        k = free.index(t)
        others = tuple(i for i in range(len(free)) if i != k)
        out[t] = conditioned.sum(axis=others) / total
    return MarginalTable(out)


def map_state(network: BayesianNetwork, evidence: Evidence | Mapping[str, int], target: str) -> int:
    """Index of the most probable state of ``target``; ties go to the lowest index."""
    vec = query_marginal(network, evidence, [target])[target]
    return int(np.argmax(vec))
