"""Discrete Bayesian networks: variables, DAG structure and CPD tables.

Networks are immutable once built. CPD tables are stored row-major: row
``j`` holds the child distribution for the ``j``-th joint parent
configuration, enumerated with the first parent varying slowest (C order).
"""

from __future__ import annotations

import heapq
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .errors import (
    CardinalityMismatch,
    CycleDetected,
    DuplicateFeatureName,
    InvalidEvidence,
    MissingCpd,
    NetworkError,
    RowNotNormalized,
)
from .fileio import atomic_write_text, dumps_canonical, read_json

ROW_TOLERANCE = 1e-6

ROTATIONAL = "R"
TRANSLATIONAL = "T"
AGE = "Age"
STABLE, UNSTABLE = 0, 1
ABSENT, PRESENT = 0, 1

INSTABILITY_STATES = ("stable", "unstable")
FEATURE_STATES = ("absent", "present")
AGE_STATES = ("not_elderly", "elderly")

# canonical id -> human-readable name, in the order the findings are listed clinically
CANONICAL_FEATURES = {
    "PSD": "PSD",
    "divergent_SI": "anteriorly divergent SI",
    "parallel_SI": "parallel SI",
    "sacral_fx": "non-diastatic sacral fx",
    "diastatic_sacral_fx": "diastatic sacral fx",
    "ISp": "ISp",
    "ring_fx": "ring fx",
}

_FEATURE_ALIASES = {
    "pubic symphysis diastasis": "PSD",
    "anteriorly divergent si joint": "divergent_SI",
    "anteriorly divergent sacroiliac joint": "divergent_SI",
    "parallel si joint": "parallel_SI",
    "parallel sacroiliac joint": "parallel_SI",
    "sacral fx": "sacral_fx",
    "ischial spine avulsion": "ISp",
    "ring fractures": "ring_fx",
    "innominate bone fractures": "ring_fx",
}


@dataclass(frozen=True)
class Variable:
    id: str
    name: str
    states: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if not self.id:
            raise NetworkError("variable id must be non-empty")
        if len(self.states) < 2:
            raise CardinalityMismatch(f"variable {self.id!r} needs at least 2 states")
        if len(set(self.states)) != len(self.states):
            raise NetworkError(f"variable {self.id!r} has duplicate state labels")

    @property
    def cardinality(self) -> int:
        return len(self.states)

    def index(self, state) -> int:
        """Resolve a state label (or an in-range integer index) to an index."""
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            if 0 <= state < self.cardinality:
                return int(state)
            raise InvalidEvidence(f"state index {state} out of range for {self.id!r}")
        try:
            return self.states.index(state)
        except ValueError:
            raise InvalidEvidence(f"{state!r} is not a state of {self.id!r}") from None


@dataclass(frozen=True)
class NetworkStructure:
    variables: tuple[Variable, ...]
    parents: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        variables = tuple(self.variables)
        ids = [v.id for v in variables]
        if len(set(ids)) != len(ids):
            raise NetworkError("variable ids must be unique")
        known = set(ids)
        parents = {}
        for vid in ids:
            ps = tuple(self.parents.get(vid, ()))
            if vid in ps:
                raise CycleDetected(f"self-loop on {vid!r}")
            if len(set(ps)) != len(ps):
                raise NetworkError(f"duplicate parent of {vid!r}")
            for p in ps:
                if p not in known:
                    raise NetworkError(f"unknown parent {p!r} of {vid!r}")
            parents[vid] = ps
        extra = set(self.parents) - known
        if extra:
            raise NetworkError(f"parents given for unknown variables {sorted(extra)}")
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "parents", MappingProxyType(parents))
        _kahn(ids, parents)  # raises CycleDetected

    @classmethod
    def from_edges(cls, variables: Iterable[Variable], edges: Iterable[tuple[str, str]]):
        variables = tuple(variables)
        parents: dict[str, list[str]] = {v.id: [] for v in variables}
        for parent, child in edges:
            if child not in parents:
                raise NetworkError(f"edge into unknown variable {child!r}")
            parents[child].append(parent)
        return cls(variables, {k: tuple(v) for k, v in parents.items()})

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(v.id for v in self.variables)

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(p, v.id) for v in self.variables for p in self.parents[v.id]]

    def variable(self, vid: str) -> Variable:
        for v in self.variables:
            if v.id == vid:
                return v
        raise KeyError(vid)

    def cardinality(self, vid: str) -> int:
        return self.variable(vid).cardinality


def _kahn(ids: Sequence[str], parents: Mapping[str, Sequence[str]]) -> list[str]:
    """Topological sort with ascending-id tie-breaking."""
    indegree = {v: len(parents[v]) for v in ids}
    children: dict[str, list[str]] = {v: [] for v in ids}
    for v in ids:
        for p in parents[v]:
            children[p].append(v)
    heap = [v for v in ids if indegree[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for c in children[v]:
            indegree[c] -= 1
            if indegree[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != len(ids):
        stuck = sorted(v for v in ids if indegree[v] > 0)
        raise CycleDetected(f"parent relation has a cycle through {stuck}")
    return order


def _normalize_row(row: np.ndarray) -> np.ndarray:
    # idempotent on its own output so that saved networks reload bit-exactly
    total = math.fsum(row)
    if total == 1.0:
        return row
    out = row / total
    k = int(np.argmax(out))
    out[k] = 1.0 - math.fsum(np.delete(out, k))
    # the fix-up can still leave the exact sum one ulp away from 1; step the
    # largest entry toward it so the result is a fixed point
    for _ in range(8):
        total = math.fsum(out)
        if total == 1.0:
            break
        out[k] = np.nextafter(out[k], -np.inf if total > 1.0 else np.inf)
    return out


@dataclass(frozen=True)
class Cpd:
    child: str
    parent_order: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "parent_order", tuple(self.parent_order))
        table = np.array(self.table, dtype=np.float64)
        if table.ndim == 1:
            table = table[None, :]
        if table.ndim != 2:
            raise CardinalityMismatch(f"CPD of {self.child!r} must be a 2-d table")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    def __eq__(self, other):
        if not isinstance(other, Cpd):
            return NotImplemented
        return (
            self.child == other.child
            and self.parent_order == other.parent_order
            and self.table.shape == other.table.shape
            and bool(np.array_equal(self.table, other.table))
        )

    __hash__ = None


class BayesianNetwork:
    """A validated, immutable discrete Bayesian network."""

    __slots__ = ("structure", "_cpds", "_order", "_card", "_index")

    def __init__(self, structure: NetworkStructure, cpds: Mapping[str, Cpd]):
        object.__setattr__(self, "structure", structure)
        object.__setattr__(self, "_cpds", MappingProxyType(dict(cpds)))
        object.__setattr__(self, "_order", tuple(_kahn(structure.ids, structure.parents)))
        object.__setattr__(self, "_card", MappingProxyType(
            {v.id: v.cardinality for v in structure.variables}))
        object.__setattr__(self, "_index", MappingProxyType(
            {v.id: v for v in structure.variables}))

    def __setattr__(self, name, value):
        raise AttributeError("BayesianNetwork is immutable")

    def __repr__(self):
        return f"BayesianNetwork({len(self._order)} variables, {len(self.structure.edges)} edges)"

    @property
    def ids(self) -> tuple[str, ...]:
        return self.structure.ids

    @property
    def variables(self) -> tuple[Variable, ...]:
        return self.structure.variables

    def variable(self, vid: str) -> Variable:
        try:
            return self._index[vid]
        except KeyError:
            raise KeyError(vid) from None

    def __contains__(self, vid) -> bool:
        return vid in self._index

    def cardinality(self, vid: str) -> int:
        return self._card[vid]

    def parents(self, vid: str) -> tuple[str, ...]:
        return self.structure.parents[vid]

    def cpd(self, vid: str) -> Cpd:
        return self._cpds[vid]

    @property
    def cpds(self) -> Mapping[str, Cpd]:
        return self._cpds

    def cpd_array(self, vid: str) -> np.ndarray:
        """CPD of ``vid`` reshaped to (*parent cardinalities, child cardinality)."""
        cpd = self._cpds[vid]
        shape = tuple(self._card[p] for p in cpd.parent_order) + (self._card[vid],)
        return cpd.table.reshape(shape)

    def topological_order(self) -> list[str]:
        return list(self._order)

    def structurally_equal(self, other: BayesianNetwork) -> bool:
        return (
            self.structure == other.structure
            and set(self._cpds) == set(other._cpds)
            and all(self._cpds[k] == other._cpds[k] for k in self._cpds)
        )


def build_network(structure: NetworkStructure, cpds: Iterable[Cpd]) -> BayesianNetwork:
    """Validate ``cpds`` against ``structure`` and return an immutable network.

    Rows must sum to 1 within 1e-6; accepted rows are then re-normalized.
    """
    cpds = list(cpds)
    if not structure.variables or not cpds:
        raise NetworkError("structure and cpds must be nonempty")
    by_child: dict[str, Cpd] = {}
    for cpd in cpds:
        if cpd.child not in structure.parents:
            raise NetworkError(f"CPD for unknown variable {cpd.child!r}")
        if cpd.child in by_child:
            raise NetworkError(f"more than one CPD for {cpd.child!r}")
        by_child[cpd.child] = cpd

    checked = {}
    for var in structure.variables:
        cpd = by_child.get(var.id)
        if cpd is None:
            raise MissingCpd(f"no CPD for variable {var.id!r}")
        if tuple(cpd.parent_order) != structure.parents[var.id]:
            raise CardinalityMismatch(
                f"CPD parent_order {list(cpd.parent_order)} of {var.id!r} does not "
                f"match structure parents {list(structure.parents[var.id])}"
            )
        n_rows = math.prod(structure.cardinality(p) for p in cpd.parent_order)
        if cpd.table.shape != (n_rows, var.cardinality):
            raise CardinalityMismatch(
                f"CPD of {var.id!r} has shape {cpd.table.shape}, "
                f"expected ({n_rows}, {var.cardinality})"
            )
        table = np.array(cpd.table, dtype=np.float64)
        if not np.all(np.isfinite(table)) or np.any(table < 0) or np.any(table > 1):
            raise NetworkError(f"CPD of {var.id!r} has entries outside [0, 1]")
        for j, row in enumerate(table):
            total = math.fsum(row)
            if abs(total - 1.0) > ROW_TOLERANCE:
                raise RowNotNormalized(var.id, j, total)
            table[j] = _normalize_row(row)
        checked[var.id] = Cpd(var.id, cpd.parent_order, table)
    return BayesianNetwork(structure, checked)


def topological_order(network: BayesianNetwork) -> list[str]:
    """Variable ids with every parent before its children, ties by ascending id."""
    return network.topological_order()


def canonical_feature(name: str) -> tuple[str, str]:
    """Map a feature given by id, clinical name, or alias to ``(id, name)``."""
    if name in CANONICAL_FEATURES:
        return name, CANONICAL_FEATURES[name]
    key = name.strip().lower()
    for fid, label in CANONICAL_FEATURES.items():
        if key in (fid.lower(), label.lower()):
            return fid, label
    if key in _FEATURE_ALIASES:
        fid = _FEATURE_ALIASES[key]
        return fid, CANONICAL_FEATURES[fid]
    return name, name


def default_pelvic_structure(feature_classes: Sequence[str], include_age: bool = True) -> NetworkStructure:
    """The default grading template.

    Binary R and T instability nodes are parents of every binary feature
    node; with ``include_age`` a binary elderly node is a parent of R and T.
    """
    if not feature_classes:
        raise NetworkError("at least one feature class is required")
    features = [canonical_feature(f) for f in feature_classes]
    ids = [fid for fid, _ in features]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise DuplicateFeatureName(f"duplicate feature classes {dup}")
    if set(ids) & {ROTATIONAL, TRANSLATIONAL, AGE}:
        raise DuplicateFeatureName("feature names collide with reserved node ids")

    variables = []
    parents: dict[str, tuple[str, ...]] = {}
    if include_age:
        variables.append(Variable(AGE, "elderly", AGE_STATES))
        parents[AGE] = ()
    inst_parents = (AGE,) if include_age else ()
    variables.append(Variable(ROTATIONAL, "rotational instability", INSTABILITY_STATES))
    variables.append(Variable(TRANSLATIONAL, "translational instability", INSTABILITY_STATES))
    parents[ROTATIONAL] = inst_parents
    parents[TRANSLATIONAL] = inst_parents
    for fid, label in features:
        variables.append(Variable(fid, label, FEATURE_STATES))
        parents[fid] = (ROTATIONAL, TRANSLATIONAL)
    return NetworkStructure(tuple(variables), parents)


def feature_nodes(network: BayesianNetwork | NetworkStructure) -> list[str]:
    """Ids of finding nodes: everything except the instability and age nodes."""
    ids = network.ids
    return [v for v in ids if v not in (ROTATIONAL, TRANSLATIONAL, AGE)]


class Evidence(Mapping):
    """Immutable, hashable partial assignment ``variable id -> state index``."""

    __slots__ = ("_items", "_dict")

    def __init__(self, assignments: Mapping[str, int] | Iterable[tuple[str, int]] = ()):
        items = dict(assignments.items() if isinstance(assignments, Mapping) else assignments)
        for k, v in items.items():
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 0:
                raise InvalidEvidence(f"state index for {k!r} must be a non-negative int")
        self._dict = {k: int(v) for k, v in items.items()}
        self._items = tuple(sorted(self._dict.items()))

    @classmethod
    def from_labels(cls, network: BayesianNetwork, assignments: Mapping[str, object]) -> Evidence:
        out = {}
        for vid, state in assignments.items():
            if vid not in network:
                raise InvalidEvidence(f"unknown variable {vid!r}")
            out[vid] = network.variable(vid).index(state)
        return cls(out)

    def __getitem__(self, key):
        return self._dict[key]

    def __iter__(self):
        return (k for k, _ in self._items)

    def __len__(self):
        return len(self._items)

    def __hash__(self):
        return hash(self._items)

    def __eq__(self, other):
        if isinstance(other, Evidence):
            return self._items == other._items
        return NotImplemented

    def __repr__(self):
        return f"Evidence({dict(self._items)!r})"

    def merge(self, other: Mapping[str, int]) -> Evidence:
        """Union of two assignments; conflicting values raise."""
        merged = dict(self._dict)
        for k, v in other.items():
            if k in merged and merged[k] != v:
                raise InvalidEvidence(f"conflicting evidence for {k!r}")
            merged[k] = v
        return Evidence(merged)

    def validate(self, network: BayesianNetwork) -> None:
        for vid, idx in self._items:
            if vid not in network:
                raise InvalidEvidence(f"evidence on unknown variable {vid!r}")
            if idx >= network.cardinality(vid):
                raise InvalidEvidence(f"state index {idx} out of range for {vid!r}")


# --- network specification file -------------------------------------------

FORMAT_TAG = "tilegrade-network"


def network_to_dict(network: BayesianNetwork) -> dict:
    return {
        "format": FORMAT_TAG,
        "version": 1,
        "variables": [
            {"id": v.id, "name": v.name, "states": list(v.states)} for v in network.variables
        ],
        "edges": [list(e) for e in network.structure.edges],
        "cpds": {
            vid: {
                "parent_order": list(cpd.parent_order),
                "table": [[float(x) for x in row] for row in cpd.table],
            }
            for vid, cpd in network.cpds.items()
        },
    }


def structure_from_dict(doc: Mapping) -> NetworkStructure:
    try:
        variables = [Variable(v["id"], v.get("name", v["id"]), v["states"]) for v in doc["variables"]]
        edges = [tuple(e) for e in doc.get("edges", [])]
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"malformed network document: {exc}") from None
    for e in edges:
        if len(e) != 2:
            raise NetworkError(f"edge {list(e)} must be a [parent, child] pair")
    structure = NetworkStructure.from_edges(variables, edges)
    # an explicit parent_order in the CPD block fixes the parent ordering
    cpds = doc.get("cpds") or {}
    parents = dict(structure.parents)
    for vid, block in cpds.items():
        order = tuple(block.get("parent_order", ()))
        if vid in parents and set(order) == set(parents[vid]) and len(order) == len(parents[vid]):
            parents[vid] = order
    return NetworkStructure(structure.variables, parents)


def network_from_dict(doc: Mapping) -> BayesianNetwork:
    if doc.get("format", FORMAT_TAG) != FORMAT_TAG:
        raise NetworkError(f"not a network document (format={doc.get('format')!r})")
    structure = structure_from_dict(doc)
    cpds = []
    for vid, block in (doc.get("cpds") or {}).items():
        try:
            cpds.append(Cpd(vid, tuple(block["parent_order"]), block["table"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkError(f"malformed CPD for {vid!r}: {exc}") from None
    return build_network(structure, cpds)


def save_network(network: BayesianNetwork, path) -> None:
    atomic_write_text(path, dumps_canonical(network_to_dict(network)))


def load_network(path) -> BayesianNetwork:
    return network_from_dict(read_json(path))


def load_structure(path) -> NetworkStructure:
    """Read only the variables and edges of a network file (CPDs may be absent)."""
    return structure_from_dict(read_json(path))
