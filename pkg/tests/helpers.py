"""Builders shared by the unit and acceptance tests."""

import itertools
import math

import numpy as np

from tilegrade.network import Cpd, NetworkStructure, Variable, build_network


def chain_network(p_a=0.3, p_b_given_a=(0.2, 0.9)):
    """A -> B, both binary; ``p_b_given_a`` is p(B=1 | A=0), p(B=1 | A=1)."""
    variables = [Variable("A", "A", ("0", "1")), Variable("B", "B", ("0", "1"))]
    structure = NetworkStructure.from_edges(variables, [("A", "B")])
    return build_network(structure, [
        Cpd("A", (), [[1 - p_a, p_a]]),
        Cpd("B", ("A",), [[1 - q, q] for q in p_b_given_a]),
    ])


def random_network(rng: np.random.Generator, n_vars: int, max_card: int = 4, max_parents: int = 3,
                   max_states: int | None = None):
    """Random DAG over ``n_vars`` nodes with Dirichlet(1) CPD rows.

    Nodes are created in a shuffled order and may only take parents from
    earlier nodes, so the graph is acyclic by construction. ``max_states``
    caps the joint state count so that enumeration stays cheap.
    """
    ids = [f"v{i:02d}" for i in range(n_vars)]
    order = list(rng.permutation(n_vars))
    cards = {}
    total = 1
    for i in order:
        room = max_card if max_states is None else max(2, min(max_card, max_states // max(total, 1)))
        c = int(rng.integers(2, room + 1))
        cards[ids[i]] = c
        total *= c
    parents = {}
    for pos, i in enumerate(order):
        earlier = [ids[j] for j in order[:pos]]
        k = int(rng.integers(0, min(max_parents, len(earlier)) + 1))
        chosen = sorted(rng.choice(earlier, size=k, replace=False).tolist()) if k else []
        parents[ids[i]] = tuple(chosen)
    variables = [Variable(v, v, tuple(f"s{k}" for k in range(cards[v]))) for v in ids]
    structure = NetworkStructure(tuple(variables), parents)
    cpds = []
    for v in ids:
        rows = math.prod(cards[p] for p in parents[v])
        cpds.append(Cpd(v, parents[v], rng.dirichlet(np.ones(cards[v]), size=rows)))
    return build_network(structure, cpds)


def random_evidence(rng: np.random.Generator, network, max_observed: int | None = None):
    """Random partial assignment drawn from a forward sample, so it has p > 0."""
    state = {}
    for v in network.topological_order():
        cpd = network.cpd(v)
        row = 0
        for p in cpd.parent_order:
            row = row * network.cardinality(p) + state[p]
        probs = cpd.table[row]
        state[v] = int(rng.choice(len(probs), p=probs))
    ids = list(network.ids)
    k = int(rng.integers(0, (max_observed if max_observed is not None else len(ids) - 1) + 1))
    observed = rng.choice(ids, size=k, replace=False).tolist() if k else []
    return {v: state[v] for v in observed}


def pairwise_auc(scores, labels):
    """Concordant-pair count over all positive/negative pairs, ties worth 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p, n in itertools.product(pos, neg):
        total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))
