import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_network
from tilegrade.errors import (
    CardinalityMismatch,
    CycleDetected,
    DuplicateFeatureName,
    InvalidEvidence,
    MissingCpd,
    RowNotNormalized,
)
from tilegrade.network import (
    CANONICAL_FEATURES,
    Cpd,
    Evidence,
    NetworkStructure,
    Variable,
    build_network,
    default_pelvic_structure,
    feature_nodes,
    load_network,
    network_from_dict,
    network_to_dict,
    save_network,
    topological_order,
)


def binvar(vid):
    return Variable(vid, vid, ("0", "1"))


def uniform_cpds(structure):
    out = []
    for v in structure.variables:
        rows = int(np.prod([structure.cardinality(p) for p in structure.parents[v.id]]))
        out.append(Cpd(v.id, structure.parents[v.id], np.full((rows, v.cardinality), 1 / v.cardinality)))
    return out


def test_chain_builds_in_order():
    s = NetworkStructure.from_edges([binvar("B"), binvar("A")], [("A", "B")])
    net = build_network(s, [Cpd("A", (), [[0.3, 0.7]]), Cpd("B", ("A",), [[0.5, 0.5], [0.1, 0.9]])])
    assert topological_order(net) == ["A", "B"]


def test_row_over_one_rejected():
    s = NetworkStructure.from_edges([binvar("A")], [])
    with pytest.raises(RowNotNormalized) as info:
        build_network(s, [Cpd("A", (), [[0.6, 0.6]])])
    assert info.value.variable == "A"


def test_small_rounding_is_tolerated_and_renormalized():
    s = NetworkStructure.from_edges([binvar("A")], [])
    net = build_network(s, [Cpd("A", (), [[0.3, 0.7 + 5e-7]])])
    assert np.sum(net.cpd("A").table) == 1.0


def test_two_cycle_rejected():
    with pytest.raises(CycleDetected):
        NetworkStructure.from_edges([binvar("A"), binvar("B")], [("A", "B"), ("B", "A")])


def test_self_loop_rejected():
    with pytest.raises(CycleDetected):
        NetworkStructure.from_edges([binvar("A")], [("A", "A")])


@pytest.mark.parametrize("edges,expected", [
    ([("A", "B"), ("B", "C")], ["A", "B", "C"]),
    ([("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")], ["A", "B", "C", "D"]),
    ([], ["A"]),
])
def test_topological_order_examples(edges, expected):
    names = sorted({x for e in edges for x in e} or {"A"}, reverse=True)
    s = NetworkStructure.from_edges([binvar(n) for n in names], edges)
    assert topological_order(build_network(s, uniform_cpds(s))) == expected


def test_missing_cpd_and_bad_shape():
    s = NetworkStructure.from_edges([binvar("A"), binvar("B")], [("A", "B")])
    with pytest.raises(MissingCpd):
        build_network(s, [Cpd("A", (), [[0.5, 0.5]])])
    with pytest.raises(CardinalityMismatch):
        build_network(s, [Cpd("A", (), [[0.5, 0.5]]), Cpd("B", ("A",), [[0.5, 0.5]])])


def test_variable_invariants():
    with pytest.raises(CardinalityMismatch):
        Variable("A", "A", ("only",))
    with pytest.raises(ValueError):
        Variable("A", "A", ("x", "x"))


def test_default_structure_full_feature_set():
    s = default_pelvic_structure(list(CANONICAL_FEATURES), include_age=True)
    assert len(s.variables) == 10
    assert len(s.edges) == 16


def test_default_structure_single_feature_no_age():
    s = default_pelvic_structure(["PSD"], include_age=False)
    assert s.ids == ("R", "T", "PSD")
    assert sorted(s.edges) == [("R", "PSD"), ("T", "PSD")]


def test_clinical_feature_names_accepted_verbatim():
    names = ["ring fx", "anteriorly divergent SI", "parallel SI", "non-diastatic sacral fx",
             "diastatic sacral fx", "PSD", "ISp"]
    s = default_pelvic_structure(names)
    assert set(feature_nodes(s)) == set(CANONICAL_FEATURES)
    with pytest.raises(DuplicateFeatureName):
        default_pelvic_structure(["PSD", "PSD"])


def test_evidence_validation(desk):
    ev = Evidence.from_labels(desk, {"PSD": "present", "R": 0})
    assert dict(ev) == {"PSD": 1, "R": 0}
    with pytest.raises(InvalidEvidence):
        Evidence.from_labels(desk, {"PSD": "maybe"})
    with pytest.raises(InvalidEvidence):
        Evidence({"PSD": 5}).validate(desk)
    with pytest.raises(InvalidEvidence):
        ev.merge({"PSD": 0})
    assert hash(Evidence({"a": 1, "b": 0})) == hash(Evidence({"b": 0, "a": 1}))


def test_network_is_immutable(desk):
    with pytest.raises(AttributeError):
        desk.structure = None
    with pytest.raises(ValueError):
        desk.cpd("PSD").table[0, 0] = 0.5


def test_shipped_fixtures_roundtrip_bit_exact(data_dir, tmp_path):
    for name in ("desk.json", "pelvic.json"):
        original = (data_dir / name).read_bytes()
        net = load_network(data_dir / name)
        out = tmp_path / name
        save_network(net, out)
        assert out.read_bytes() == original


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8))
def test_random_network_roundtrip(seed, n):
    net = random_network(np.random.default_rng(seed), n)
    doc = json.loads(json.dumps(network_to_dict(net)))
    again = network_from_dict(doc)
    assert again.structurally_equal(net)
    assert network_to_dict(again) == network_to_dict(net)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10))
def test_topological_order_respects_edges(seed, n):
    net = random_network(np.random.default_rng(seed), n)
    order = topological_order(net)
    assert sorted(order) == sorted(net.ids)
    pos = {v: i for i, v in enumerate(order)}
    assert all(pos[p] < pos[c] for p, c in net.structure.edges)
    for cpd in net.cpds.values():
        assert np.all(np.abs(cpd.table.sum(axis=1) - 1) <= 1e-12)
