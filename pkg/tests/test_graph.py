import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scg.events import Action, ObjectKind
from scg.features import featurize_edge
from scg.graph import (
    BadKey, GraphError, OutOfOrder, ProvenanceGraph, UnknownEdge, UnknownNode, build_graph,
    export, export_dot, export_jsonl, import_jsonl, neighbors_before,
)

from helpers import ev, random_graph


def test_upsert_is_idempotent_and_dense():
    g = ProvenanceGraph()
    a = g.upsert_node(ObjectKind.FILE, "h:/a", 1.0)
    assert a == 0
    assert g.upsert_node(ObjectKind.FILE, "h:/a", 5.0) == 0
    assert g.node(0).first_seen == 1.0
    assert g.upsert_node(ObjectKind.FILE, "h:/b", 2.0) == 1


def test_upsert_rejects_bad_key():
    with pytest.raises(BadKey):
        ProvenanceGraph().upsert_node(ObjectKind.SOCKET, "nope", 0.0)


@pytest.mark.parametrize("action, src_kind, dst_kind", [
    ("WRITE", ObjectKind.PROCESS, ObjectKind.FILE),
    ("READ", ObjectKind.FILE, ObjectKind.PROCESS),
    ("EXEC", ObjectKind.PROCESS, ObjectKind.FILE),
    ("CHMOD", ObjectKind.PROCESS, ObjectKind.FILE),
    ("FORK", ObjectKind.PROCESS, ObjectKind.PROCESS),
    ("CONNECT", ObjectKind.PROCESS, ObjectKind.SOCKET),
    ("SEND", ObjectKind.PROCESS, ObjectKind.SOCKET),
    ("RECV", ObjectKind.SOCKET, ObjectKind.PROCESS),
    ("RESOLVE", ObjectKind.PROCESS, ObjectKind.DOMAIN),
    ("INSTALL", ObjectKind.PROCESS, ObjectKind.PACKAGE),
])
def test_mapping_table(action, src_kind, dst_kind):
    g = ProvenanceGraph()
    eid = g.add_event(ev(1.0, action, pid=42))
    e = g.edge(eid)
    assert e.kind == Action(action)
    assert (g.node(e.src).kind, g.node(e.dst).kind) == (src_kind, dst_kind)
    assert e.t_first == e.t_last == 1.0 and e.count == 1
    proc = e.src if src_kind == ObjectKind.PROCESS else e.dst
    if action != "FORK":
        assert g.node(proc).key == "h:42"


def test_edge_feature_is_featurized():
    g = ProvenanceGraph(d_f=16)
    eid = g.add_event(ev(1.0, "WRITE", attrs={"uid": "0"}))
    np.testing.assert_array_equal(g.edge(eid).feat, featurize_edge("WRITE", {"uid": "0"}, 16))


def test_out_of_order():
    g = ProvenanceGraph()
    g.add_event(ev(5))
    with pytest.raises(OutOfOrder) as info:
        g.add_event(ev(4))
    assert info.value.args[0] == 4


def test_unknown_ids():
    g = build_graph([ev(1)])
    with pytest.raises(UnknownNode):
        neighbors_before(g, 7, 1.0, 1)
    with pytest.raises(UnknownEdge):
        g.edge(3)


def test_bad_interval_rejected():
    g = ProvenanceGraph()
    a = g.upsert_node("FILE", "h:/a", 0)
    b = g.upsert_node("PROCESS", "h:1", 0)
    with pytest.raises(GraphError):
        g.add_edge(a, b, "READ", 2.0, 1.0, 2)
    with pytest.raises(GraphError):
        g.add_edge(a, b, "READ", 1.0, 2.0, 1)


def test_neighbors_before_example():
    g = build_graph([ev(1, key="h:/a"), ev(2, key="h:/b"), ev(3, key="h:/c")])
    proc = g.find_node("PROCESS", "h:1")
    got = neighbors_before(g, proc, 2.5, 2)
    assert [e.t_first for e in got] == [2.0, 1.0]
    assert neighbors_before(g, proc, 0.5, 2) == []


def test_neighbors_ties_newest_id_first():
    g = build_graph([ev(1, key="h:/a"), ev(1, key="h:/b"), ev(1, key="h:/c")])
    proc = g.find_node("PROCESS", "h:1")
    assert [e.id for e in neighbors_before(g, proc, 2, 10)] == [2, 1, 0]


def _brute_neighbors(g, node, t, k):
    ids = [e for e in range(g.n_edges) if node in (g.src[e], g.dst[e]) and g.t_first[e] < t]
    ids.sort(key=lambda e: (-g.t_first[e], -e))
    return ids[:k]


def test_neighbors_before_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n_nodes = int(rng.integers(2, 31))
        g = ProvenanceGraph(d_f=2)
        for i in range(n_nodes):
            g.upsert_node("PROCESS", f"h:{i}", 0.0)
        m = int(rng.integers(0, 201))
        ts = np.sort(rng.integers(0, 50, m)).astype(float)  # integer times force ties
        for t in ts:
            s, d = rng.integers(0, n_nodes, 2)
            g.add_edge(int(s), int(d), "FORK", t)
        for _ in range(5):
            node = int(rng.integers(n_nodes))
            t = float(rng.integers(0, 52)) + rng.choice([0.0, 0.5])
            k = int(rng.integers(1, 12))
            assert g.neighbor_ids_before(node, t, k) == _brute_neighbors(g, node, t, k)


def test_dot_export_shapes():
    empty = export_dot(ProvenanceGraph()).decode()
    assert empty == "digraph provenance {\n}\n"
    g = ProvenanceGraph()
    g.upsert_node("FILE", "h:/a", 0)
    lines = export_dot(g).decode().splitlines()
    assert lines[1] == '  n0 [label="FILE:h:/a"];' and len(lines) == 3
    g = build_graph([ev(3.5, "WRITE")])
    assert '  n0 -> n1 [label="WRITE@3.5×1"];' in export_dot(g).decode()


def test_export_rejects_unknown_format():
    with pytest.raises(ValueError):
        export(ProvenanceGraph(), "xml")


def test_jsonl_round_trip_and_replay_stability(rng):
    g = random_graph(rng, n_edges=60)
    data = export_jsonl(g)
    back = import_jsonl(data)
    assert export_jsonl(back) == data
    assert back.n_nodes == g.n_nodes and back.n_edges == g.n_edges
    np.testing.assert_array_equal(back.feat, g.feat)


def test_import_rejects_garbage():
    with pytest.raises(GraphError):
        import_jsonl(b"")
    with pytest.raises(GraphError):
        import_jsonl(b'{"type":"node","id":0,"kind":"FILE","key":"h:/a","first_seen":0}\n')


def test_replay_is_bit_identical():
    events = [ev(i, "WRITE" if i % 2 else "READ", key=f"h:/f{i % 3}", pid=i % 4) for i in range(30)]
    assert build_graph(events).replay_signature() == build_graph(events).replay_signature()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_adjacency_indexes_edge_log(seed):
    g = random_graph(np.random.default_rng(seed), n_edges=30)
    seen = {}
    for nid in range(g.n_nodes):
        inc = g.incident(nid)
        assert inc == sorted(inc, key=lambda e: (g.t_first[e], e))
        for e in inc:
            seen.setdefault(e, set()).add(nid)
    for e in range(g.n_edges):
        assert seen[e] == {int(g.src[e]), int(g.dst[e])}
    assert np.all(np.diff(g.t_first) >= 0)
