"""Typed temporal provenance graph.

Nodes are system entities keyed by ``(kind, key)`` with dense ids in
first-seen order. Edges form an append-only log in nondecreasing ``t_first``
order; each node keeps a time-sorted adjacency list over both directions so
that :meth:`ProvenanceGraph.neighbor_ids_before` is a binary search.

Edge direction follows information flow: READ and RECV point from the object
to the process, every other action points from the acting process to its
object.
"""
from __future__ import annotations

import bisect
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .events import ACTION_OBJECT_KIND, Action, NormalizedEvent, ObjectKind, valid_key
from .features import featurize_edge

REVERSED_ACTIONS = frozenset({Action.READ, Action.RECV})
ACTIONS = list(Action)
_ACTION_CODE = {a: i for i, a in enumerate(ACTIONS)}


class GraphError(ValueError):
    pass


class BadKey(GraphError):
    pass


class OutOfOrder(GraphError):
    pass


class UnknownNode(GraphError, KeyError):
    pass


class UnknownEdge(GraphError, KeyError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    kind: ObjectKind
    key: str
    first_seen: float
    attrs: dict = field(default_factory=dict, compare=False, hash=False)


@dataclass(frozen=True)
class TemporalEdge:
    id: int
    src: int
    dst: int
    kind: Action
    t_first: float
    t_last: float
    count: int
    feat: np.ndarray = field(repr=False, compare=False, hash=False)


class ProvenanceGraph:
    def __init__(self, d_f: int = 32):
        self.d_f = d_f
        self.node_kind: list[ObjectKind] = []
        self.node_key: list[str] = []
        self.node_first_seen: list[float] = []
        self.node_attrs: list[dict] = []
        self._index: dict[tuple[ObjectKind, str], int] = {}
        self._adj_ids: list[list[int]] = []
        self._adj_ts: list[list[float]] = []
        self._n_edges = 0
        cap = 64
        self._src = np.empty(cap, dtype=np.int64)
        self._dst = np.empty(cap, dtype=np.int64)
        self._kind = np.empty(cap, dtype=np.int8)
        self._t_first = np.empty(cap, dtype=np.float64)
        self._t_last = np.empty(cap, dtype=np.float64)
        self._count = np.empty(cap, dtype=np.int64)
        self._feat = np.empty((cap, d_f), dtype=np.float64)
        self._kind_nodes: dict[ObjectKind, np.ndarray] | None = None
        self._timelines: dict | None = None
        self._timeline_rank: np.ndarray | None = None

    # -- sizes / array views -------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.node_kind)

    @property
    def n_edges(self) -> int:
        return self._n_edges

    @property
    def src(self) -> np.ndarray:
        return self._src[: self._n_edges]

    @property
    def dst(self) -> np.ndarray:
        return self._dst[: self._n_edges]

    @property
    def kind_code(self) -> np.ndarray:
        return self._kind[: self._n_edges]

    @property
    def t_first(self) -> np.ndarray:
        return self._t_first[: self._n_edges]

    @property
    def t_last(self) -> np.ndarray:
        return self._t_last[: self._n_edges]

    @property
    def count(self) -> np.ndarray:
        return self._count[: self._n_edges]

    @property
    def feat(self) -> np.ndarray:
        return self._feat[: self._n_edges]

    # -- nodes ----------------------------------------------------------------

    def upsert_node(self, kind, key: str, ts: float) -> int:
        kind = ObjectKind(kind)
        nid = self._index.get((kind, key))
        if nid is not None:
            return nid
        if not valid_key(kind, key):
            raise BadKey(f"{kind.value}:{key}")
        nid = len(self.node_kind)
        self._index[(kind, key)] = nid
        self.node_kind.append(kind)
        self.node_key.append(key)
        self.node_first_seen.append(float(ts))
        self.node_attrs.append({})
        self._adj_ids.append([])
        self._adj_ts.append([])
        self._kind_nodes = None
        self._timelines = None
        return nid

    def find_node(self, kind, key: str) -> int | None:
        return self._index.get((ObjectKind(kind), key))

    def node(self, nid: int) -> Node:
        self._check_node(nid)
        return Node(nid, self.node_kind[nid], self.node_key[nid],
                    self.node_first_seen[nid], self.node_attrs[nid])

    def nodes_of_kind(self, kind) -> np.ndarray:
        if self._kind_nodes is None:
            buckets: dict[ObjectKind, list[int]] = {k: [] for k in ObjectKind}
            for i, k in enumerate(self.node_kind):
                buckets[k].append(i)
            self._kind_nodes = {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}
        return self._kind_nodes[ObjectKind(kind)]

    def kind_timeline(self, kind):
        """``(ids, first_seen, rank)`` for one kind: ids ordered by (first_seen, id); ``rank[nid]`` is
        the position of ``nid`` in that order (-1 for other kinds)."""
        if self._timelines is None:
            self._timelines = {}
            first = np.asarray(self.node_first_seen, dtype=np.float64)
            rank = np.full(self.n_nodes, -1, dtype=np.int64)
            for k in ObjectKind:
                ids = self.nodes_of_kind(k)
                ids = ids[np.lexsort((ids, first[ids]))]
                rank[ids] = np.arange(len(ids))
                self._timelines[k] = (ids, first[ids])
            self._timeline_rank = rank
        ids, times = self._timelines[ObjectKind(kind)]
        return ids, times, self._timeline_rank

    def _check_node(self, nid: int) -> None:
        if not 0 <= nid < len(self.node_kind):
            raise UnknownNode(nid)

    # -- edges ----------------------------------------------------------------

    def _grow(self) -> None:
        cap = 2 * len(self._src)
        for name in ("_src", "_dst", "_kind", "_t_first", "_t_last", "_count"):
            old = getattr(self, name)
            new = np.empty(cap, dtype=old.dtype)
            new[: self._n_edges] = old[: self._n_edges]
            setattr(self, name, new)
        feat = np.empty((cap, self.d_f), dtype=np.float64)
        feat[: self._n_edges] = self._feat[: self._n_edges]
        self._feat = feat

    def add_edge(self, src: int, dst: int, kind, t_first: float, t_last: float | None = None,
                 count: int = 1, feat=None) -> int:
        """Append one edge; ``t_first`` must not precede the last appended edge."""
        self._check_node(src)
        self._check_node(dst)
        kind = Action(kind)
        t_last = t_first if t_last is None else t_last
        if self._n_edges and t_first < self._t_first[self._n_edges - 1]:
            raise OutOfOrder(t_first)
        if not (t_first <= t_last and count >= 1):
            raise GraphError(f"bad edge interval [{t_first}, {t_last}] x{count}")
        if count == 1 and t_first != t_last:
            raise GraphError("single-occurrence edge must have t_first == t_last")
        if self._n_edges == len(self._src):
            self._grow()
        eid = self._n_edges
        self._src[eid] = src
        self._dst[eid] = dst
        self._kind[eid] = _ACTION_CODE[kind]
        self._t_first[eid] = t_first
        self._t_last[eid] = t_last
        self._count[eid] = count
        self._feat[eid] = 0.0 if feat is None else feat
        self._n_edges += 1
        self._adj_ids[src].append(eid)
        self._adj_ts[src].append(t_first)
        if dst != src:
            self._adj_ids[dst].append(eid)
            self._adj_ts[dst].append(t_first)
        return eid

    def add_event(self, event: NormalizedEvent) -> int:
        if self._n_edges and event.ts < self._t_first[self._n_edges - 1]:
            raise OutOfOrder(event.ts)
        proc = self.upsert_node(ObjectKind.PROCESS, event.process_key, event.ts)
        obj_kind = ACTION_OBJECT_KIND[event.action]
        if event.object.kind != obj_kind:
            raise GraphError(f"MappingGap({event.action.value})")
        obj = self.upsert_node(obj_kind, event.object.key, event.ts)
        src, dst = (obj, proc) if event.action in REVERSED_ACTIONS else (proc, obj)
        feat = featurize_edge(event.action.value, event.attrs, self.d_f)
        return self.add_edge(src, dst, event.action, event.ts, event.ts, 1, feat)

    def edge(self, eid: int) -> TemporalEdge:
        if not 0 <= eid < self._n_edges:
            raise UnknownEdge(eid)
        return TemporalEdge(eid, int(self._src[eid]), int(self._dst[eid]),
                            ACTIONS[self._kind[eid]], float(self._t_first[eid]),
                            float(self._t_last[eid]), int(self._count[eid]),
                            self._feat[eid].copy())

    def edge_kind(self, eid: int) -> Action:
        return ACTIONS[self._kind[eid]]

    def edges(self):
        for eid in range(self._n_edges):
            yield self.edge(eid)

    def incident(self, nid: int) -> list[int]:
        self._check_node(nid)
        return list(self._adj_ids[nid])

    def out_edges(self, nid: int) -> list[int]:
        return [e for e in self.incident(nid) if self._src[e] == nid]

    def in_edges(self, nid: int) -> list[int]:
        return [e for e in self.incident(nid) if self._dst[e] == nid]

    def peer(self, eid: int, nid: int) -> int:
        s = int(self._src[eid])
        return int(self._dst[eid]) if s == nid else s

    # -- temporal queries -----------------------------------------------------

    def neighbor_ids_before(self, nid: int, t: float, k: int) -> list[int]:
        """Ids of the <= k most recent incident edges with ``t_first < t``, newest first."""
        ts = self._adj_ts[nid]
        hi = bisect.bisect_left(ts, t)
        lo = max(0, hi - k)
        ids = self._adj_ids[nid]
        return ids[lo:hi][::-1]

    def replay_signature(self) -> bytes:
        return export_jsonl(self)


def build_graph(events, d_f: int = 32) -> ProvenanceGraph:
    g = ProvenanceGraph(d_f)
    for ev in events:
        g.add_event(ev)
    return g


def neighbors_before(graph: ProvenanceGraph, node: int, t: float, k: int) -> list[TemporalEdge]:
    graph._check_node(node)
    if k < 1:
        raise ValueError("k must be >= 1")
    return [graph.edge(e) for e in graph.neighbor_ids_before(node, t, k)]


# -- export / import ----------------------------------------------------------


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def export_dot(graph: ProvenanceGraph, edge_ids=None, name: str = "provenance") -> bytes:
    lines = [f"digraph {name} {{"]
    if edge_ids is None:
        node_ids = range(graph.n_nodes)
        edge_ids = range(graph.n_edges)
    else:
        edge_ids = sorted(set(edge_ids))
        node_ids = sorted({int(graph.src[e]) for e in edge_ids} | {int(graph.dst[e]) for e in edge_ids})
    for i in node_ids:
        label = _dot_escape(f"{graph.node_kind[i].value}:{graph.node_key[i]}")
        lines.append(f'  n{i} [label="{label}"];')
    for e in edge_ids:
        label = f"{graph.edge_kind(e).value}@{float(graph.t_first[e])!r}×{int(graph.count[e])}"
        lines.append(f'  n{int(graph.src[e])} -> n{int(graph.dst[e])} [label="{label}"];')
    lines.append("}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def export_jsonl(graph: ProvenanceGraph) -> bytes:
    out = io.StringIO()
    dump = lambda d: out.write(json.dumps(d, separators=(",", ":"), ensure_ascii=False) + "\n")  # noqa: E731
    dump({"type": "graph", "version": 1, "d_f": graph.d_f})
    for i in range(graph.n_nodes):
        dump({"type": "node", "id": i, "kind": graph.node_kind[i].value, "key": graph.node_key[i],
              "first_seen": graph.node_first_seen[i],
              "attrs": {k: graph.node_attrs[i][k] for k in sorted(graph.node_attrs[i])}})
    for e in range(graph.n_edges):
        dump({"type": "edge", "id": e, "src": int(graph.src[e]), "dst": int(graph.dst[e]),
              "kind": graph.edge_kind(e).value, "t_first": float(graph.t_first[e]),
              "t_last": float(graph.t_last[e]), "count": int(graph.count[e]),
              "feat": [float(x) for x in graph.feat[e]]})
    return out.getvalue().encode("utf-8")


def export(graph: ProvenanceGraph, fmt: str) -> bytes:
    if fmt == "dot":
        return export_dot(graph)
    if fmt == "jsonl":
        return export_jsonl(graph)
    raise ValueError(f"unknown export format {fmt!r}")


def import_jsonl(data: bytes | str) -> ProvenanceGraph:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    graph: ProvenanceGraph | None = None
    for line in data.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        t = rec["type"]
        if t == "graph":
            graph = ProvenanceGraph(rec["d_f"])
            continue
        if graph is None:
            raise GraphError("graph jsonl must start with a header record")
        if t == "node":
            nid = graph.upsert_node(rec["kind"], rec["key"], rec["first_seen"])
            if nid != rec["id"]:
                raise GraphError(f"non-dense node id {rec['id']}")
            graph.node_attrs[nid].update(rec.get("attrs", {}))
        elif t == "edge":
            eid = graph.add_edge(rec["src"], rec["dst"], rec["kind"], rec["t_first"], rec["t_last"],
                                 rec["count"], np.asarray(rec["feat"], dtype=np.float64))
            if eid != rec["id"]:
                raise GraphError(f"non-dense edge id {rec['id']}")
        else:
            raise GraphError(f"unknown record type {t!r}")
    if graph is None:
        raise GraphError("empty graph file")
    return graph
