"""Graph reduction: interval deduplication and structural template clustering.

Both passes build a fresh :class:`~scg.graph.ProvenanceGraph` and return a
:class:`Reduction` carrying node/edge remap tables so results computed on the
reduced graph can be mapped back to original edges.

Merged edges are intervals ``[t_first, t_last]``. Forward temporal traversal
of such an edge at arrival time ``a`` is allowed iff ``t_last >= a`` and
happens at ``max(a, t_first)``.
"""
from __future__ import annotations

import bisect
import heapq
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .events import ObjectKind
from .graph import ProvenanceGraph


@dataclass(frozen=True)
class ReduceConfig:
    window: float = 60.0
    enable_dedup: bool = True
    enable_cluster: bool = True

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be > 0")


@dataclass
class Reduction:
    graph: ProvenanceGraph
    node_map: np.ndarray  # original node id -> reduced node id
    edge_map: np.ndarray  # original edge id -> reduced edge id

    def then(self, other: Reduction) -> Reduction:
        return Reduction(other.graph, other.node_map[self.node_map], other.edge_map[self.edge_map])

    def members(self) -> list[list[int]]:
        """Original edge ids grouped by reduced edge id."""
        out: list[list[int]] = [[] for _ in range(self.graph.n_edges)]
        for orig, red in enumerate(self.edge_map):
            out[int(red)].append(orig)
        return out

    def export_remap(self) -> bytes:
        buf = io.StringIO()
        for i, j in enumerate(self.node_map):
            buf.write(json.dumps({"type": "node", "orig": i, "reduced": int(j)}) + "\n")
        for i, j in enumerate(self.edge_map):
            buf.write(json.dumps({"type": "edge", "orig": i, "reduced": int(j)}) + "\n")
        return buf.getvalue().encode("utf-8")


def identity_reduction(graph: ProvenanceGraph) -> Reduction:
    return Reduction(graph, np.arange(graph.n_nodes), np.arange(graph.n_edges))


def import_remap(data: bytes | str, graph: ProvenanceGraph) -> Reduction:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    nodes: dict[int, int] = {}
    edges: dict[int, int] = {}
    for line in data.splitlines():
        if line.strip():
            rec = json.loads(line)
            (nodes if rec["type"] == "node" else edges)[rec["orig"]] = rec["reduced"]
    return Reduction(graph,
                     np.asarray([nodes[i] for i in range(len(nodes))], dtype=np.int64),
                     np.asarray([edges[i] for i in range(len(edges))], dtype=np.int64))


@dataclass
class _Merged:
    src: int
    dst: int
    kind: int
    t_first: float
    t_last: float
    count: int
    first_member: int
    members: list[int] = field(default_factory=list)


def _rebuild(graph: ProvenanceGraph, merged: list[_Merged], node_map: np.ndarray,
             node_order: list[int], node_members: dict[int, int] | None = None) -> Reduction:
    """Materialise merged edges over the node representatives in ``node_order``."""
    out = ProvenanceGraph(graph.d_f)
    for rep in node_order:
        nid = out.upsert_node(graph.node_kind[rep], graph.node_key[rep], graph.node_first_seen[rep])
        out.node_attrs[nid] = dict(graph.node_attrs[rep])
        if node_members is not None and node_members.get(rep, 1) > 1:
            out.node_attrs[nid]["members"] = node_members[rep]
    merged.sort(key=lambda m: (m.t_first, m.first_member))
    edge_map = np.empty(graph.n_edges, dtype=np.int64)
    for m in merged:
        eid = out.add_edge(int(node_map[m.src]), int(node_map[m.dst]), graph.edge_kind(m.first_member),
                           m.t_first, m.t_last, m.count, graph.feat[m.first_member])
        edge_map[m.members] = eid
    return Reduction(out, node_map, edge_map)


class _IntervalIndex:
    """Per-node incoming/outgoing edge intervals for interleaving queries."""

    def __init__(self, graph: ProvenanceGraph, incoming: bool):
        self.tf: list[list[float]] = [[] for _ in range(graph.n_nodes)]
        self.tl: list[list[float]] = [[] for _ in range(graph.n_nodes)]
        self.ids: list[list[int]] = [[] for _ in range(graph.n_nodes)]
        self.span = [0.0] * graph.n_nodes
        ends = graph.dst if incoming else graph.src
        tf_all, tl_all = graph.t_first, graph.t_last
        for e in range(graph.n_edges):
            n = int(ends[e])
            self.tf[n].append(float(tf_all[e]))
            self.tl[n].append(float(tl_all[e]))
            self.ids[n].append(e)
            self.span[n] = max(self.span[n], float(tl_all[e] - tf_all[e]))

    def any_within(self, node: int, a: float, b: float, exclude: set[int]) -> bool:
        """True if an edge interval at ``node`` meets the open interval (a, b)."""
        if not b > a:
            return False
        tf = self.tf[node]
        lo = bisect.bisect_left(tf, a - self.span[node])
        hi = bisect.bisect_left(tf, b)
        tl, ids = self.tl[node], self.ids[node]
        for i in range(lo, hi):
            if tl[i] > a and ids[i] not in exclude:
                return True
        return False


def dedup_edges(graph: ProvenanceGraph, window: float, guard: bool = True) -> Reduction:
    """Merge runs of repeated ``(src, dst, kind)`` edges whose gaps are <= ``window``.

    A run absorbs the next repeat when ``next.t_first - run.t_last <= window``.
    With ``guard`` (the default) the merge is additionally refused when some
    other edge enters ``src`` or leaves ``dst`` strictly inside the merged
    interval; without it, merging can create temporal paths that the original
    graph does not have.
    """
    if not window > 0:
        raise ValueError("window must be > 0")
    groups: dict[tuple[int, int, int], list[int]] = defaultdict(list)
    src, dst, kind = graph.src, graph.dst, graph.kind_code
    for e in range(graph.n_edges):
        groups[(int(src[e]), int(dst[e]), int(kind[e]))].append(e)
    into = _IntervalIndex(graph, incoming=True) if guard else None
    outof = _IntervalIndex(graph, incoming=False) if guard else None
    tf, tl, cnt = graph.t_first, graph.t_last, graph.count
    merged: list[_Merged] = []
    for (s, d, k), ids in groups.items():
        members = set(ids)
        run: _Merged | None = None
        for e in ids:
            if run is not None and tf[e] - run.t_last <= window:
                new_last = max(run.t_last, float(tl[e]))
                ok = not guard or not (
                    into.any_within(s, run.t_first, new_last, members)
                    or outof.any_within(d, run.t_first, new_last, members)
                )
                if ok:
                    run.t_last = new_last
                    run.count += int(cnt[e])
                    run.members.append(e)
                    continue
            run = _Merged(s, d, k, float(tf[e]), float(tl[e]), int(cnt[e]), e, [e])
            merged.append(run)
    node_map = np.arange(graph.n_nodes, dtype=np.int64)
    return _rebuild(graph, merged, node_map, list(range(graph.n_nodes)))


def node_signature(graph: ProvenanceGraph, nid: int):
    items = []
    for e in graph.incident(nid):
        s, d = int(graph.src[e]), int(graph.dst[e])
        code = int(graph.kind_code[e])
        if s == nid:
            items.append((code, 1, d))
        if d == nid:
            items.append((code, 0, s))
    return (graph.node_kind[nid].value, tuple(sorted(items)))


def cluster_templates(graph: ProvenanceGraph) -> Reduction:
    """Merge non-process nodes with identical ``(kind, edge multiset)`` signatures.

    The representative is the lowest-id member; its ``attrs["members"]`` holds
    the number of original nodes folded into it. Parallel edges that end up on
    a merged template are collapsed with an unbounded window.
    """
    groups: dict[tuple, list[int]] = defaultdict(list)
    for nid in range(graph.n_nodes):
        if graph.node_kind[nid] != ObjectKind.PROCESS:
            groups[node_signature(graph, nid)].append(nid)
    rep_of = np.arange(graph.n_nodes, dtype=np.int64)
    node_members: dict[int, int] = {}
    for nids in groups.values():
        rep = nids[0]
        total = 0
        for n in nids:
            rep_of[n] = rep
            total += int(graph.node_attrs[n].get("members", 1))
        node_members[rep] = total
    order = [n for n in range(graph.n_nodes) if rep_of[n] == n]
    new_id = {rep: i for i, rep in enumerate(order)}
    node_map = np.asarray([new_id[int(rep_of[n])] for n in range(graph.n_nodes)], dtype=np.int64)
    templated = {nids[0] for nids in groups.values() if len(nids) > 1}

    merged: list[_Merged] = []
    collapse: dict[tuple[int, int, int], _Merged] = {}
    src, dst, kind = graph.src, graph.dst, graph.kind_code
    tf, tl, cnt = graph.t_first, graph.t_last, graph.count
    for e in range(graph.n_edges):
        s, d = int(rep_of[src[e]]), int(rep_of[dst[e]])
        key = (s, d, int(kind[e]))
        if s in templated or d in templated:
            m = collapse.get(key)
            if m is not None:
                m.t_first = min(m.t_first, float(tf[e]))
                m.t_last = max(m.t_last, float(tl[e]))
                m.count += int(cnt[e])
                m.members.append(e)
                continue
            m = _Merged(s, d, key[2], float(tf[e]), float(tl[e]), int(cnt[e]), e, [e])
            collapse[key] = m
        else:
            m = _Merged(s, d, key[2], float(tf[e]), float(tl[e]), int(cnt[e]), e, [e])
        merged.append(m)
    return _rebuild(graph, merged, node_map, order, node_members)


def reduce_graph(graph: ProvenanceGraph, config: ReduceConfig = ReduceConfig()) -> Reduction:
    red = identity_reduction(graph)
    if config.enable_dedup:
        red = red.then(dedup_edges(red.graph, config.window))
    if config.enable_cluster:
        red = red.then(cluster_templates(red.graph))
    return red


# -- temporal reachability ----------------------------------------------------


def earliest_arrival(graph: ProvenanceGraph, source: int, t_start: float) -> dict[int, float]:
    """Earliest arrival time at every node reachable from ``source`` leaving at ``t_start``."""
    best = {source: t_start}
    heap = [(t_start, source)]
    src, tf, tl = graph.src, graph.t_first, graph.t_last
    dst = graph.dst
    while heap:
        a, x = heapq.heappop(heap)
        if a > best[x]:
            continue
        for e in graph._adj_ids[x]:
            if src[e] != x or tl[e] < a:
                continue
            y = int(dst[e])
            tau = max(a, float(tf[e]))
            if tau < best.get(y, math.inf):
                best[y] = tau
                heapq.heappush(heap, (tau, y))
    return best


@dataclass
class ReachabilityReport:
    trials: int
    mismatches: list[tuple[int, int, float, bool, bool]]

    @property
    def preserved(self) -> bool:
        return not self.mismatches


def check_reachability_preserved(original: ProvenanceGraph, reduced: ProvenanceGraph | Reduction,
                                 trials: int, rng: np.random.Generator | int | None = 0
                                 ) -> ReachabilityReport:
    """Compare forward temporal reachability on random ``(u, v, t_start)`` queries."""
    if isinstance(reduced, Reduction):
        node_map, reduced = reduced.node_map, reduced.graph
    else:
        node_map = np.arange(original.n_nodes)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    mismatches = []
    if original.n_nodes == 0:
        return ReachabilityReport(trials, mismatches)
    if original.n_edges:
        lo, hi = float(original.t_first.min()) - 1.0, float(original.t_last.max()) + 1.0
    else:
        lo, hi = 0.0, 1.0
    for _ in range(trials):
        u = int(rng.integers(original.n_nodes))
        v = int(rng.integers(original.n_nodes))
        t0 = float(rng.uniform(lo, hi))
        a = v in earliest_arrival(original, u, t0)
        b = int(node_map[v]) in earliest_arrival(reduced, int(node_map[u]), t0)
        if a != b:
            mismatches.append((u, v, t0, a, b))
    return ReachabilityReport(trials, mismatches)
