"""Shared builders for the test suite."""
import math
from pathlib import Path

import numpy as np

from scg.events import ACTION_OBJECT_KIND, Action, NormalizedEvent, ObjectRef

DATA = Path(__file__).parent / "data"
CONFIGS = Path(__file__).parent.parent / "configs"

# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def ev(ts, action="WRITE", key=None, pid=1, host="h", exe="/bin/x", attrs=None, label=None):
    """Small event factory; ``key`` defaults to something valid for the action."""
    action = Action(action)
    defaults = {
        Action.FORK: f"{host}:{pid + 1}",
        Action.CONNECT: "10.0.0.1:443", Action.SEND: "10.0.0.1:443", Action.RECV: "10.0.0.1:443",
        Action.RESOLVE: "example.org",
        Action.INSTALL: "pypi:pkg",
    }
    kind = ACTION_OBJECT_KIND[action]
    if key is None:
        key = defaults.get(action, f"{host}:/tmp/f")
    return NormalizedEvent(float(ts), host, action, pid, exe, ObjectRef(kind, key), dict(attrs or {}), label)


def random_graph(rng, n_nodes=12, n_edges=40, d_f=8, t_max=100.0):
    """Random process/file graph built through the public event API."""
    from scg.graph import build_graph
    ts = np.sort(rng.uniform(0, t_max, n_edges))
    events = []
    for t in ts:
        pid = int(rng.integers(1, max(2, n_nodes // 2)))
        action = ["WRITE", "READ", "EXEC", "FORK", "CONNECT"][int(rng.integers(5))]
        if action == "FORK":
            child = int(rng.integers(1, max(2, n_nodes // 2)))
            if child == pid:
                child = pid + 1
            events.append(ev(t, action, key=f"h:{child}", pid=pid))
        elif action == "CONNECT":
            events.append(ev(t, action, key=f"10.0.0.{int(rng.integers(1, 4))}:80", pid=pid))
        else:
            events.append(ev(t, action, key=f"h:/f{int(rng.integers(n_nodes // 2))}", pid=pid))
    return build_graph(events, d_f)



# a scenario small enough to run the whole pipeline in about a second
TINY_CONFIG = {
    "seed": 7,
    "simgen": {"n_hosts": 2, "duration": 10800.0, "n_attack_chains": 1},
    "model": {"d_m": 8, "d_e": 8, "d_h": 8, "d_s": 16, "d_f": 8, "d_t": 4},
    "detect": {"n_min": 20},
}


def brute_reach(g, source, t0):
    """Bellman-Ford style relaxation of the interval traversal rule."""
    arr = {source: t0}
    changed = True
    while changed:
        changed = False
        for e in range(g.n_edges):
            s = int(g.src[e])
            if s in arr and arr[s] <= g.t_last[e]:
                tau = max(arr[s], float(g.t_first[e]))
                d = int(g.dst[e])
                if tau < arr.get(d, math.inf):
                    arr[d] = tau
                    changed = True
    return arr


def random_repeat_graph(rng, n_nodes=None, n_edges=None, kinds=("FORK",)):
    n_nodes = int(rng.integers(2, 31)) if n_nodes is None else n_nodes
    n_edges = int(rng.integers(0, 201)) if n_edges is None else n_edges
    from scg.graph import ProvenanceGraph
    g = ProvenanceGraph(d_f=2)
    procs = max(1, n_nodes // 2)
    for i in range(n_nodes):
        if i < procs or kinds == ("FORK",):
            g.upsert_node("PROCESS", f"h:{i}", 0.0)
        else:
            g.upsert_node("FILE", f"h:/f{i}", 0.0)
    # few distinct pairs so repeats are common
    pairs = [tuple(int(x) for x in rng.integers(0, n_nodes, 2)) for _ in range(max(1, n_edges // 6))]
    ts = np.sort(rng.integers(0, 100, n_edges)).astype(float)
    for t in ts:
        s, d = pairs[int(rng.integers(len(pairs)))]
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind != "FORK":
            s = s % procs
            d = procs + d % max(1, n_nodes - procs) if n_nodes > procs else s
            if g.node_kind[d].value == "PROCESS":
                kind = "FORK"
            elif kind == "READ":
                s, d = d, s
        g.add_edge(s, d, kind, t)
    return g
