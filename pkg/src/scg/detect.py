"""Streaming anomaly scoring, dynamic thresholding, attack-path reconstruction and evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .events import Label
from .graph import ProvenanceGraph, UnknownEdge
from .tgn import (MemoryState, ModelParams, apply_edges, compute_embedding, embed_forward,
                  prepare_embed, score_edge, score_forward)

STAGE_NAMES = tuple(f"STAGE{i}" for i in range(1, 7))


class NonFinite(ValueError):
    pass


class MissingLabels(ValueError):
    pass


@dataclass
class ScoreStream:
    alpha: float = 0.01
    kappa: float = 3.0
    n_min: int = 100
    n: int = 0
    mu: float = 0.0
    v: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.n_min < 0 or self.kappa < 0:
            raise ValueError("n_min and kappa must be >= 0")

    def observe(self, s: float) -> tuple[bool, float]:
        """Flag ``s`` against ``mu + kappa*sqrt(v)``, then fold it into the EW moments."""
        if not math.isfinite(s):
            raise NonFinite(s)
        if self.n == 0:
            self.mu, self.v, self.n = s, 0.0, 1
            return False, math.inf
        tau = self.mu + self.kappa * math.sqrt(self.v)
        flag = self.n >= self.n_min and s > tau
        delta = s - self.mu
        self.mu += self.alpha * delta
        self.v = (1.0 - self.alpha) * (self.v + self.alpha * delta * delta)
        self.n += 1
        return flag, tau


@dataclass(frozen=True)
class Alert:
    edge: int
    score: float
    tau: float
    ts: float


@dataclass
class ReconConfig:
    depth: int = 5
    back_window: float = 3600.0
    fwd_window: float = 3600.0
    top_k: int = 10
    max_branch: int | None = 8
    max_chains: int | None = 256
    per_seed: int | None = 3
    maximal: bool = False
    distinct: bool = True

    def __post_init__(self):
        if self.depth < 0 or self.back_window <= 0 or self.fwd_window <= 0 or self.top_k < 1:
            raise ValueError("depth >= 0, windows > 0, top_k >= 1 required")
        for name in ("max_branch", "max_chains", "per_seed"):
            val = getattr(self, name)
            if val is not None and val < 1:
                raise ValueError(f"{name} must be >= 1 or None")


@dataclass(frozen=True)
class AttackPath:
    edges: tuple[int, ...]
    score: float
    seed: int


def anomaly_score(params: ModelParams, graph: ProvenanceGraph, memory: MemoryState,
                  u: int, v: int, t: float, k: int = 10) -> float:
    hu = compute_embedding(graph, memory, params, u, t, k)
    hv = compute_embedding(graph, memory, params, v, t, k)
    return -math.log(score_edge(params, hu, hv))


def _read_set(graph: ProvenanceGraph, u: int, v: int, t: float, k: int) -> set[int]:
    out = {u, v}
    src, dst = graph.src, graph.dst
    for node in (u, v):
        for e in graph.neighbor_ids_before(node, t, k):
            out.add(int(src[e]))
            out.add(int(dst[e]))
    return out


def score_edges(graph: ProvenanceGraph, params: ModelParams, memory: MemoryState, edge_ids,
                k: int = 10, max_group: int = 256) -> np.ndarray:
    """Score-then-update anomaly scores for ``edge_ids`` in order; advances ``memory``.

    Consecutive edges are scored together when none of them reads a memory
    row written by an earlier edge of the same group, so the result equals
    strictly sequential scoring.
    """
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    scores = np.empty(len(edge_ids))
    src, dst, tf = graph.src, graph.dst, graph.t_first
    i = 0
    while i < len(edge_ids):
        written: set[int] = set()
        j = i
        while j < len(edge_ids) and j - i < max_group:
            e = edge_ids[j]
            u, v, t = int(src[e]), int(dst[e]), float(tf[e])
            if written and not written.isdisjoint(_read_set(graph, u, v, t, k)):
                break
            written.update((u, v))
            j += 1
        group = edge_ids[i:j]
        u, v, t = src[group], dst[group], tf[group]
        inp = prepare_embed(graph, memory, params.dims, np.concatenate([u, v]), np.concatenate([t, t]), k)
        h, _ = embed_forward(params, inp)
        p, _ = score_forward(params, h[:len(group)], h[len(group):])
        scores[i:j] = -np.log(p)
        apply_edges(graph, memory, params, group)
        i = j
    return scores


@dataclass
class DetectionResult:
    alerts: list[Alert]
    scores: np.ndarray  # per scored edge, aligned with edge_ids
    edge_ids: np.ndarray
    taus: np.ndarray = field(default_factory=lambda: np.zeros(0))


def run_threshold(scores, edge_ids, ts, stream: ScoreStream, scope=None) -> tuple[list[Alert], np.ndarray]:
    """Feed scores through ``stream``; alerts are kept only for edges in ``scope`` (all if None)."""
    alerts, taus = [], np.empty(len(scores))
    for i, (s, e) in enumerate(zip(scores, edge_ids)):
        flag, tau = stream.observe(float(s))
        taus[i] = tau
        if flag and (scope is None or scope[e]):
            alerts.append(Alert(int(e), float(s), float(tau), float(ts[i])))
    return alerts, taus


def detect_stream(graph: ProvenanceGraph, params: ModelParams, edge_ids, stream: ScoreStream,
                  memory: MemoryState | None = None, k: int = 10, scope=None) -> DetectionResult:
    """Score each edge before its memory update, threshold it, and collect alerts."""
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    memory = memory if memory is not None else MemoryState(graph.n_nodes, params.dims.d_m)
    scores = score_edges(graph, params, memory, edge_ids, k)
    alerts, taus = run_threshold(scores, edge_ids, graph.t_first[edge_ids], stream, scope)
    return DetectionResult(alerts, scores, edge_ids, taus)


def alert_rate(scores, kappa: float, alpha: float, n_min: int = 100) -> float:
    stream = ScoreStream(alpha=alpha, kappa=kappa, n_min=n_min)
    flags = 0
    for s in scores:
        flags += stream.observe(float(s))[0]
    judged = max(len(scores) - n_min, 0)
    return flags / judged if judged else 0.0


def calibrate(scores, target_rate: float,
              kappas=(0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0),
              alphas=(0.001, 0.003, 0.01, 0.03, 0.1), n_min: int = 100) -> tuple[float, float, float]:
    """Most sensitive ``(kappa, alpha)`` whose alert rate on benign ``scores`` stays within target.

    Grid is scanned by increasing kappa, then alpha; returns ``(kappa, alpha, rate)``.
    Falls back to the largest kappa with the lowest rate if nothing meets the target.
    """
    best = None
    for kappa in kappas:
        for alpha in alphas:
            rate = alert_rate(scores, kappa, alpha, n_min)
            if rate <= target_rate:
                return float(kappa), float(alpha), rate
            if best is None or rate < best[2]:
                best = (float(kappa), float(alpha), rate)
    return best


# -- reconstruction -----------------------------------------------------------------


class _Adjacency:
    """Per-node incoming/outgoing edge id arrays for vectorized candidate filtering."""

    def __init__(self, graph: ProvenanceGraph):
        self.graph = graph
        self._in: dict[int, np.ndarray] = {}
        self._out: dict[int, np.ndarray] = {}

    def edges(self, node: int, backward: bool) -> np.ndarray:
        cache = self._in if backward else self._out
        ids = cache.get(node)
        if ids is None:
            lst = self.graph.in_edges(node) if backward else self.graph.out_edges(node)
            ids = cache[node] = np.asarray(lst, dtype=np.int64)
        return ids


def _expand(adj: _Adjacency, node, t_edge, t0, cfg, score, banned, backward):
    """Maximal chains leaving (forward) or entering (backward) ``node``.

    Backward uses the latest-deadline rule (an edge is usable if
    ``t_first <= deadline``; its traversal time is ``min(t_last, deadline)``),
    forward the earliest-arrival rule (usable if ``t_last >= arrival``,
    traversal at ``max(arrival, t_first)``). With ``cfg.maximal`` a chain is
    reported only once it cannot be extended within depth, window and
    simplicity; otherwise every prefix is reported. Candidates at each step are
    visited by anomaly score (descending, then edge id) and truncated to
    ``max_branch``.
    """
    graph = adj.graph
    out: list[tuple[tuple[int, ...], frozenset]] = []
    ends = graph.src if backward else graph.dst
    tf, tl = graph.t_first, graph.t_last
    window = cfg.back_window if backward else cfg.fwd_window

    def candidates(n, t, nodes):
        ids = adj.edges(n, backward)
        if len(ids) == 0:
            return []
        if backward:
            tau = np.minimum(tl[ids], t)
            ok = (tf[ids] <= t) & (t0 - tau <= window)
        else:
            tau = np.maximum(tf[ids], t)
            ok = (tl[ids] >= t) & (tau - t0 <= window)
        cand = []
        for e, x in zip(ids[ok], tau[ok]):
            w = int(ends[e])
            if w not in nodes and w not in banned:
                cand.append((-score(int(e)), int(e), w, float(x)))
        cand.sort()
        return cand if cfg.max_branch is None else cand[:cfg.max_branch]

    def walk(n, t, edges, nodes):
        if cfg.max_chains is not None and len(out) >= cfg.max_chains:
            return
        cand = candidates(n, t, nodes) if len(edges) < cfg.depth else []
        if not cand or not cfg.maximal:
            out.append((edges, nodes))
        for _, e, w, tau in cand:
            walk(w, tau, (e,) + edges if backward else edges + (e,), nodes | {w})

    walk(node, t_edge, (), frozenset({node}))
    return out


def paths_through(graph: ProvenanceGraph, seed: int, cfg: ReconConfig, score,
                  adj: _Adjacency | None = None) -> list[tuple[int, ...]]:
    """Simple, temporally feasible paths through ``seed`` within depth and windows."""
    adj = adj or _Adjacency(graph)
    if not 0 <= seed < graph.n_edges:
        raise UnknownEdge(seed)
    u, v, t = int(graph.src[seed]), int(graph.dst[seed]), float(graph.t_first[seed])
    if u == v:
        return [(seed,)]
    back = _expand(adj, u, t, t, cfg, score, {v}, backward=True)
    fwd = _expand(adj, v, t, t, cfg, score, {u}, backward=False)
    paths = []
    for bedges, bnodes in back:
        for fedges, fnodes in fwd:
            if bnodes.isdisjoint(fnodes):
                paths.append(bedges + (seed,) + fedges)
    return paths


def _rank_key(p: AttackPath):
    return (-p.score, -len(p.edges), p.edges)


def reconstruct(graph: ProvenanceGraph, alerts, cfg: ReconConfig, score_fn) -> list[AttackPath]:
    """Global top-K paths through alert seeds by (mean score desc, length desc, edge ids).

    Each seed offers at most ``cfg.per_seed`` of its best paths (all if None);
    a path reached from several seeds is kept once, under the first seed in
    alert order. With ``cfg.distinct`` the ranking is walked greedily and a
    path sharing an edge with one already taken is skipped, so the K results
    describe K different stretches of activity.
    """
    score = score_fn if callable(score_fn) else (lambda e: float(score_fn[e]))
    best: dict[tuple[int, ...], AttackPath] = {}
    adj = _Adjacency(graph)
    for alert in alerts:
        seed = alert.edge if isinstance(alert, Alert) else int(alert)
        found = [AttackPath(edges, float(np.mean([score(e) for e in edges])), seed)
                 for edges in paths_through(graph, seed, cfg, score, adj) if edges not in best]
        found.sort(key=_rank_key)
        if cfg.per_seed is not None:
            found = found[:cfg.per_seed]
        for p in found:
            best[p.edges] = p
    ranked = sorted(best.values(), key=_rank_key)
    if not cfg.distinct:
        return ranked[:cfg.top_k]
    out, used = [], set()
    for p in ranked:
        if used.isdisjoint(p.edges):
            out.append(p)
            used.update(p.edges)
            if len(out) == cfg.top_k:
                break
    return out


# -- evaluation ---------------------------------------------------------------------


def auc(scores, positive) -> float:
    """Probability that a random positive outranks a random negative (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(alerts, paths, labels, members, scope=None, scores=None) -> dict:
    """Event-level metrics for alerts raised on (reduced) edges.

    ``labels[i]`` is the label of original event ``i``; ``members[e]`` lists the
    original events folded into reduced edge ``e``; ``scope`` (boolean per
    original event) limits which events are judged. ``scores`` (per reduced
    edge) adds a ranking AUC.
    """
    if labels is None or any(lab is None for lab in labels):
        raise MissingLabels("evaluation requires labeled events")
    names = np.array([Label(lab).value for lab in labels])
    attack = names != Label.BENIGN.value
    scope = np.ones(len(names), dtype=bool) if scope is None else np.asarray(scope, dtype=bool)
    flagged = np.zeros(len(names), dtype=bool)
    for a in alerts:
        flagged[members[a.edge if isinstance(a, Alert) else int(a)]] = True
    flagged &= scope
    tp = int((flagged & attack).sum())
    fp = int((flagged & ~attack).sum())
    fn = int((~flagged & attack & scope).sum())
    n_benign = int((~attack & scope).sum())
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    covered = set()
    for p in paths:
        for e in p.edges:
            covered.update(str(s) for s in names[members[e]] if s != Label.BENIGN.value)
    stages = sorted(covered)
    out = {
        "tp": tp, "fp": fp, "fn": fn,
        "precision": precision, "recall": recall, "f1": f1,
        "benign_alert_rate": fp / n_benign if n_benign else 0.0,
        "stages_covered": stages,
        "stage_coverage": len(stages) / len(STAGE_NAMES),
    }
    if scores is not None:
        per_event = np.full(len(names), np.nan)
        for e, m in enumerate(members):
            per_event[m] = scores[e]
        judged = scope & ~np.isnan(per_event)
        out["auc"] = auc(per_event[judged], attack[judged])
    return out
