"""End-to-end orchestration: simulate, ingest, build, reduce, train, detect, evaluate.

Each stage is a plain function so the command line can run them one at a
time; :func:`run_pipeline` chains them. All randomness derives from
``config.seed``: the scenario uses it directly, training uses it for init and
negative sampling, and threshold calibration scores a benign-only scenario
generated from ``seed + 1``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Checkpoint
from .config import PipelineConfig
from .detect import Alert, AttackPath, calibrate, detect_stream, evaluate, reconstruct, score_edges
from .distrib import train_distributed
from .events import IngestResult, dumps_jsonl, ingest_sources
from .graph import ProvenanceGraph, build_graph
from .reduce import Reduction, reduce_graph
from .simgen import generate, split_by_time
from .tgn import AdamState, MemoryState, ModelParams, Trainer, init_model, train_rng


class Io(OSError):
    pass


# -- stages ---------------------------------------------------------------------


def simulate(cfg: PipelineConfig, **overrides) -> bytes:
    """Labeled scenario as canonical jsonl bytes."""
    return dumps_jsonl(generate(cfg.simgen.scenario(cfg.seed, **overrides)))


def ingest(sources, cfg: PipelineConfig, keep_labels: bool | None = None) -> IngestResult:
    keep = cfg.ingest.keep_labels if keep_labels is None else keep_labels
    return ingest_sources(sources, strict=cfg.ingest.strict, keep_labels=keep)


def build_and_reduce(events, cfg: PipelineConfig) -> tuple[ProvenanceGraph, Reduction]:
    graph = build_graph(events, cfg.model.d_f)
    return graph, reduce_graph(graph, cfg.reduce)


@dataclass
class Split:
    train_ids: np.ndarray  # reduced edge ids used for training, in time order
    in_scope: np.ndarray  # per reduced edge: judged by detection (not trained on)
    cut: float
    benign_only: bool


def training_split(events, red: Reduction, cfg: PipelineConfig) -> Split:
    """Time split at ``train_fraction``; with labels present, attack-labeled edges are held out too.

    A reduced edge is in the training set when it starts before the cut and
    (if ``benign_only`` and the events carry labels) none of its original
    events is labeled as an attack stage. Every other edge is in scope.
    """
    g = red.graph
    _, rest = split_by_time(events, cfg.train.train_fraction)
    cut = rest[0].ts if rest else math.inf
    mask = g.t_first < cut
    labeled = bool(events) and all(ev.label is not None for ev in events)
    benign_only = cfg.train.benign_only and labeled
    if benign_only:
        attack = np.array([ev.label.value != "BENIGN" for ev in events])
        tainted = np.zeros(g.n_edges, dtype=bool)
        np.logical_or.at(tainted, red.edge_map, attack)
        mask &= ~tainted
    return Split(np.nonzero(mask)[0], ~mask, float(cut), benign_only)


@dataclass
class TrainOutcome:
    params: ModelParams
    adam: AdamState
    memory: MemoryState
    losses: list[float]
    rng: np.random.Generator
    position: tuple[int, int]
    dropped: int = 0
    done: bool = True


def make_trainer(graph: ProvenanceGraph, train_ids, cfg: PipelineConfig,
                 resume: Checkpoint | None = None) -> Trainer:
    tcfg = cfg.train.train_config(cfg.seed)
    if resume is None:
        return Trainer(graph, train_ids, init_model(cfg.model, cfg.seed), tcfg)
    if resume.dims != cfg.model:
        raise ValueError("checkpoint model dims differ from config")
    tr = Trainer(graph, train_ids, resume.params.copy(), tcfg, adam=resume.adam.copy(), rng=resume.rng())
    tr.memory = resume.memory.copy()
    tr.epoch, tr.batch = resume.position
    return tr


def train(graph: ProvenanceGraph, train_ids, cfg: PipelineConfig, resume: Checkpoint | None = None,
          max_batches: int | None = None) -> TrainOutcome:
    """Sequential training, or simulated distributed training when ``distrib.enabled``."""
    if cfg.distrib.enabled:
        if resume is not None or max_batches is not None:
            raise ValueError("distributed training cannot be paused or resumed")
        params = init_model(cfg.model, cfg.seed)
        res = train_distributed(graph, train_ids, params, cfg.train.train_config(cfg.seed),
                                cfg.distrib.round_config())
        return TrainOutcome(res.params, res.adam, res.memory, res.losses, train_rng(cfg.seed),
                            (cfg.train.epochs, 0), res.dropped)
    tr = make_trainer(graph, train_ids, cfg, resume)
    losses_before = list(resume_losses(resume))
    res = tr.run(max_batches)
    return TrainOutcome(res.params, res.adam, res.memory, losses_before + res.losses, res.rng,
                        (tr.epoch, tr.batch), 0, tr.done)


def resume_losses(ck: Checkpoint | None) -> list[float]:
    return [] if ck is None else list(ck.config.get("losses", []))


def to_checkpoint(out: TrainOutcome, cfg: PipelineConfig) -> Checkpoint:
    meta = {"pipeline": cfg.to_dict(), "losses": out.losses, "dropped": out.dropped, "done": out.done}
    return Checkpoint(out.params, out.adam, out.memory, out.rng.bit_generator.state, meta, out.position)


@dataclass
class Threshold:
    kappa: float
    alpha: float
    n_min: int
    calibration_rate: float | None = None
    calibrated: bool = False


def calibrate_threshold(params: ModelParams, cfg: PipelineConfig) -> Threshold:
    """Pick (kappa, alpha) on a benign-only scenario drawn with ``seed + 1``."""
    d = cfg.detect
    if not d.calibrate:
        return Threshold(d.kappa, d.alpha, d.n_min)
    events = generate(cfg.simgen.scenario(cfg.seed + 1, n_attack_chains=0))
    _, red = build_and_reduce(events, cfg)
    g = red.graph
    scores = score_edges(g, params, MemoryState(g.n_nodes, cfg.model.d_m), np.arange(g.n_edges),
                         cfg.train.k)
    kappa, alpha, rate = calibrate(scores, d.target_rate, n_min=d.n_min)
    return Threshold(kappa, alpha, d.n_min, rate, True)


@dataclass
class Detection:
    scores: np.ndarray  # per reduced edge
    alerts: list[Alert]
    paths: list[AttackPath]
    threshold: Threshold


def detect(graph: ProvenanceGraph, params: ModelParams, split: Split, cfg: PipelineConfig,
           threshold: Threshold | None = None) -> Detection:
    """Score every reduced edge in time order from empty memory; alert only on in-scope edges."""
    threshold = threshold or calibrate_threshold(params, cfg)
    stream = cfg.detect.stream(threshold.kappa, threshold.alpha)
    res = detect_stream(graph, params, np.arange(graph.n_edges), stream, k=cfg.train.k, scope=split.in_scope)
    paths = reconstruct(graph, res.alerts, cfg.detect.recon_config(), res.scores)
    return Detection(res.scores, res.alerts, paths, threshold)


def metrics_for(events, red: Reduction, split: Split, det: Detection) -> dict:
    members = red.members()
    scope = split.in_scope[red.edge_map]
    return evaluate(det.alerts, det.paths, [ev.label for ev in events], members, scope, det.scores)


# -- report ---------------------------------------------------------------------


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        return _clean(x.item())
    return x


def path_record(graph: ProvenanceGraph, p: AttackPath, scores) -> dict:
    edges = []
    for e in p.edges:
        u, v = int(graph.src[e]), int(graph.dst[e])
        edges.append({"id": int(e), "kind": graph.edge_kind(e).value, "score": float(scores[e]),
                      "src": {"id": u, "kind": graph.node_kind[u].value, "key": graph.node_key[u]},
                      "dst": {"id": v, "kind": graph.node_kind[v].value, "key": graph.node_key[v]},
                      "t_first": float(graph.t_first[e]), "t_last": float(graph.t_last[e]),
                      "count": int(graph.count[e])})
    return {"seed": int(p.seed), "score": float(p.score), "edges": edges}


def report_body(cfg: PipelineConfig, graph: ProvenanceGraph, red: Reduction, det: Detection,
                metrics: dict | None, counts: dict, drops: dict, timing: dict | None = None) -> dict:
    members = red.members()
    th = det.threshold
    return {
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "counts": counts,
        "drops": drops,
        "threshold": {"kappa": th.kappa, "alpha": th.alpha, "n_min": th.n_min,
                      "calibrated": th.calibrated, "calibration_rate": th.calibration_rate},
        "alerts": [{"edge": a.edge, "score": a.score, "tau": a.tau, "ts": a.ts,
                    "events": [int(m) for m in members[a.edge]]} for a in det.alerts],
        "paths": [path_record(red.graph, p, det.scores) for p in det.paths],
        "scores": [float(s) for s in det.scores],
        "metrics": metrics,
        "timing": timing or {},
    }


def dumps_report(report: dict) -> bytes:
    return (json.dumps(_clean(report), sort_keys=True, indent=1, allow_nan=False) + "\n").encode("utf-8")


def write_report(path, alerts, paths, metrics, **extra) -> bytes:
    """Write a JSON report with sorted keys; ``extra`` holds config echo, seed, drops, timing, etc."""
    report = dict(extra)
    report.setdefault("version", __version__)
    report.update(alerts=alerts, paths=paths, metrics=metrics)
    data = dumps_report(report)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise Io(f"cannot write report {path}: {exc.strerror}") from exc
    return data


# -- one-shot -----------------------------------------------------------------------


@dataclass
class PipelineResult:
    events: list
    graph: ProvenanceGraph
    reduction: Reduction
    split: Split
    training: TrainOutcome
    detection: Detection
    metrics: dict | None
    report: dict
    timing: dict = field(default_factory=dict)


class _Clock:
    def __init__(self):
        self.marks: dict[str, float] = {}
        self._t = time.perf_counter()

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        self.marks[name] = round(now - self._t, 3)
        self._t = now


def run_pipeline(cfg: PipelineConfig, sources=None, timing: bool = False) -> PipelineResult:
    """simgen -> ingest -> build -> reduce -> train -> detect -> eval.

    Without ``sources`` the scenario is generated from the config; labels are
    kept for training-set selection and evaluation only. Wall-clock timing
    goes into the report only when ``timing`` is set, since it would break
    byte-identical reports.
    """
    clock = _Clock()
    if sources is None:
        sources = [("jsonl", simulate(cfg))]
        clock.lap("simgen")
    ing = ingest(sources, cfg, keep_labels=True)
    events = ing.events
    clock.lap("ingest")
    graph, red = build_and_reduce(events, cfg)
    clock.lap("build_reduce")
    split = training_split(events, red, cfg)
    out = train(red.graph, split.train_ids, cfg)
    clock.lap("train")
    det = detect(red.graph, out.params, split, cfg)
    clock.lap("detect")
    labeled = bool(events) and all(ev.label is not None for ev in events)
    metrics = metrics_for(events, red, split, det) if labeled else None
    clock.lap("eval")
    counts = run_counts(events, graph, red, split)
    drops = {"ingest_skipped": list(ing.skipped), "distrib_dropped_writes": out.dropped}
    report = report_body(cfg, graph, red, det, metrics, counts, drops, clock.marks if timing else None)
    return PipelineResult(events, graph, red, split, out, det, metrics, report, clock.marks)


def run_counts(events, graph: ProvenanceGraph, red: Reduction, split: Split) -> dict:
    return {"events": len(events), "nodes": graph.n_nodes, "edges": graph.n_edges,
            "reduced_nodes": red.graph.n_nodes, "reduced_edges": red.graph.n_edges,
            "train_edges": int(len(split.train_ids)), "scope_edges": int(split.in_scope.sum()),
            "train_cut": split.cut, "benign_only": split.benign_only}
