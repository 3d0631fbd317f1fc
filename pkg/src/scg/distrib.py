"""Simulated data-parallel training with hash-partitioned streams and synchronous averaging.

Workers are isolated state machines. During a round each one trains on its
own stream against a private copy of the memory table taken at round start;
it may write only the memory rows of nodes it owns. At the barrier the owned
rows are gathered into the global table and parameters (with Adam moments)
are averaged in worker-id order, so results do not depend on how the round's
work was scheduled.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .features import fnv1a_64
from .graph import ProvenanceGraph
from .tgn import (AdamState, MemoryState, ModelParams, TrainConfig, train_batch)


@dataclass
class RoundConfig:
    workers: int = 4
    batches_per_round: int = 10
    rounds: int | None = None  # None: run until every stream is exhausted
    threads: int = 1

    def __post_init__(self):
        if self.workers < 1 or self.batches_per_round < 1 or self.threads < 1:
            raise ValueError("workers, batches_per_round and threads must be >= 1")
        if self.rounds is not None and self.rounds < 0:
            raise ValueError("rounds must be >= 0")


def node_owner(graph: ProvenanceGraph, workers: int) -> np.ndarray:
    """Owner worker of every node: FNV-1a of ``"KIND:key"`` modulo ``workers``."""
    return np.asarray([fnv1a_64(f"{k.value}:{key}".encode()) % workers
                       for k, key in zip(graph.node_kind, graph.node_key)], dtype=np.int64)


def partition_events(graph: ProvenanceGraph, edge_ids, workers: int) -> list[np.ndarray]:
    """Route each edge to the owner of its source node, keeping relative order."""
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    owner = node_owner(graph, workers)[graph.src[edge_ids]]
    return [edge_ids[owner == w] for w in range(workers)]


@dataclass
class WorkerState:
    wid: int
    params: ModelParams
    adam: AdamState
    owned: np.ndarray
    stream: np.ndarray
    rng: np.random.Generator
    memory: MemoryState | None = None
    cursor: int = 0
    dropped: int = 0

    @property
    def exhausted(self) -> bool:
        return self.cursor >= len(self.stream)


@dataclass
class LossRecord:
    round: int
    worker: int
    batch: int
    loss: float


def worker_rng(seed: int, wid: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed ^ wid))


def run_worker(worker: WorkerState, graph: ProvenanceGraph, cfg: TrainConfig, n_batches: int,
               writable) -> list[tuple[int, float]]:
    out = []
    for _ in range(n_batches):
        if worker.exhausted:
            break
        batch = worker.stream[worker.cursor:worker.cursor + cfg.batch_size]
        loss, dropped = train_batch(graph, worker.memory, worker.params, worker.adam, batch,
                                    worker.rng, cfg, writable=writable)
        worker.dropped += dropped
        out.append((worker.cursor // cfg.batch_size, loss))
        worker.cursor += len(batch)
    return out


def run_round(workers: list[WorkerState], graph: ProvenanceGraph, memory: MemoryState,
              cfg: TrainConfig, rcfg: RoundConfig, round_no: int = 0) -> list[LossRecord]:
    """One isolated round: every worker trains up to ``batches_per_round`` batches.

    Each worker starts from a private copy of ``memory`` (the round-start
    snapshot); afterwards its owned rows are written back.
    """
    single = len(workers) == 1
    for w in workers:
        w.memory = memory.copy()

    def job(w):
        return run_worker(w, graph, cfg, rcfg.batches_per_round, None if single else w.owned)

    if rcfg.threads > 1 and not single:
        with ThreadPoolExecutor(rcfg.threads) as pool:
            results = list(pool.map(job, workers))
    else:
        results = [job(w) for w in workers]
    for w in workers:
        memory.mem[w.owned] = w.memory.mem[w.owned]
        memory.last[w.owned] = w.memory.last[w.owned]
        w.memory = None
    return [LossRecord(round_no, w.wid, b, loss) for w, res in zip(workers, results) for b, loss in res]


def average_params(workers: list[WorkerState]) -> None:
    """Uniform mean of params and Adam moments in worker-id order, broadcast back to every worker.

    The mean is taken as ``x_0 + sum(x_i - x_0) / n`` so that identical copies
    come back bit-for-bit unchanged. Adam's step counter becomes the largest
    counter among the workers.
    """
    workers = sorted(workers, key=lambda w: w.wid)
    n = len(workers)
    if n == 1:
        return

    def mean(arrays):
        base = arrays[0]
        acc = np.zeros_like(base)
        for a in arrays[1:]:
            acc += a - base
        return base + acc / n

    theta = mean([w.params.flat for w in workers])
    m = mean([w.adam.m for w in workers])
    v = mean([w.adam.v for w in workers])
    t = max(w.adam.t for w in workers)
    for w in workers:
        w.params.flat[:] = theta
        w.adam.m[:] = m
        w.adam.v[:] = v
        w.adam.t = t


@dataclass
class DistributedResult:
    params: ModelParams
    adam: AdamState
    memory: MemoryState
    history: list[LossRecord] = field(default_factory=list)
    dropped: int = 0
    rounds: int = 0

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.history]

    def history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["round", "worker", "batch", "loss"])
        for r in self.history:
            writer.writerow([r.round, r.worker, r.batch, repr(r.loss)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"rounds": self.rounds, "batches": len(self.history), "dropped_writes": self.dropped}


def train_distributed(graph: ProvenanceGraph, edge_ids, params: ModelParams, cfg: TrainConfig,
                      rcfg: RoundConfig, epochs: int | None = None) -> DistributedResult:
    """Partition, then per epoch run rounds (snapshot, train, barrier, average) until done.

    ``params`` is updated in place with the final averaged weights. With one
    worker the loss sequence equals :func:`scg.tgn.fit` on the same seed.
    """
    epochs = cfg.epochs if epochs is None else epochs
    streams = partition_events(graph, edge_ids, rcfg.workers)
    owner = node_owner(graph, rcfg.workers)
    workers = [WorkerState(w, params.copy(), AdamState.zeros(params.dims.size), owner == w,
                           streams[w], worker_rng(cfg.seed, w)) for w in range(rcfg.workers)]
    memory = MemoryState(graph.n_nodes, params.dims.d_m)
    history: list[LossRecord] = []
    rounds = 0
    for _ in range(epochs):
        memory = MemoryState(graph.n_nodes, params.dims.d_m)
        for w in workers:
            w.cursor = 0
        while not all(w.exhausted for w in workers):
            if rcfg.rounds is not None and rounds >= rcfg.rounds:
                break
            history.extend(run_round(workers, graph, memory, cfg, rcfg, rounds))
            average_params(workers)
            rounds += 1
    params.flat[:] = workers[0].params.flat
    return DistributedResult(params, workers[0].adam, memory, history,
                             sum(w.dropped for w in workers), rounds)
