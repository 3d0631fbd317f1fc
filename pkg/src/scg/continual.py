"""Elastic Weight Consolidation for training the temporal model on successive data phases."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import ProvenanceGraph
from .tgn import (AdamState, MemoryState, ModelParams, TrainConfig, apply_edges, batches,
                  draw_negatives, eval_loss, fit, loss_and_grad, train_rng)


class ShapeMismatch(ValueError):
    pass


class EmptySample(ValueError):
    pass


@dataclass
class EwcState:
    anchor: np.ndarray
    fisher: np.ndarray
    lam: float = 100.0

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=np.float64)
        self.fisher = np.asarray(self.fisher, dtype=np.float64)
        if self.anchor.shape != self.fisher.shape:
            raise ShapeMismatch("anchor and fisher differ in shape")
        if np.any(self.fisher < 0):
            raise ValueError("fisher entries must be >= 0")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")

    def _diff(self, params) -> np.ndarray:
        theta = params.flat if isinstance(params, ModelParams) else np.asarray(params, dtype=np.float64)
        if theta.shape != self.anchor.shape:
            raise ShapeMismatch(f"{theta.shape} vs {self.anchor.shape}")
        return theta - self.anchor

    def penalty(self, params) -> float:
        d = self._diff(params)
        return float(0.5 * self.lam * np.sum(self.fisher * d * d))

    def gradient(self, params) -> np.ndarray:
        return self.lam * self.fisher * self._diff(params)


def ewc_penalty(params, state: EwcState) -> float:
    """(lam/2) * sum_i F_i (theta_i - theta*_i)^2."""
    return state.penalty(params)


def ewc_gradient(params, state: EwcState) -> np.ndarray:
    return state.gradient(params)


def estimate_fisher(graph: ProvenanceGraph, memory: MemoryState, params: ModelParams, edge_ids,
                    n_batches: int | None, cfg: TrainConfig,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Diagonal empirical Fisher: mean over batches of the squared batch-loss gradient.

    Walks the first ``n_batches`` batches of ``edge_ids`` (all if None) from
    ``memory`` exactly as training would, minus the optimizer step. Memory
    updates go to a scratch copy, so ``memory`` and ``params`` are unchanged.
    """
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    if len(edge_ids) == 0 or (n_batches is not None and n_batches < 1):
        raise EmptySample("no events to estimate the Fisher diagonal from")
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, 3])
    scratch = memory.copy()
    fisher = np.zeros(params.dims.size)
    used = 0
    for batch in batches(edge_ids, cfg.batch_size):
        if used == n_batches:
            break
        negs = draw_negatives(graph, batch, cfg, rng)
        _, grad = loss_and_grad(graph, scratch, params, batch, negs, cfg.k)
        fisher += grad * grad
        apply_edges(graph, scratch, params, batch)
        used += 1
    return fisher / used


@dataclass
class ContinualResult:
    params: ModelParams
    ewc: EwcState | None
    eval_losses: list[list[float]] = field(default_factory=list)  # [after phase i][on phase j]
    train_losses: list[list[float]] = field(default_factory=list)


def split_phase(edge_ids, holdout: float):
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    k = len(edge_ids) - int(round(holdout * len(edge_ids)))
    return edge_ids[:k], edge_ids[k:]


def train_continual(graph: ProvenanceGraph, params: ModelParams, phases, lam: float,
                    cfg: TrainConfig, fisher_batches: int | None = None, holdout: float = 0.2) -> ContinualResult:
    """Train phase after phase, anchoring to the previous phase with an EWC penalty.

    Each phase (time-ordered edge ids) keeps its last ``holdout`` fraction for
    evaluation. After each phase the eval loss of every phase seen so far is
    recorded. One optimizer state and RNG run through all phases, and memory
    carries over from one phase to the next.
    """
    if len(phases) < 2:
        raise ValueError("need at least two phases")
    parts = [split_phase(p, holdout) for p in phases]
    adam = AdamState.zeros(params.dims.size)
    rng = train_rng(cfg.seed)
    memory = MemoryState(graph.n_nodes, params.dims.d_m)
    ewc: EwcState | None = None
    result = ContinualResult(params, None)
    for i, (train_ids, held_out) in enumerate(parts):
        hook = None
        if ewc is not None and ewc.lam > 0:
            hook = ewc.gradient
        res = fit(graph, train_ids, params, cfg, adam=adam, rng=rng, grad_hook=hook, memory=memory)
        result.train_losses.append(res.losses)
        fisher = estimate_fisher(graph, memory, params, train_ids, fisher_batches, cfg)
        ewc = EwcState(params.flat.copy(), fisher, lam)
        memory = res.memory
        # the held-out tail precedes the next phase in time
        apply_edges(graph, memory, params, held_out)
        row = []
        warm_j = np.zeros(0, dtype=np.int64)
        for train_j, eval_j in parts[:i + 1]:
            warm_j = np.concatenate([warm_j, train_j])
            row.append(eval_loss(graph, params, warm_j, eval_j, cfg, cfg.seed))
            warm_j = np.concatenate([warm_j, eval_j])
        result.eval_losses.append(row)
    result.ewc = ewc
    return result
