"""Memory-based temporal graph model for link likelihood on provenance edges.

Per node the model keeps a memory vector updated by a GRU cell each time the
node takes part in an edge. A node's embedding at time ``t`` attends (one
head) over its ``k`` most recent incident edges before ``t``; a two-layer MLP
scores a pair of embeddings as an edge probability.

All learnable weights live in one flat float64 vector (:class:`ModelParams`)
laid out in :data:`PARAM_ORDER`. Gradients are computed by an explicit
reverse pass over the batched forward computation; memories are constants
for differentiation (they are written only after the optimizer step), so the
GRU weights act as a fixed recurrent encoder and receive zero gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import TimeEncoder
from .graph import ProvenanceGraph, UnknownNode

PARAM_ORDER = (
    "W_q", "W_k", "W_v", "W_o", "b_o",
    "W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h",
    "W_1", "b_1", "w_2", "b_2",
)
P_CLAMP = 1e-12


class EmptyBatch(ValueError):
    pass


class TimeRegression(ValueError):
    def __init__(self, node: int, t: float):
        super().__init__(f"TimeRegression(node={node}, t={t})")
        self.node, self.t = node, t


class BadEpsilon(ValueError):
    pass


@dataclass(frozen=True)
class ModelDims:
    d_m: int = 32
    d_e: int = 32
    d_h: int = 32
    d_s: int = 64
    d_f: int = 32
    d_t: int = 16

    def __post_init__(self):
        for name in ("d_m", "d_e", "d_h", "d_s", "d_f"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_t < 2 or self.d_t % 2:
            raise ValueError("d_t must be even and >= 2")

    @property
    def d_in(self) -> int:
        return self.d_m + self.d_f + self.d_t

    def shapes(self) -> dict[str, tuple[int, ...]]:
        m, e, h, s, d = self.d_m, self.d_e, self.d_h, self.d_s, self.d_in
        return {
            "W_q": (h, d), "W_k": (h, d), "W_v": (h, d), "W_o": (e, m + h), "b_o": (e,),
            "W_z": (m, d), "W_r": (m, d), "W_h": (m, d),
            "U_z": (m, m), "U_r": (m, m), "U_h": (m, m),
            "b_z": (m,), "b_r": (m,), "b_h": (m,),
            "W_1": (s, 2 * e), "b_1": (s,), "w_2": (s,), "b_2": (),
        }

    def layout(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        out, off = {}, 0
        shapes = self.shapes()
        for name in PARAM_ORDER:
            out[name] = (off, shapes[name])
            off += math.prod(shapes[name])
        return out

    @property
    def size(self) -> int:
        return sum(math.prod(s) for s in self.shapes().values())


class ModelParams:
    """Flat parameter vector with named array views."""

    def __init__(self, dims: ModelDims, flat=None):
        self.dims = dims
        self.layout = dims.layout()
        if flat is None:
            flat = np.zeros(dims.size)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (dims.size,):
            raise ValueError(f"expected {dims.size} parameters, got {flat.shape}")
        self.flat = flat

    def __getitem__(self, name: str) -> np.ndarray:
        off, shape = self.layout[name]
        return self.flat[off:off + math.prod(shape)].reshape(shape)

    def slice_of(self, name: str) -> slice:
        off, shape = self.layout[name]
        return slice(off, off + math.prod(shape))

    def views(self) -> dict[str, np.ndarray]:
        return {name: self[name] for name in PARAM_ORDER}

    def copy(self) -> ModelParams:
        return ModelParams(self.dims, self.flat.copy())

    def zeros_like(self) -> ModelParams:
        return ModelParams(self.dims)

    @classmethod
    def initialize(cls, dims: ModelDims, rng: np.random.Generator) -> ModelParams:
        """Glorot-uniform matrices, zero biases."""
        p = cls(dims)
        for name in PARAM_ORDER:
            shape = dims.shapes()[name]
            if len(shape) == 2:
                bound = math.sqrt(6.0 / (shape[0] + shape[1]))
                p[name][...] = rng.uniform(-bound, bound, size=shape)
        return p


class MemoryState:
    def __init__(self, n_nodes: int, d_m: int):
        self.mem = np.zeros((n_nodes, d_m))
        self.last = np.zeros(n_nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.last)

    def copy(self) -> MemoryState:
        out = MemoryState.__new__(MemoryState)
        out.mem = self.mem.copy()
        out.last = self.last.copy()
        return out

    def ensure(self, n_nodes: int) -> None:
        if n_nodes > len(self.last):
            extra = n_nodes - len(self.last)
            self.mem = np.vstack([self.mem, np.zeros((extra, self.mem.shape[1]))])
            self.last = np.concatenate([self.last, np.zeros(extra)])


@dataclass
class TrainConfig:
    batch_size: int = 64
    negatives: int = 1
    k: int = 10
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    epochs: int = 1
    negative_pool: str = "all"  # "all": every node of the kind; "seen": only nodes observed by event time

    def __post_init__(self):
        if min(self.batch_size, self.negatives, self.k) < 1:
            raise ValueError("batch_size, negatives and k must be >= 1")
        if self.negative_pool not in ("seen", "all"):
            raise ValueError("negative_pool must be 'seen' or 'all'")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), 0)

    def copy(self) -> AdamState:
        return AdamState(self.m.copy(), self.v.copy(), self.t)

    def step(self, theta: np.ndarray, grad: np.ndarray, cfg: TrainConfig) -> None:
        self.t += 1
        self.m *= cfg.beta1
        self.m += (1.0 - cfg.beta1) * grad
        self.v *= cfg.beta2
        self.v += (1.0 - cfg.beta2) * grad * grad
        m_hat = self.m / (1.0 - cfg.beta1 ** self.t)
        v_hat = self.v / (1.0 - cfg.beta2 ** self.t)
        theta -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


_ENCODERS: dict[int, TimeEncoder] = {}


def time_encoder(d_t: int) -> TimeEncoder:
    enc = _ENCODERS.get(d_t)
    if enc is None:
        enc = _ENCODERS[d_t] = TimeEncoder(d_t)
    return enc


def sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


# -- embedding ------------------------------------------------------------------


@dataclass
class EmbedInputs:
    """Parameter-independent inputs of a batch of embeddings."""

    nodes: np.ndarray
    mem_u: np.ndarray   # (n, d_m)
    xu: np.ndarray      # (n, D) query input [mem_u; 0; enc(0)]
    X: np.ndarray       # (n, k, D) neighbour inputs [mem_peer; feat; enc(dt)]
    mask: np.ndarray    # (n, k)
    edge_ids: np.ndarray  # (n, k), -1 padded


def prepare_embed(graph: ProvenanceGraph, memory: MemoryState, dims: ModelDims,
                  nodes, times, k: int) -> EmbedInputs:
    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    n = len(nodes)
    eids = np.full((n, k), -1, dtype=np.int64)
    for i in range(n):
        u = int(nodes[i])
        if not 0 <= u < graph.n_nodes:
            raise UnknownNode(u)
        ids = graph.neighbor_ids_before(u, float(times[i]), k)
        eids[i, :len(ids)] = ids
    mask = eids >= 0
    e = np.where(mask, eids, 0)
    src, dst = graph.src[e], graph.dst[e]
    peer = np.where(src == nodes[:, None], dst, src)
    dt = np.where(mask, times[:, None] - graph.t_first[e], 0.0)
    enc = time_encoder(dims.d_t)
    X = np.concatenate([memory.mem[peer], graph.feat[e], enc(dt)], axis=-1)
    X[~mask] = 0.0
    mem_u = memory.mem[nodes]
    xu = np.concatenate([mem_u, np.zeros((n, dims.d_f)), np.broadcast_to(enc(0.0), (n, dims.d_t))],
                        axis=-1)
    return EmbedInputs(nodes, mem_u, xu, X, mask, eids)


def embed_forward(params: ModelParams, inp: EmbedInputs):
    d = params.dims
    W_q, W_k, W_v, W_o, b_o = (params[n] for n in ("W_q", "W_k", "W_v", "W_o", "b_o"))
    n, k, D = inp.X.shape
    q = inp.xu @ W_q.T
    Xf = inp.X.reshape(n * k, D)
    K = (Xf @ W_k.T).reshape(n, k, d.d_h)
    V = (Xf @ W_v.T).reshape(n, k, d.d_h)
    scale = 1.0 / math.sqrt(d.d_h)
    logits = np.einsum("nh,nkh->nk", q, K) * scale
    logits = np.where(inp.mask, logits, -np.inf)
    has = inp.mask.any(axis=1)
    mx = np.where(has, logits.max(axis=1, initial=-np.inf), 0.0)
    w = np.where(inp.mask, np.exp(logits - mx[:, None]), 0.0)
    denom = w.sum(axis=1)
    a = w / np.where(has, denom, 1.0)[:, None]
    c = np.einsum("nk,nkh->nh", a, V)
    o_in = np.concatenate([inp.mem_u, c], axis=1)
    z = o_in @ W_o.T + b_o
    h = np.maximum(z, 0.0)
    return h, (q, K, V, a, o_in, z)


def embed_backward(params: ModelParams, inp: EmbedInputs, cache, dh: np.ndarray,
                   grad: ModelParams) -> None:
    d = params.dims
    q, K, V, a, o_in, z = cache
    n, k, D = inp.X.shape
    dz = dh * (z > 0)
    grad["W_o"][...] += dz.T @ o_in
    grad["b_o"][...] += dz.sum(axis=0)
    dc = dz @ params["W_o"][:, d.d_m:]
    dV = a[:, :, None] * dc[:, None, :]
    da = np.einsum("nh,nkh->nk", dc, V)
    scale = 1.0 / math.sqrt(d.d_h)
    dlog = a * (da - (a * da).sum(axis=1, keepdims=True)) * scale
    dq = np.einsum("nk,nkh->nh", dlog, K)
    dK = dlog[:, :, None] * q[:, None, :]
    Xf = inp.X.reshape(n * k, D)
    grad["W_q"][...] += dq.T @ inp.xu
    grad["W_k"][...] += dK.reshape(n * k, d.d_h).T @ Xf
    grad["W_v"][...] += dV.reshape(n * k, d.d_h).T @ Xf


def attention_weights(graph, memory, params, u: int, t: float, k: int) -> np.ndarray:
    inp = prepare_embed(graph, memory, params.dims, [u], [t], k)
    _, cache = embed_forward(params, inp)
    return cache[3][0][inp.mask[0]]


def compute_embedding(graph: ProvenanceGraph, memory: MemoryState, params: ModelParams,
                      u: int, t: float, k: int = 10) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be >= 0")
    inp = prepare_embed(graph, memory, params.dims, [u], [t], k)
    return embed_forward(params, inp)[0][0]


# -- scorer -----------------------------------------------------------------------


def score_forward(params: ModelParams, hu: np.ndarray, hv: np.ndarray):
    H = np.concatenate([hu, hv], axis=-1)
    pre = H @ params["W_1"].T + params["b_1"]
    r = np.maximum(pre, 0.0)
    logit = r @ params["w_2"] + params["b_2"]
    raw = sigmoid(logit)
    p = np.clip(raw, P_CLAMP, 1.0 - P_CLAMP)
    live = (raw > P_CLAMP) & (raw < 1.0 - P_CLAMP)
    return p, (H, pre, r, live)


def score_backward(params: ModelParams, cache, dlogit: np.ndarray, grad: ModelParams):
    H, pre, r, live = cache
    dlogit = dlogit * live
    grad["w_2"][...] += r.T @ dlogit
    grad["b_2"][...] += dlogit.sum()
    dpre = dlogit[:, None] * params["w_2"][None, :] * (pre > 0)
    grad["W_1"][...] += dpre.T @ H
    grad["b_1"][...] += dpre.sum(axis=0)
    dH = dpre @ params["W_1"]
    e = params.dims.d_e
    return dH[:, :e], dH[:, e:]


def score_edge(params: ModelParams, h_u, h_v) -> float:
    p, _ = score_forward(params, np.atleast_2d(h_u), np.atleast_2d(h_v))
    return float(p[0])


# -- memory -----------------------------------------------------------------------


def gru_cell(params: ModelParams, msg: np.ndarray, state: np.ndarray) -> np.ndarray:
    z = sigmoid(msg @ params["W_z"].T + state @ params["U_z"].T + params["b_z"])
    r = sigmoid(msg @ params["W_r"].T + state @ params["U_r"].T + params["b_r"])
    h_tilde = np.tanh(msg @ params["W_h"].T + (r * state) @ params["U_h"].T + params["b_h"])
    return (1.0 - z) * state + z * h_tilde


def update_memory(memory: MemoryState, params: ModelParams, u: int, v: int, t: float,
                  feat: np.ndarray, writable=None) -> int:
    """GRU update of both endpoints from a pre-update snapshot.

    ``writable`` (boolean per node) restricts which endpoints are written;
    returns the number of dropped writes.
    """
    ends = [u, v]
    keep = [True, True] if writable is None else [bool(writable[u]), bool(writable[v])]
    for node, ok in zip(ends, keep):
        if ok and t < memory.last[node]:
            raise TimeRegression(node, t)
    rows = [i for i in range(2) if keep[i]]
    dropped = 2 - len(rows)
    if not rows:
        return dropped
    enc = time_encoder(params.dims.d_t)
    state = memory.mem[ends]
    gaps = np.where(keep, t - memory.last[ends], 0.0)
    msg = np.concatenate([state[::-1], np.broadcast_to(feat, (2, len(feat))), enc(gaps)], axis=1)
    new = gru_cell(params, msg[rows], state[rows])
    for j, i in enumerate(rows):
        memory.mem[ends[i]] = new[j]
        memory.last[ends[i]] = t
    return dropped


def apply_edges(graph: ProvenanceGraph, memory: MemoryState, params: ModelParams, edge_ids,
                writable=None) -> int:
    dropped = 0
    src, dst, tf, feat = graph.src, graph.dst, graph.t_first, graph.feat
    for e in edge_ids:
        dropped += update_memory(memory, params, int(src[e]), int(dst[e]), float(tf[e]), feat[e], writable)
    return dropped


# -- loss ---------------------------------------------------------------------------


def sample_negatives(graph: ProvenanceGraph, dsts, q: int, rng: np.random.Generator,
                     times=None) -> np.ndarray:
    """``q`` corrupted destinations per positive, uniform over the destination's kind minus itself.

    With ``times`` the pool is limited to nodes already seen at each event's
    time; otherwise every node of the kind is a candidate.
    """
    out = np.empty((len(dsts), q), dtype=np.int64)
    n_all = graph.n_nodes
    for i, v in enumerate(dsts):
        v = int(v)
        kind = graph.node_kind[v]
        if times is None:
            pool = graph.nodes_of_kind(kind)
            pos = int(np.searchsorted(pool, v))
            size = len(pool)
        else:
            ids, first, rank = graph.kind_timeline(kind)
            size = int(np.searchsorted(first, times[i], side="right"))
            pool, pos = ids, int(rank[v])
            if pos >= size:
                raise ValueError(f"node {v} not seen by t={times[i]}")
        if size >= 2:
            j = rng.integers(0, size - 1, size=q)
            out[i] = pool[j + (j >= pos)]
        else:
            if n_all < 2:
                raise ValueError("need at least two nodes for negative sampling")
            j = rng.integers(0, n_all - 1, size=q)
            out[i] = j + (j >= v)
    return out


def draw_negatives(graph: ProvenanceGraph, edge_ids, cfg: TrainConfig, rng) -> np.ndarray:
    times = graph.t_first[edge_ids] if cfg.negative_pool == "seen" else None
    return sample_negatives(graph, graph.dst[edge_ids], cfg.negatives, rng, times)


@dataclass
class BatchContext:
    inp: EmbedInputs
    n_events: int
    q: int


def prepare_batch(graph: ProvenanceGraph, memory: MemoryState, dims: ModelDims, edge_ids,
                  negatives: np.ndarray, k: int) -> BatchContext:
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    b = len(edge_ids)
    if b == 0:
        raise EmptyBatch("batch has no events")
    q = negatives.shape[1]
    u = graph.src[edge_ids]
    v = graph.dst[edge_ids]
    t = graph.t_first[edge_ids]
    nodes = np.concatenate([u, v, negatives.reshape(-1)])
    times = np.concatenate([t, t, np.repeat(t, q)])
    return BatchContext(prepare_embed(graph, memory, dims, nodes, times, k), b, q)


def batch_loss(params: ModelParams, ctx: BatchContext, grad: ModelParams | None = None) -> float:
    """Mean of ``-ln p(u,v) - (1/Q) sum ln(1 - p(u,v'))``; accumulates its gradient into ``grad``."""
    b, q = ctx.n_events, ctx.q
    h, cache = embed_forward(params, ctx.inp)
    hu, hv, hn = h[:b], h[b:2 * b], h[2 * b:]
    pair_u = np.concatenate([hu, np.repeat(hu, q, axis=0)])
    pair_v = np.concatenate([hv, hn])
    p, scache = score_forward(params, pair_u, pair_v)
    pos, neg = p[:b], p[b:]
    loss = float(-(np.log(pos).sum() + np.log1p(-neg).sum() / q) / b)
    if grad is not None:
        dlogit = np.concatenate([(pos - 1.0) / b, neg / (b * q)])
        d_pu, d_pv = score_backward(params, scache, dlogit, grad)
        dh = np.zeros_like(h)
        dh[:b] += d_pu[:b] + d_pu[b:].reshape(b, q, -1).sum(axis=1)
        dh[b:2 * b] += d_pv[:b]
        dh[2 * b:] += d_pv[b:]
        embed_backward(params, ctx.inp, cache, dh, grad)
    return loss


def loss_and_grad(graph, memory, params, edge_ids, negatives, k):
    ctx = prepare_batch(graph, memory, params.dims, edge_ids, negatives, k)
    grad = params.zeros_like()
    loss = batch_loss(params, ctx, grad)
    return loss, grad.flat


def train_batch(graph: ProvenanceGraph, memory: MemoryState, params: ModelParams, adam: AdamState,
                edge_ids, rng: np.random.Generator, cfg: TrainConfig, grad_hook=None,
                writable=None) -> tuple[float, int]:
    """One optimizer step on a batch of positive edges, then memory updates in time order.

    Returns ``(pre-step loss, dropped memory writes)``.
    """
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    if len(edge_ids) == 0:
        raise EmptyBatch("batch has no events")
    negs = draw_negatives(graph, edge_ids, cfg, rng)
    loss, grad = loss_and_grad(graph, memory, params, edge_ids, negs, cfg.k)
    if grad_hook is not None:
        grad = grad + grad_hook(params)
    adam.step(params.flat, grad, cfg)
    dropped = apply_edges(graph, memory, params, edge_ids, writable)
    return loss, dropped


def batches(edge_ids, size: int):
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    for i in range(0, len(edge_ids), size):
        yield edge_ids[i:i + size]


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    memory: MemoryState
    losses: list[float] = field(default_factory=list)
    rng: np.random.Generator | None = None


def init_model(dims: ModelDims, seed: int) -> ModelParams:
    return ModelParams.initialize(dims, np.random.default_rng([seed, 1]))


def train_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class Trainer:
    """Resumable sequential training over ``edge_ids`` in time order.

    Every epoch starts from a copy of ``memory`` (zeros if None). The position
    ``(epoch, batch)`` together with params, Adam state, live memory and RNG is
    everything needed to continue a run exactly.
    """

    def __init__(self, graph: ProvenanceGraph, edge_ids, params: ModelParams, cfg: TrainConfig,
                 epochs: int | None = None, adam: AdamState | None = None,
                 rng: np.random.Generator | None = None, grad_hook=None,
                 memory: MemoryState | None = None):
        self.graph = graph
        self.edge_ids = np.asarray(edge_ids, dtype=np.int64)
        self.params = params
        self.cfg = cfg
        self.epochs = cfg.epochs if epochs is None else epochs
        self.adam = adam or AdamState.zeros(params.dims.size)
        self.rng = rng or train_rng(cfg.seed)
        self.grad_hook = grad_hook
        self.start_memory = memory if memory is not None else MemoryState(graph.n_nodes, params.dims.d_m)
        self.memory = self.start_memory.copy()
        self.epoch = 0
        self.batch = 0
        self.losses: list[float] = []

    @property
    def batches_per_epoch(self) -> int:
        return -(-len(self.edge_ids) // self.cfg.batch_size)

    @property
    def done(self) -> bool:
        return self.epoch >= self.epochs or self.batches_per_epoch == 0

    def step(self) -> float:
        if self.batch == 0:
            self.memory = self.start_memory.copy()
        b = self.cfg.batch_size
        ids = self.edge_ids[self.batch * b:(self.batch + 1) * b]
        loss, _ = train_batch(self.graph, self.memory, self.params, self.adam, ids, self.rng,
                              self.cfg, self.grad_hook)
        self.losses.append(loss)
        self.batch += 1
        if self.batch == self.batches_per_epoch:
            self.epoch, self.batch = self.epoch + 1, 0
        return loss

    def run(self, max_batches: int | None = None) -> TrainResult:
        n = 0
        while not self.done and (max_batches is None or n < max_batches):
            self.step()
            n += 1
        return TrainResult(self.params, self.adam, self.memory, self.losses, self.rng)


def fit(graph: ProvenanceGraph, edge_ids, params: ModelParams, cfg: TrainConfig,
        epochs: int | None = None, adam: AdamState | None = None,
        rng: np.random.Generator | None = None, grad_hook=None,
        memory: MemoryState | None = None) -> TrainResult:
    """Train to completion; ``grad_hook(params)`` adds an extra gradient term before each step."""
    return Trainer(graph, edge_ids, params, cfg, epochs, adam, rng, grad_hook, memory).run()


def eval_loss(graph: ProvenanceGraph, params: ModelParams, warm_edges, eval_edges,
              cfg: TrainConfig, seed: int = 0) -> float:
    """Mean link-prediction loss on ``eval_edges`` after replaying ``warm_edges`` into fresh memory."""
    memory = MemoryState(graph.n_nodes, params.dims.d_m)
    apply_edges(graph, memory, params, warm_edges)
    rng = np.random.default_rng([seed, 2])
    total, n = 0.0, 0
    for batch in batches(eval_edges, cfg.batch_size):
        negs = draw_negatives(graph, batch, cfg, rng)
        ctx = prepare_batch(graph, memory, params.dims, batch, negs, cfg.k)
        total += batch_loss(params, ctx) * len(batch)
        n += len(batch)
        apply_edges(graph, memory, params, batch)
    return total / n if n else float("nan")


def activation_pattern(params: ModelParams, ctx: BatchContext) -> np.ndarray:
    """Signs of every ReLU input plus the probability clamp mask for a batch."""
    b, q = ctx.n_events, ctx.q
    h, cache = embed_forward(params, ctx.inp)
    hu = h[:b]
    pair_u = np.concatenate([hu, np.repeat(hu, q, axis=0)])
    pair_v = np.concatenate([h[b:2 * b], h[2 * b:]])
    _, (_, pre, _, live) = score_forward(params, pair_u, pair_v)
    return np.concatenate([(cache[5] > 0).ravel(), (pre > 0).ravel(), live])


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    floor: float = 1e-8
    max_abs_error: float = 0.0


def fd_resolution(loss: float, eps: float) -> float:
    """Roundoff bound on a float64 central difference of a function of size ``loss``."""
    return 4.0 * np.finfo(np.float64).eps * max(1.0, abs(loss)) / eps


def grad_check(params: ModelParams, graph: ProvenanceGraph, memory: MemoryState, batch,
               eps: float = 1e-5, rng: np.random.Generator | int = 0, fraction: float = 0.05,
               negatives: np.ndarray | None = None, k: int = 10, q: int = 1,
               names: tuple[str, ...] | None = None, skip_kinks: bool = True,
               details: bool = False, floor: float | None = 1e-8):
    """Max relative error between the analytic gradient and central differences.

    Checks a random ``fraction`` of coordinates (restricted to ``names`` if
    given). Relative error is ``|a - b| / max(floor, |a| + |b|)``. With
    ``floor=None`` the floor is ``1e4 * fd_resolution(loss, eps)``, the
    smallest gradient the central difference still resolves to four digits;
    below it the comparison is effectively absolute. With ``skip_kinks`` a
    coordinate whose +/-eps probes flip a ReLU or clamp is not differentiable
    there and is counted in ``skipped_kinks`` instead.
    """
    if not eps > 0:
        raise BadEpsilon(eps)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    batch = np.asarray(batch, dtype=np.int64)
    if negatives is None:
        negatives = sample_negatives(graph, graph.dst[batch], q, rng)
    ctx = prepare_batch(graph, memory, params.dims, batch, negatives, k)
    grad = params.zeros_like()
    loss = batch_loss(params, ctx, grad)
    if floor is None:
        floor = 1e4 * fd_resolution(loss, eps)
    if names is None:
        pool = np.arange(params.dims.size)
    else:
        pool = np.concatenate([np.arange(params.dims.size)[params.slice_of(n)] for n in names])
    n_check = max(1, int(round(fraction * len(pool))))
    coords = rng.choice(pool, size=min(n_check, len(pool)), replace=False)
    probe = params.copy()
    worst, worst_abs, skipped = 0.0, 0.0, 0
    for i in coords:
        orig = probe.flat[i]
        probe.flat[i] = orig + eps
        up = batch_loss(probe, ctx)
        pat_up = activation_pattern(probe, ctx) if skip_kinks else None
        probe.flat[i] = orig - eps
        down = batch_loss(probe, ctx)
        kink = skip_kinks and not np.array_equal(pat_up, activation_pattern(probe, ctx))
        probe.flat[i] = orig
        if kink:
            skipped += 1
            continue
        fd = (up - down) / (2 * eps)
        an = grad.flat[i]
        worst = max(worst, abs(fd - an) / max(floor, abs(fd) + abs(an)))
        worst_abs = max(worst_abs, abs(fd - an))
    if details:
        return GradCheckResult(worst, len(coords) - skipped, skipped, floor, worst_abs)
    return worst
