import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scg.distrib import (
    RoundConfig, WorkerState, average_params, node_owner, partition_events, train_distributed,
)
from scg.features import fnv1a_64
from scg.graph import build_graph
from scg.tgn import AdamState, ModelDims, TrainConfig, fit, init_model

from helpers import ev, random_graph

SMALL = ModelDims(d_m=8, d_e=8, d_h=8, d_s=16, d_f=8, d_t=4)


def test_owner_is_fnv_of_kind_and_key(rng):
    g = random_graph(rng, n_edges=30)
    own = node_owner(g, 3)
    for n in range(g.n_nodes):
        assert own[n] == fnv1a_64(f"{g.node_kind[n].value}:{g.node_key[n]}") % 3


def test_partition_single_worker_is_identity(rng):
    g = random_graph(rng, n_edges=30)
    (only,) = partition_events(g, np.arange(g.n_edges), 1)
    assert only.tolist() == list(range(g.n_edges))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6))
def test_partition_properties(seed, workers):
    g = random_graph(np.random.default_rng(seed), n_edges=50)
    ids = np.arange(g.n_edges)
    parts = partition_events(g, ids, workers)
    assert sum(map(len, parts)) == g.n_edges
    assert sorted(np.concatenate(parts).tolist()) == ids.tolist()
    own = node_owner(g, workers)
    for w, part in enumerate(parts):
        assert np.all(np.diff(part) > 0)
        assert np.all(own[g.src[part]] == w)
    again = partition_events(g, ids, workers)
    assert all(np.array_equal(a, b) for a, b in zip(parts, again))


def test_single_worker_matches_sequential(rng):
    g = random_graph(rng, n_edges=150, d_f=SMALL.d_f)
    cfg = TrainConfig(batch_size=16, seed=5, epochs=2)
    ids = np.arange(g.n_edges)
    seq = fit(g, ids, init_model(SMALL, 1), cfg)
    p = init_model(SMALL, 1)
    dist = train_distributed(g, ids, p, cfg, RoundConfig(workers=1, batches_per_round=3))
    assert dist.losses == seq.losses
    np.testing.assert_array_equal(p.flat, seq.params.flat)
    assert dist.dropped == 0


def test_no_drops_without_cross_partition_edges():
    # pick files and a process that all hash to the same owner for W=2
    want = fnv1a_64("PROCESS:h:1") % 2
    files = [f"h:/f{i}" for i in range(100) if fnv1a_64(f"FILE:h:/f{i}") % 2 == want][:5]
    g = build_graph([ev(i, key=files[i % len(files)]) for i in range(40)], d_f=SMALL.d_f)
    res = train_distributed(g, np.arange(g.n_edges), init_model(SMALL, 0), TrainConfig(batch_size=8),
                            RoundConfig(workers=2, batches_per_round=2))
    assert res.dropped == 0


def test_cross_partition_writes_are_counted(rng):
    g = random_graph(rng, n_edges=120, d_f=SMALL.d_f)
    own = node_owner(g, 3)
    cross = int(np.sum(own[g.src] != own[g.dst]))
    res = train_distributed(g, np.arange(g.n_edges), init_model(SMALL, 0), TrainConfig(batch_size=8),
                            RoundConfig(workers=3, batches_per_round=2))
    assert res.dropped == cross


def test_deterministic_and_thread_independent(rng):
    g = random_graph(rng, n_edges=120, d_f=SMALL.d_f)
    ids = np.arange(g.n_edges)
    cfg = TrainConfig(batch_size=8, seed=2)
    runs = []
    for threads in (1, 1, 3):
        p = init_model(SMALL, 0)
        res = train_distributed(g, ids, p, cfg, RoundConfig(workers=3, batches_per_round=2, threads=threads))
        runs.append((res.history_csv(), p.flat.copy()))
    assert runs[0][0] == runs[1][0] == runs[2][0]
    np.testing.assert_array_equal(runs[0][1], runs[2][1])


def test_zero_rounds_leaves_params():
    g = build_graph([ev(i) for i in range(10)], d_f=SMALL.d_f)
    p = init_model(SMALL, 0)
    before = p.flat.copy()
    res = train_distributed(g, np.arange(10), p, TrainConfig(), RoundConfig(workers=2, rounds=0))
    np.testing.assert_array_equal(p.flat, before)
    assert res.history == [] and res.rounds == 0


def _worker(wid, flat):
    from scg.tgn import ModelParams
    p = ModelParams(SMALL, flat.copy())
    return WorkerState(wid, p, AdamState(flat.copy(), flat.copy() ** 2, wid), np.zeros(1, bool),
                       np.zeros(0, np.int64), np.random.default_rng(0))


def test_average_identical_is_noop(rng):
    x = rng.normal(size=SMALL.size)
    ws = [_worker(i, x) for i in range(3)]
    average_params(ws)
    for w in ws:
        np.testing.assert_array_equal(w.params.flat, x)


def test_average_symmetric_pair_is_zero(rng):
    x = rng.normal(size=SMALL.size)
    ws = [_worker(1, -x), _worker(0, x)]
    average_params(ws)
    for w in ws:
        assert not w.params.flat.any() and not w.adam.m.any()
        np.testing.assert_array_equal(w.adam.v, x ** 2)
        assert w.adam.t == 1


def test_history_csv_header(rng):
    g = random_graph(rng, n_edges=20, d_f=SMALL.d_f)
    res = train_distributed(g, np.arange(g.n_edges), init_model(SMALL, 0), TrainConfig(batch_size=8),
                            RoundConfig(workers=2))
    lines = res.history_csv().splitlines()
    assert lines[0] == "round,worker,batch,loss" and len(lines) == len(res.history) + 1
    assert res.summary() == {"rounds": res.rounds, "batches": len(res.history), "dropped_writes": res.dropped}


def test_round_config_validation():
    with pytest.raises(ValueError):
        RoundConfig(workers=0)
    with pytest.raises(ValueError):
        RoundConfig(batches_per_round=0)
