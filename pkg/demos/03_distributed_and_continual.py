"""
Simulated multi-worker training and learning a new attack family
================================================================

Two ways to keep training manageable as the event stream grows.

* Split the stream by the owner of each event's source node, train copies
  of the model in parallel and average them every few batches.
* Train on a new period of activity without forgetting the old one, by
  anchoring the weights that mattered before (elastic weight consolidation).

A reduced scenario (two hosts, half a day) keeps this to about a minute::

    python3 demos/03_distributed_and_continual.py
"""
import numpy as np

from scg import pipeline as pl
from scg.config import from_dict
from scg.continual import train_continual
from scg.distrib import RoundConfig, node_owner, train_distributed
from scg.tgn import eval_loss, init_model

cfg = from_dict({"seed": 5, "simgen": {"n_hosts": 2, "duration": 43200.0},
                 "train": {"epochs": 5, "lr": 0.01}})
events = pl.ingest([("jsonl", pl.simulate(cfg))], cfg, keep_labels=True).events
_, red = pl.build_and_reduce(events, cfg)
split = pl.training_split(events, red, cfg)
g = red.graph
ids = np.arange(g.n_edges)
warm, held = ids[g.t_first < split.cut], ids[g.t_first >= split.cut]
tc = cfg.train.train_config(cfg.seed)

# %%
# Workers
# -------
# Each worker owns the nodes whose hashed key lands on it. Memory writes to
# somebody else's node are dropped and counted, so W=1 is plain training.
for w in (1, 2, 4):
    own = node_owner(g, w)
    params = init_model(cfg.model, cfg.seed)
    res = train_distributed(g, split.train_ids, params, tc, RoundConfig(workers=w))
    loss = eval_loss(g, params, warm, held, tc, cfg.seed)
    share = np.bincount(own[g.src[split.train_ids]], minlength=w) / len(split.train_ids)
    print(f"W={w}: eval loss {loss:.4f}, {res.rounds} rounds, {res.dropped} dropped writes, "
          f"event share {np.round(share, 2).tolist()}")

# %%
# Continual learning
# ------------------
# Halfway through the day the package ecosystem changes (pip -> npm) and so
# does the attack family. Phase A is the first half, phase B the second.
# With lambda=0 nothing protects what was learned on phase A.
cfg_b = from_dict({**cfg.to_dict(), "simgen": {**cfg.to_dict()["simgen"], "phase_b": True},
                   "train": {**cfg.to_dict()["train"], "epochs": 1, "lr": 0.001}})
events_b = pl.ingest([("jsonl", pl.simulate(cfg_b))], cfg_b, keep_labels=True).events
_, red_b = pl.build_and_reduce(events_b, cfg_b)
gb = red_b.graph
all_ids = np.arange(gb.n_edges)
half = cfg_b.simgen.duration / 2
phases = [all_ids[gb.t_first < half], all_ids[gb.t_first >= half]]
for lam in (0.0, 100.0):
    res = train_continual(gb, init_model(cfg_b.model, cfg_b.seed), phases, lam,
                          cfg_b.train.train_config(cfg_b.seed))
    before, after = res.eval_losses[0][0], res.eval_losses[1][0]
    print(f"lambda={lam:>5}: phase-A eval loss {before:.4f} after A, {after:.4f} after B")
