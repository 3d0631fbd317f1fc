"""Pipeline configuration: one JSON object with a section per module.

Every field is optional. Unknown sections or keys are rejected, and values are
checked by constructing the module's own config object, so a typo fails at
load time instead of deep inside a run.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .detect import ReconConfig, ScoreStream
from .distrib import RoundConfig
from .reduce import ReduceConfig
from .simgen import BadConfig, ScenarioConfig
from .tgn import ModelDims, TrainConfig

ENV_VAR = "SCG_CONFIG"


class ConfigError(ValueError):
    def __init__(self, path, key, message: str = "unknown key"):
        self.path, self.key = str(path), key
        super().__init__(f"{self.path}: {key}: {message}" if key else f"{self.path}: {message}")


@dataclass
class IngestSection:
    strict: bool = False
    keep_labels: bool = False


@dataclass
class TrainSection:
    batch_size: int = 64
    negatives: int = 1
    k: int = 10
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1
    negative_pool: str = "all"
    train_fraction: float = 0.7
    benign_only: bool = True

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.batch_size, self.negatives, self.k, self.lr, self.beta1, self.beta2,
                           self.eps, seed, self.epochs, self.negative_pool)


@dataclass
class DistribSection:
    enabled: bool = False
    workers: int = 4
    batches_per_round: int = 10
    rounds: int | None = None
    threads: int = 1

    def round_config(self) -> RoundConfig:
        return RoundConfig(self.workers, self.batches_per_round, self.rounds, self.threads)


@dataclass
class DetectSection:
    alpha: float = 0.01
    kappa: float = 3.0
    n_min: int = 100
    calibrate: bool = True
    target_rate: float = 0.05
    depth: int = 5
    back_window: float = 3600.0
    fwd_window: float = 3600.0
    top_k: int = 10
    max_branch: int = 8
    max_chains: int = 256
    per_seed: int = 3
    maximal: bool = False
    distinct: bool = True

    def stream(self, kappa=None, alpha=None) -> ScoreStream:
        return ScoreStream(alpha=self.alpha if alpha is None else alpha,
                           kappa=self.kappa if kappa is None else kappa, n_min=self.n_min)

    def recon_config(self) -> ReconConfig:
        return ReconConfig(self.depth, self.back_window, self.fwd_window, self.top_k,
                           self.max_branch, self.max_chains, self.per_seed, self.maximal,
                           self.distinct)


@dataclass
class ContinualSection:
    lam: float = 100.0
    holdout: float = 0.2
    fisher_batches: int | None = None


@dataclass
class SimgenSection:
    n_hosts: int = 5
    duration: float = 86400.0
    rates: dict = field(default_factory=dict)
    n_attack_chains: int = 3
    phase_b: bool = False

    def scenario(self, seed: int, **overrides) -> ScenarioConfig:
        kw = dict(n_hosts=self.n_hosts, duration=self.duration, rates=dict(self.rates),
                  n_attack_chains=self.n_attack_chains, phase_b=self.phase_b)
        kw.update(overrides)
        return ScenarioConfig(seed=seed, **kw)


SECTIONS = {
    "ingest": IngestSection,
    "reduce": ReduceConfig,
    "model": ModelDims,
    "train": TrainSection,
    "distrib": DistribSection,
    "detect": DetectSection,
    "continual": ContinualSection,
    "simgen": SimgenSection,
}


@dataclass
class PipelineConfig:
    seed: int = 0
    ingest: IngestSection = field(default_factory=IngestSection)
    reduce: ReduceConfig = field(default_factory=ReduceConfig)
    model: ModelDims = field(default_factory=ModelDims)
    train: TrainSection = field(default_factory=TrainSection)
    distrib: DistribSection = field(default_factory=DistribSection)
    detect: DetectSection = field(default_factory=DetectSection)
    continual: ContinualSection = field(default_factory=ContinualSection)
    simgen: SimgenSection = field(default_factory=SimgenSection)

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: _plain(getattr(sec, f.name)) for f in fields(sec)}
        return out

    def validate(self, path="<config>") -> None:
        """Run each module's own checks on the values it would receive."""
        checks = {
            "train": lambda: self.train.train_config(self.seed),
            "distrib": self.distrib.round_config,
            "detect": lambda: (self.detect.stream(), self.detect.recon_config()),
            "simgen": lambda: self.simgen.scenario(self.seed),
        }
        for name, check in checks.items():
            try:
                check()
            except (ValueError, TypeError, BadConfig) as exc:
                raise ConfigError(path, name, str(exc)) from exc
        if not 0 < self.train.train_fraction < 1:
            raise ConfigError(path, "train.train_fraction", "must be in (0, 1)")
        if not 0 < self.detect.target_rate < 1:
            raise ConfigError(path, "detect.target_rate", "must be in (0, 1)")
        if not 0 <= self.continual.holdout < 1 or self.continual.lam < 0:
            raise ConfigError(path, "continual", "need 0 <= holdout < 1 and lam >= 0")


def _plain(value):
    return dict(sorted(value.items())) if isinstance(value, dict) else value


def _check_type(path, key, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int) and not isinstance(default, bool):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:  # Optional[int] fields default to None
        ok = value is None or (isinstance(value, int) and not isinstance(value, bool))
    if not ok:
        raise ConfigError(path, key, f"bad type {type(value).__name__}")
    return float(value) if isinstance(default, float) else value


def from_dict(data: dict, path="<config>") -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError(path, None, "top level must be a JSON object")
    cfg = PipelineConfig()
    for name, body in data.items():
        if name == "seed":
            cfg.seed = _check_type(path, "seed", body, 0)
            continue
        if name not in SECTIONS:
            raise ConfigError(path, name)
        if not isinstance(body, dict):
            raise ConfigError(path, name, "section must be an object")
        cls = SECTIONS[name]
        defaults = {f.name: getattr(cls(), f.name) for f in fields(cls)}
        kw = {}
        for key, value in body.items():
            if key not in defaults:
                raise ConfigError(path, f"{name}.{key}")
            kw[key] = _check_type(path, f"{name}.{key}", value, defaults[key])
        try:
            setattr(cfg, name, cls(**{**defaults, **kw}))
        except (ValueError, TypeError, BadConfig) as exc:
            raise ConfigError(path, name, str(exc)) from exc
    cfg.validate(path)
    return cfg


def load_config(path=None) -> PipelineConfig:
    """Read ``path``, else ``$SCG_CONFIG``, else return the defaults."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return PipelineConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(path, None, f"cannot read config ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(path, None, f"invalid JSON at line {exc.lineno}") from exc
    return from_dict(data, path)


def apply_overrides(cfg: PipelineConfig, pairs, path="--set") -> PipelineConfig:
    """Apply ``section.key=value`` strings; values are parsed as JSON, else kept as text."""
    data = cfg.to_dict()
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(path, pair, "expected section.key=value")
        dotted, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if dotted == "seed":
            data["seed"] = value
            continue
        section, _, key = dotted.partition(".")
        if section not in data or not key:
            raise ConfigError(path, dotted)
        if key not in data[section]:
            raise ConfigError(path, dotted)
        data[section][key] = value
    return from_dict(data, path)
