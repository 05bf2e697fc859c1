"""Flat YAML experiment configuration with validation.

Every file carries ``schema_version: 1``. Keys not listed in the matching
dataclass are rejected. Hyperparameters left out of an experiment file take
the per-game defaults in ``GAME_HYPER``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from ..agents import AGENT_KINDS, Hyper
from ..envs import GAMES, ConfigError

SCHEMA_VERSION = 1

# critic lr, gain lr, actor lr, inference lr, entropy, latent dim, gamma, batch size
_TABLE = {
    "ibs": (0.002, 0.02, 0.0005, 0.002, 0.4, 5, 0.99, 256),
    "ic": (0.0005, 0.02, 0.0001, 0.0005, 0.3, 5, 0.99, 64),
    "imp": (0.01, 0.05, 0.001, 0.01, 0.35, 5, 0.99, 64),
}
_TABLE["ipd"] = _TABLE["ibs"]  # no published table; reuse the IBS values
_HYPER_KEYS = ("critic_lr", "gain_lr", "actor_lr", "inference_lr", "entropy", "latent_dim", "gamma", "batch_size")
GAME_HYPER = {g: dict(zip(_HYPER_KEYS, v)) for g, v in _TABLE.items()}


@dataclass
class ExperimentConfig:
    game: str = "ibs"
    agent_i: str = "further"
    agent_j: str = "qlearner"
    steps: int = 20_000
    seeds: List[int] = field(default_factory=lambda: list(range(20)))
    eval_interval: int = 1000
    out_dir: Optional[str] = None
    # soft agents
    critic_lr: Optional[float] = None
    gain_lr: Optional[float] = None
    actor_lr: Optional[float] = None
    inference_lr: Optional[float] = None
    entropy: Optional[float] = None
    latent_dim: Optional[int] = None
    gamma: Optional[float] = None
    batch_size: Optional[int] = None
    tau_q: float = 0.01
    buffer_capacity: int = 10_000
    warmup: int = 500
    hidden: List[int] = field(default_factory=lambda: [64, 64])
    kl_weight: float = 0.01
    # tabular q-learner
    q_alpha: float = 0.5
    q_gamma: float = 0.9
    q_epsilon: float = 0.05
    q_init: Optional[List[float]] = None
    # scripted: "alternating", "constant:<action>" or a per-state probability table
    scripted: Union[str, List[List[float]]] = "constant:0"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.game in GAME_HYPER:
            for k, v in GAME_HYPER[self.game].items():
                if getattr(self, k) is None:
                    setattr(self, k, v)
        validate(self)

    def hyper(self) -> Hyper:
        return Hyper(critic_lr=self.critic_lr, gain_lr=self.gain_lr, actor_lr=self.actor_lr,
                     inference_lr=self.inference_lr, entropy=self.entropy, latent_dim=self.latent_dim,
                     gamma=self.gamma, batch_size=self.batch_size, tau_q=self.tau_q,
                     buffer_capacity=self.buffer_capacity, warmup=self.warmup, hidden=tuple(self.hidden),
                     kl_weight=self.kl_weight)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    @property
    def label(self) -> str:
        return f"{self.game}_{self.agent_i}_vs_{self.agent_j}"


@dataclass
class AnalysisConfig:
    mode: str = "appendixA"
    game: str = "ipd"
    opponent_modes: List[str] = field(default_factory=lambda: ["greedy", "glie"])
    q_grid_lo: float = -30.0
    q_grid_hi: float = 30.0
    q_grid_n: int = 9
    horizon: int = 10_000
    n_rollouts: int = 4
    seed: int = 0
    q_alpha: float = 0.5
    q_gamma: float = 0.9
    q_epsilon: float = 0.05
    policy_i: Optional[List[int]] = None
    policy_j: Optional[List[int]] = None
    out_dir: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        validate_analysis(self)


@dataclass
class ChainConfig:
    game: str = "ipd"
    levels: List[float] = field(default_factory=lambda: [-10.0, -5.0, 0.0])
    gamma: float = 0.9
    stateful: bool = False
    policy_i: List[int] = field(default_factory=lambda: [0, 0, 0, 0, 0])
    epsilons: List[float] = field(default_factory=lambda: [0.1, 0.03, 0.01])
    control: bool = True
    k: int = 1
    max_nodes: int = 100_000
    out_dir: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        validate_chain(self)


def _fail(name: str, msg: str):
    raise ConfigError(f"invalid config field '{name}': {msg}")


def _positive(cfg, names):
    for n in names:
        v = getattr(cfg, n)
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            _fail(n, f"must be > 0, got {v!r}")


def _int_at_least(cfg, name, lo):
    v = getattr(cfg, name)
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        _fail(name, f"must be an integer >= {lo}, got {v!r}")


def _in_range(cfg, name, lo, hi, lo_open=False, hi_open=False):
    v = getattr(cfg, name)
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if ok:
        ok = (v > lo if lo_open else v >= lo) and (v < hi if hi_open else v <= hi)
    if not ok:
        lb, rb = "(" if lo_open else "[", ")" if hi_open else "]"
        _fail(name, f"must lie in {lb}{lo}, {hi}{rb}, got {v!r}")


def _schema(cfg):
    if cfg.schema_version != SCHEMA_VERSION:
        _fail("schema_version", f"unsupported version {cfg.schema_version!r} (expected {SCHEMA_VERSION})")


def _game(cfg):
    if cfg.game not in GAMES:
        _fail("game", f"unknown game {cfg.game!r}; valid choices: {', '.join(sorted(GAMES))}")


def validate(cfg: ExperimentConfig) -> None:
    _schema(cfg)
    _game(cfg)
    for n in ("agent_i", "agent_j"):
        if getattr(cfg, n) not in AGENT_KINDS:
            _fail(n, f"unknown agent kind {getattr(cfg, n)!r}; valid choices: {', '.join(AGENT_KINDS)}")
    _int_at_least(cfg, "steps", 0)
    if not isinstance(cfg.seeds, (list, tuple)) or not cfg.seeds:
        _fail("seeds", "must be a non-empty list of integers")
    if any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in cfg.seeds):
        _fail("seeds", f"must hold non-negative integers, got {cfg.seeds!r}")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        _fail("seeds", "must not repeat")
    _int_at_least(cfg, "eval_interval", 1)
    _positive(cfg, ("critic_lr", "gain_lr", "actor_lr", "inference_lr"))
    _in_range(cfg, "entropy", 0.0, float("inf"))
    _int_at_least(cfg, "latent_dim", 1)
    _in_range(cfg, "gamma", 0.0, 1.0, lo_open=True, hi_open=True)
    _int_at_least(cfg, "batch_size", 1)
    _in_range(cfg, "tau_q", 0.0, 1.0, lo_open=True)
    _int_at_least(cfg, "buffer_capacity", 1)
    if cfg.buffer_capacity < cfg.batch_size:
        _fail("buffer_capacity", f"must be >= batch_size ({cfg.batch_size})")
    _int_at_least(cfg, "warmup", 0)
    if not cfg.hidden or any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in cfg.hidden):
        _fail("hidden", f"must be a non-empty list of positive integers, got {cfg.hidden!r}")
    _in_range(cfg, "kl_weight", 0.0, float("inf"))
    _in_range(cfg, "q_alpha", 0.0, 1.0, lo_open=True)
    _in_range(cfg, "q_gamma", 0.0, 1.0, hi_open=True)
    _in_range(cfg, "q_epsilon", 0.0, 1.0)
    if cfg.q_init is not None and (not isinstance(cfg.q_init, (list, tuple)) or len(cfg.q_init) != 2):
        _fail("q_init", "must be a list with one value per action")
    if isinstance(cfg.scripted, str):
        ok = cfg.scripted == "alternating" or (cfg.scripted.startswith("constant:")
                                               and cfg.scripted[9:] in ("0", "1"))
        if not ok:
            _fail("scripted", "must be 'alternating', 'constant:<action>' or a probability table")


def validate_analysis(cfg: AnalysisConfig) -> None:
    _schema(cfg)
    _game(cfg)
    if cfg.mode not in ("appendixA", "deviation"):
        _fail("mode", f"must be 'appendixA' or 'deviation', got {cfg.mode!r}")
    if not cfg.opponent_modes or any(m not in ("greedy", "glie") for m in cfg.opponent_modes):
        _fail("opponent_modes", "must list 'greedy' and/or 'glie'")
    if not cfg.q_grid_lo < cfg.q_grid_hi:
        _fail("q_grid_hi", "must exceed q_grid_lo")
    _int_at_least(cfg, "q_grid_n", 1)
    _int_at_least(cfg, "horizon", 10_000)
    _int_at_least(cfg, "n_rollouts", 1)
    _int_at_least(cfg, "seed", 0)
    _in_range(cfg, "q_alpha", 0.0, 1.0, lo_open=True)
    _in_range(cfg, "q_gamma", 0.0, 1.0, hi_open=True)
    _in_range(cfg, "q_epsilon", 0.0, 1.0)
    for n in ("policy_i", "policy_j"):
        p = getattr(cfg, n)
        if p is not None and (len(p) != 5 or any(a not in (0, 1) for a in p)):
            _fail(n, "must map each of the 5 states to action 0 or 1")
    if cfg.mode == "deviation" and (cfg.policy_i is None or cfg.policy_j is None):
        _fail("policy_i", "deviation mode needs policy_i and policy_j")


def validate_chain(cfg: ChainConfig) -> None:
    _schema(cfg)
    _game(cfg)
    if not cfg.levels or any(b <= a for a, b in zip(cfg.levels, cfg.levels[1:])):
        _fail("levels", "must be a non-empty increasing list")
    _in_range(cfg, "gamma", 0.0, 1.0, hi_open=True)
    if len(cfg.policy_i) != 5 or any(a not in (0, 1) for a in cfg.policy_i):
        _fail("policy_i", "must map each of the 5 states to action 0 or 1")
    if not cfg.epsilons or any(not 0.0 < e < 1.0 for e in cfg.epsilons):
        _fail("epsilons", "must be a non-empty list of values in (0, 1)")
    _int_at_least(cfg, "k", 1)
    _int_at_least(cfg, "max_nodes", 1)


_KINDS = {"experiment": ExperimentConfig, "analysis": AnalysisConfig, "chain": ChainConfig}


def from_dict(data: Dict[str, Any], kind: str = "experiment"):
    cls = _KINDS[kind]
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping of keys to values")
    known = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in known:
            _fail(k, "unknown key")
    if "schema_version" not in data:
        _fail("schema_version", "missing")
    return cls(**data)


def load_config(path: Union[str, Path], kind: str = "experiment"):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return from_dict(data, kind)


def to_dict(cfg) -> Dict[str, Any]:
    return dataclasses.asdict(cfg)


def dump_config(cfg, path: Union[str, Path]) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))
