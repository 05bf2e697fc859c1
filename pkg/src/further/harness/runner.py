"""Seeded execution of a matchup and the per-step CSV log."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, TextIO

import numpy as np

from ..agents import SOFT_KINDS, ScriptedAgent, SoftAgent, TabularQLearner, World, further_loop_step
from ..envs import MatrixGame, make_game
from .config import ExperimentConfig

COLUMNS = ("step", "seed", "r_i", "r_j", "rho_i", "rho_j", "critic_loss", "policy_loss", "elbo_loss", "relacc")
EVAL_COLUMNS = ("step", "seed", "agent", "state", "p0", "p1")
_INT_COLUMNS = {"step", "seed", "agent", "state"}


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


@dataclass
class RunLog:
    """Append-only per-step records for one or more seeds, column-major."""

    columns: Dict[str, np.ndarray]

    @classmethod
    def empty(cls) -> "RunLog":
        return cls({c: np.zeros(0, dtype=np.int64 if c in _INT_COLUMNS else np.float64) for c in COLUMNS})

    def __len__(self) -> int:
        return len(self.columns["step"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def seeds(self) -> List[int]:
        return sorted(set(int(s) for s in self.columns["seed"]))

    def for_seed(self, seed: int) -> "RunLog":
        m = self.columns["seed"] == seed
        return RunLog({c: v[m] for c, v in self.columns.items()})

    @staticmethod
    def concat(logs: Iterable["RunLog"]) -> "RunLog":
        logs = list(logs)
        if not logs:
            return RunLog.empty()
        return RunLog({c: np.concatenate([lg.columns[c] for lg in logs]) for c in COLUMNS})

    def rows(self):
        cols = [self.columns[c] for c in COLUMNS]
        return zip(*cols)

    def write_csv(self, f: TextIO, header: bool = True) -> None:
        if header:
            f.write(",".join(COLUMNS) + "\n")
        for row in self.rows():
            f.write(",".join(fmt(v) for v in row) + "\n")

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def read_csv(cls, f) -> "RunLog":
        return cls(_read_columns(f, COLUMNS))


def _read_columns(f, expected) -> Dict[str, np.ndarray]:
    if isinstance(f, (str, Path)):
        with open(f, newline="") as fh:
            return _read_columns(fh, expected)
    reader = csv.reader(f)
    header = next(reader, None)
    if header is None or tuple(header) != tuple(expected):
        raise ValueError(f"unexpected CSV header {header!r}")
    data = [row for row in reader if row]
    out = {}
    for k, c in enumerate(expected):
        vals = [r[k] for r in data]
        if c in _INT_COLUMNS:
            out[c] = np.array([int(v) for v in vals], dtype=np.int64)
        else:
            out[c] = np.array([float(v) for v in vals], dtype=np.float64)
    return out


def read_eval_csv(f) -> Dict[str, np.ndarray]:
    return _read_columns(f, EVAL_COLUMNS)


def make_agent(kind: str, g: MatrixGame, player: int, cfg: ExperimentConfig, rng: np.random.Generator):
    if kind in SOFT_KINDS:
        return SoftAgent(kind, g, player, cfg.hyper(), rng)
    if kind == "qlearner":
        return TabularQLearner(g, player, rng, alpha=cfg.q_alpha, gamma=cfg.q_gamma, epsilon=cfg.q_epsilon,
                               q=None if cfg.q_init is None else np.array(cfg.q_init, dtype=np.float64))
    if kind == "scripted":
        spec = cfg.scripted
        if spec == "alternating":
            return ScriptedAgent.alternating(g, player, rng)
        if isinstance(spec, str):
            return ScriptedAgent.constant(g, player, int(spec.split(":")[1]), rng)
        return ScriptedAgent(g, player, spec, rng)
    raise ValueError(f"unknown agent kind {kind!r}")


def make_agents(cfg: ExperimentConfig, seed: int):
    """Both agents of a matchup; each owns a child stream of the run seed."""
    g = make_game(cfg.game)
    streams = np.random.SeedSequence(seed).spawn(2)
    agents = [make_agent(k, g, p, cfg, np.random.default_rng(s))
              for p, (k, s) in enumerate(zip((cfg.agent_i, cfg.agent_j), streams))]
    return g, agents


def eval_probs(agent, n_states: int) -> np.ndarray:
    """Per-state action probabilities with frozen parameters and the mean belief."""
    if isinstance(agent, SoftAgent):
        z = agent.latent("eval")
        return np.stack([agent.policy_probs(s, z) for s in range(n_states)])
    return np.stack([np.asarray(agent.action_probs(s), dtype=np.float64) for s in range(n_states)])


@dataclass
class SeedResult:
    log: RunLog
    evals: List[tuple] = field(default_factory=list)
    agents: list = field(default_factory=list)


def run_seed(cfg: ExperimentConfig, seed: int, progress: Optional[Callable[[int, int], None]] = None) -> SeedResult:
    """Run one seed of the matchup for ``cfg.steps`` environment steps."""
    g, agents = make_agents(cfg, seed)
    world = World(g)
    n = cfg.steps
    cols = {c: np.zeros(n, dtype=np.int64 if c in _INT_COLUMNS else np.float64) for c in COLUMNS}
    cols["seed"][:] = seed
    evals = []
    relacc = 0.0
    for t in range(n):
        m = further_loop_step(world, agents, t)
        relacc += m["r_i"] - m["r_j"]
        for c in COLUMNS[2:-1]:
            cols[c][t] = m[c]
        cols["step"][t] = t
        cols["relacc"][t] = relacc
        if (t + 1) % cfg.eval_interval == 0:
            for who, ag in enumerate(agents):
                for s, p in enumerate(eval_probs(ag, g.n_states)):
                    evals.append((t + 1, seed, who, s, p[0], p[1]))
            if progress is not None:
                progress(seed, t + 1)
    log = RunLog(cols)
    if not all(np.all(np.isfinite(log[c])) for c in COLUMNS):
        raise FloatingPointError(f"non-finite metrics in seed {seed}")
    return SeedResult(log, evals, agents)


def write_eval_csv(f: TextIO, evals) -> None:
    f.write(",".join(EVAL_COLUMNS) + "\n")
    for row in evals:
        f.write(",".join(fmt(v) for v in row) + "\n")


def run_matchup(cfg: ExperimentConfig, seeds: Optional[List[int]] = None, out_dir: Optional[str] = None,
                progress: Optional[Callable[[int, int], None]] = None) -> RunLog:
    """Run every seed; with an output directory, each seed's log is written as soon as it finishes."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    out = Path(out_dir) if out_dir is not None else (Path(cfg.out_dir) if cfg.out_dir else None)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    logs = []
    for seed in seeds:
        res = run_seed(cfg, seed, progress)
        logs.append(res.log)
        if out is not None:
            with open(out / f"{cfg.label}_seed{seed}.csv", "w", newline="") as f:
                res.log.write_csv(f)
            with open(out / f"{cfg.label}_seed{seed}_eval.csv", "w", newline="") as f:
                write_eval_csv(f, res.evals)
    return RunLog.concat(logs)
