"""Command line entry point.

    further run     --config exp.yaml [--seed N] [--out DIR]
    further sweep   --config exp.yaml --gammas 0.9,0.99,0.999 [--out DIR]
    further analyze --mode {appendixA,deviation} --config analysis.yaml [--out DIR]
    further chain   --config chain.yaml [--out DIR]

Exit status: 0 success, 1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .. import analysis as an
from ..envs import ConfigError, make_game
from .config import load_config
from .metrics import converged_reward, gamma_sweep
from .runner import fmt, run_matchup

log = logging.getLogger("further")


def _out(args, cfg) -> Path:
    p = Path(args.out or cfg.out_dir or ".")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(v if isinstance(v, str) else fmt(v) for v in r) + "\n")
    log.info("wrote %s", path)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seeds = [args.seed] if args.seed is not None else cfg.seeds
    out = _out(args, cfg)

    def progress(seed, step):
        log.info("seed %d: step %d/%d", seed, step, cfg.steps)

    runlog = run_matchup(cfg, seeds, str(out), progress)
    for s, v in converged_reward(runlog).items() if len(runlog) else []:
        log.info("seed %d: converged r_i %.4f", s, v)
    return 0


def _gammas(text: str) -> List[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"invalid config field 'gammas': cannot parse {text!r}") from None
    if not vals or any(not 0.0 < g < 1.0 for g in vals):
        raise ConfigError("invalid config field 'gammas': every value must lie in (0, 1)")
    return vals


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    gammas = _gammas(args.gammas)
    if cfg.agent_i != "lili":
        raise ConfigError("invalid config field 'agent_i': the discount sweep needs a lili agent")
    out = _out(args, cfg)
    rows = gamma_sweep(cfg, gammas)
    _write(out / "gamma_sweep.csv", ("gamma", "seed", "converged_reward", "td_error"),
           [(r.gamma, s, r.rewards[s], r.td_errors[s]) for r in rows for s in sorted(r.rewards)])
    for r in rows:
        log.info("gamma %g: reward %.4f, td error %.4g", r.gamma, r.mean_reward, r.mean_td_error)
    return 0


def cmd_analyze(args) -> int:
    cfg = load_config(args.config, "analysis")
    if args.mode is not None:
        cfg.mode = args.mode
    g = make_game(cfg.game)
    out = _out(args, cfg)
    if cfg.mode == "appendixA":
        grid = an.q_init_grid(cfg.q_grid_lo, cfg.q_grid_hi, cfg.q_grid_n)
        rows = []
        for mode in cfg.opponent_modes:
            spec = an.OpponentSpec(alpha=cfg.q_alpha, gamma=cfg.q_gamma,
                                   epsilon=0.0 if mode == "greedy" else cfg.q_epsilon)
            res = an.policy_iteration_sweep(g, mode, grid, cfg.horizon, cfg.n_rollouts, cfg.seed, spec)
            log.info("%s: best average reward in [%.3f, %.3f], range %.3f", mode, res.best_rho.min(),
                     res.best_rho.max(), res.value_range)
            rows += [(mode, q[0], q[1], b, int(p)) for q, b, p in zip(res.q_inits, res.best_rho, res.best_policy)]
        _write(out / "appendixA.csv", ("mode", "q0_a0", "q0_a1", "best_rho", "best_policy"), rows)
    else:
        if cfg.policy_i is None or cfg.policy_j is None:
            raise ConfigError("invalid config field 'policy_i': deviation mode needs policy_i and policy_j")
        gains = an.deviation_gain(g, (np.array(cfg.policy_i), np.array(cfg.policy_j)), None,
                                  cfg.horizon, cfg.n_rollouts, cfg.seed)
        for who, v in gains.items():
            log.info("agent %d: deviation gain %.4f", who, v)
        _write(out / "deviation.csv", ("agent", "gain"), sorted(gains.items()))
    return 0


def cmd_chain(args) -> int:
    cfg = load_config(args.config, "chain")
    g = make_game(cfg.game)
    out = _out(args, cfg)
    upd = an.ChainUpdateSpec(tuple(cfg.levels), cfg.gamma, cfg.stateful)
    pol = np.array(cfg.policy_i)

    def factory(eps):
        return an.build_joint_chain(g, upd, pol, eps, cfg.max_nodes)

    probe = factory(cfg.epsilons[0])
    inits = default_inits(probe)
    eps_list = list(cfg.epsilons) + ([0.0] if cfg.control else [])
    rows = []
    for eps in eps_list:
        ch = factory(eps)
        rep = an.check_init_independence(ch, cfg.k, inits, max_iter=100_000 if eps == 0.0 else 1_000_000)
        row = rep.rows[0]
        rows.append((eps, ch.n_nodes, an.recurrent_class_count(ch.P), row.max_tv, "pass" if row.passed else "fail"))
        log.info("epsilon %g: %d nodes, %d recurrent classes, max TV %.3g -> %s", *rows[-1])
    _write(out / "chain.csv", ("epsilon", "nodes", "recurrent_classes", "max_tv", "result"), rows)
    return 0


def default_inits(chain: an.JointChain) -> List[np.ndarray]:
    """Point masses at the initial state under the two extreme q-configurations, plus uniform."""
    n, c = chain.n_nodes, chain.n_configs
    return [an.point_mass(n, 0), an.point_mass(n, c - 1), np.full(n, 1.0 / n)]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="further", description=__doc__.splitlines()[0] if __doc__ else None)
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a matchup for every configured seed")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")

    s = sub.add_parser("sweep", help="discount sweep for a lili agent")
    s.add_argument("--config", required=True)
    s.add_argument("--gammas", required=True, help="comma separated, e.g. 0.9,0.99,0.999")
    s.add_argument("--out")

    a = sub.add_parser("analyze", help="policy sweep over opponent initialisations, or a deviation check")
    a.add_argument("--mode", choices=("appendixA", "deviation"))
    a.add_argument("--config", required=True)
    a.add_argument("--out")

    c = sub.add_parser("chain", help="uniqueness check of the perturbed joint chain")
    c.add_argument("--config", required=True)
    c.add_argument("--out")

    for sp in (r, s, a, c):
        sp.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "analyze": cmd_analyze, "chain": cmd_chain}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stdout, force=True)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
