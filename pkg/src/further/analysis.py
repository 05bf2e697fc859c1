"""Brute-force analysis of learning dynamics in iterated matrix games.

* Monte-Carlo average reward of a fixed stationary policy against a learning
  (or scripted) opponent, and a sweep over all deterministic stationary
  policies for a grid of opponent q-table initialisations.
* Explicit joint chains over (game state, discretised opponent q-table) with
  an epsilon-perturbed update, their stationary periodic distributions, and a
  check that the limit does not depend on the initial distribution.
* A restricted deviation check over stationary policies.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .envs import ConfigError, MatrixGame

MAX_CHAIN_NODES = 100_000


class NonConvergenceError(RuntimeError):
    def __init__(self, msg: str, spectral_gap: float):
        super().__init__(f"{msg} (spectral gap estimate {spectral_gap:.3g})")
        self.spectral_gap = spectral_gap


# -- stationary policies and Monte-Carlo average reward ------------------------

def stationary_policies(g: MatrixGame, player: int = 0) -> np.ndarray:
    """All deterministic stationary policies as an (n_policies, n_states) action table."""
    n = g.n_actions[player]
    return np.array(list(itertools.product(range(n), repeat=g.n_states)), dtype=np.int64)


@dataclass
class OpponentSpec:
    """The column player: an epsilon-greedy q-learner or a scripted stationary policy.

    ``q_init`` may be one value per action (shared by every state) or a full
    (n_states, n_actions) table. ``table`` is the scripted policy's
    per-state action distribution (or a single per-action distribution).
    """

    kind: str = "qlearner"
    q_init: Optional[np.ndarray] = None
    alpha: float = 0.5
    gamma: float = 0.9
    epsilon: float = 0.05
    table: Optional[np.ndarray] = None

    @classmethod
    def scripted(cls, table) -> "OpponentSpec":
        return cls(kind="scripted", table=np.asarray(table, dtype=np.float64), epsilon=0.0)

    @classmethod
    def constant(cls, g: MatrixGame, action: int) -> "OpponentSpec":
        t = np.zeros(g.n_actions[1])
        t[action] = 1.0
        return cls.scripted(t)

    def q_table(self, g: MatrixGame) -> np.ndarray:
        q = np.zeros(g.n_actions[1]) if self.q_init is None else np.asarray(self.q_init, dtype=np.float64)
        return np.tile(q, (g.n_states, 1)) if q.ndim == 1 else q.copy()

    def policy_table(self, g: MatrixGame) -> np.ndarray:
        t = np.asarray(self.table, dtype=np.float64)
        return np.tile(t, (g.n_states, 1)) if t.ndim == 1 else t

    @property
    def deterministic(self) -> bool:
        if self.kind == "qlearner":
            return self.epsilon == 0.0
        return bool(np.all(np.max(np.atleast_2d(self.table), axis=-1) == 1.0))


def _as_prob_table(g: MatrixGame, policy, player: int = 0) -> np.ndarray:
    """Deterministic action map (n_states,) or probability table (n_states, n_actions) -> probabilities."""
    p = np.asarray(policy)
    n = g.n_actions[player]
    if p.ndim == 1:
        out = np.zeros((g.n_states, n))
        out[np.arange(g.n_states), p.astype(np.int64)] = 1.0
        return out
    if p.shape != (g.n_states, n):
        raise ValueError(f"policy table must have shape {(g.n_states, n)}")
    return p.astype(np.float64)


def _sample(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum((u[:, None] >= cum).sum(axis=1), cum.shape[1] - 1)


def simulate_avg_reward(g: MatrixGame, pi_i: np.ndarray, opponent: OpponentSpec, q0: Optional[np.ndarray],
                        horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Run R independent rollouts in lockstep and return agent i's mean reward over the second half.

    ``pi_i`` is (R, n_states, n_i) probabilities; ``q0`` is (R, n_states, n_j)
    for a q-learner opponent (ignored for scripted opponents).
    """
    R = pi_i.shape[0]
    rows = np.arange(R)
    n_j = g.n_actions[1]
    Ri, Rj = g.payoff_matrix(0), g.payoff_matrix(1)
    det_i = bool(np.all(pi_i.max(axis=2) == 1.0))
    act_i = pi_i.argmax(axis=2)
    cum_i = np.cumsum(pi_i, axis=2)
    learner = opponent.kind == "qlearner"
    if learner:
        q = q0.copy()
        eps, lr, gam = opponent.epsilon, opponent.alpha, opponent.gamma
    else:
        pj = np.broadcast_to(opponent.policy_table(g), (R, g.n_states, n_j))
        det_j = bool(np.all(pj.max(axis=2) == 1.0))
        act_j = pj.argmax(axis=2)
        cum_j = np.cumsum(pj, axis=2)
    burn = horizon // 2
    acc = np.zeros(R)
    s = np.zeros(R, dtype=np.int64)
    for t in range(horizon):
        ai = act_i[rows, s] if det_i else _sample(cum_i[rows, s], rng.random(R))
        if learner:
            aj = q[rows, s].argmax(axis=1)
            if eps > 0.0:
                explore = rng.random(R) < eps
                aj = np.where(explore, rng.integers(n_j, size=R), aj)
        else:
            aj = act_j[rows, s] if det_j else _sample(cum_j[rows, s], rng.random(R))
        s2 = 1 + ai * n_j + aj
        if learner:
            td = Rj[ai, aj] + gam * q[rows, s2].max(axis=1) - q[rows, s, aj]
            q[rows, s, aj] += lr * td
        if t >= burn:
            acc += Ri[ai, aj]
        s = s2
    return acc / (horizon - burn)


def exact_avg_reward(g: MatrixGame, policy_i, opponent: OpponentSpec, horizon: int = 10_000,
                     n_rollouts: int = 16, seed: int = 0) -> float:
    """Average reward of a fixed stationary policy for agent i, burn-in of horizon/2 discarded.

    Deterministic policy against a deterministic opponent needs one rollout;
    otherwise ``n_rollouts`` independent rollouts are averaged.
    """
    return float(_policy_values(g, _as_prob_table(g, policy_i)[None], opponent, horizon, n_rollouts, seed)[0])


def _policy_values(g: MatrixGame, tables: np.ndarray, opponent: OpponentSpec, horizon: int,
                   n_rollouts: int, seed: int) -> np.ndarray:
    """exact_avg_reward for a stack of (n_states, n_i) policy tables, simulated side by side."""
    if horizon < 10_000:
        raise ValueError("horizon must be at least 10^4 steps")
    det = bool(np.all(tables.max(axis=2) == 1.0)) and opponent.deterministic
    R = 1 if det else n_rollouts
    pi = np.repeat(tables, R, axis=0)
    q0 = np.broadcast_to(opponent.q_table(g), (len(pi), g.n_states, g.n_actions[1])).copy() \
        if opponent.kind == "qlearner" else None
    vals = simulate_avg_reward(g, pi, opponent, q0, horizon, np.random.default_rng(seed))
    return vals.reshape(len(tables), R).mean(axis=1)


def q_init_grid(lo: float = -30.0, hi: float = 30.0, n: int = 9) -> List[np.ndarray]:
    """n x n grid of shared initial q-values (q0(a=0), q0(a=1)) for the opponent.

    The default span is the payoff scale times 1 / (1 - gamma) of the
    opponent, so the inits bracket the q-values it actually converges to.
    """
    vals = np.linspace(lo, hi, n)
    return [np.array([c, d]) for c in vals for d in vals]


@dataclass
class SweepResult:
    q_inits: List[np.ndarray]
    best_rho: np.ndarray
    best_policy: np.ndarray
    rho: np.ndarray  # (n_inits, n_policies)

    @property
    def value_range(self) -> float:
        return float(self.best_rho.max() - self.best_rho.min())


def policy_iteration_sweep(g: MatrixGame, opponent_mode: str, q_init_grid: Sequence, horizon: int = 10_000,
                           n_rollouts: int = 4, seed: int = 0, opponent: Optional[OpponentSpec] = None,
                           chunk: int = 20_000) -> SweepResult:
    """For every opponent q-init, the best average reward over all deterministic stationary policies.

    ``greedy`` uses an epsilon = 0 q-learner (deterministic, one rollout each);
    ``glie`` keeps epsilon = 0.05 exploration. A scripted ``opponent`` ignores
    the grid entries except as labels.
    """
    if opponent_mode not in ("greedy", "glie"):
        raise ValueError(f"unknown opponent mode {opponent_mode!r}")
    inits = [np.asarray(q, dtype=np.float64) for q in q_init_grid]
    if not inits:
        raise ValueError("empty q-init grid")
    pols = stationary_policies(g)
    if opponent is None:
        opponent = OpponentSpec(epsilon=0.0 if opponent_mode == "greedy" else 0.05)
    stochastic = not opponent.deterministic
    R_each = n_rollouts if stochastic else 1
    n_p, n_q = len(pols), len(inits)
    pi_tables = np.stack([_as_prob_table(g, p) for p in pols])
    q_tables = np.stack([OpponentSpec(q_init=q).q_table(g) for q in inits])
    # rollout r -> (init, policy, replica)
    idx_q, idx_p, _ = np.meshgrid(np.arange(n_q), np.arange(n_p), np.arange(R_each), indexing="ij")
    idx_q, idx_p = idx_q.ravel(), idx_p.ravel()
    rng = np.random.default_rng(seed)
    vals = np.empty(idx_q.size)
    for lo in range(0, idx_q.size, chunk):
        sl = slice(lo, lo + chunk)
        vals[sl] = simulate_avg_reward(g, pi_tables[idx_p[sl]], opponent, q_tables[idx_q[sl]], horizon, rng)
    rho = vals.reshape(n_q, n_p, R_each).mean(axis=2)
    return SweepResult(inits, rho.max(axis=1), rho.argmax(axis=1), rho)


# -- joint chains -------------------------------------------------------------------

@dataclass
class ChainUpdateSpec:
    """Discretised q-learning for the column player.

    q-values live on ``levels``; one entry moves at most one level per step,
    toward the TD target ``r + gamma * max q(next)`` when the target crosses
    the midpoint to the neighbouring level. ``stateful`` gives one q-row per
    game state; otherwise a single row is shared.
    """

    levels: Tuple[float, ...] = (-10.0, -5.0, 0.0)
    gamma: float = 0.9
    stateful: bool = False


@dataclass
class JointChain:
    P: sparse.csr_matrix
    nodes: List[Tuple[int, Tuple[int, ...]]]
    n_states: int
    n_configs: int
    epsilon: float
    k: int = 1

    @property
    def n_nodes(self) -> int:
        return self.P.shape[0]

    def node_index(self, s: int, config: Sequence[int]) -> int:
        return self.nodes.index((s, tuple(config)))

    def policy_marginal(self, row: int) -> np.ndarray:
        p = np.asarray(self.P[row].todense()).ravel().reshape(self.n_states, self.n_configs)
        return p.sum(axis=0)


def _config_neighbours(config: Tuple[int, ...], n_levels: int) -> List[Tuple[int, ...]]:
    out = []
    for e, lv in enumerate(config):
        for d in (-1, 1):
            if 0 <= lv + d < n_levels:
                c = list(config)
                c[e] = lv + d
                out.append(tuple(c))
    return out


def _level_move(levels: np.ndarray, lv: int, target: float) -> int:
    if lv + 1 < len(levels) and target > 0.5 * (levels[lv] + levels[lv + 1]):
        return lv + 1
    if lv > 0 and target < 0.5 * (levels[lv] + levels[lv - 1]):
        return lv - 1
    return lv


def build_joint_chain(g: MatrixGame, update: ChainUpdateSpec, policy_i, epsilon: float,
                      max_nodes: int = MAX_CHAIN_NODES) -> JointChain:
    """Transition matrix over (game state, opponent q-configuration).

    Agent i follows the fixed ``policy_i``; the opponent acts greedily on its
    discretised q-values (lowest index on ties). With probability 1 - epsilon
    the q-configuration follows the deterministic update, otherwise it jumps
    to a uniformly chosen single-entry neighbour.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    levels = np.asarray(update.levels, dtype=np.float64)
    if levels.ndim != 1 or levels.size == 0 or np.any(np.diff(levels) <= 0):
        raise ConfigError("levels must be a non-empty increasing sequence")
    n_s, n_j = g.n_states, g.n_actions[1]
    rows_q = n_s if update.stateful else 1
    n_entries = rows_q * n_j
    n_configs = levels.size ** n_entries
    n_nodes = n_s * n_configs
    if n_nodes > max_nodes:
        raise ConfigError(f"joint chain would have {n_nodes} nodes, above the budget of {max_nodes}")
    pi = _as_prob_table(g, policy_i)
    Rj = g.payoff_matrix(1)
    configs = list(itertools.product(range(levels.size), repeat=n_entries))
    cfg_index = {c: k for k, c in enumerate(configs)}
    nodes = [(s, c) for s in range(n_s) for c in configs]

    data, ri, ci = [], [], []
    for s in range(n_s):
        for c in configs:
            src = s * n_configs + cfg_index[c]
            qv = levels[np.array(c)].reshape(rows_q, n_j)
            row = s if update.stateful else 0
            aj = int(np.argmax(qv[row]))
            kicks = _config_neighbours(c, levels.size)
            for ai in range(g.n_actions[0]):
                p_a = pi[s, ai]
                if p_a == 0.0:
                    continue
                s2 = 1 + ai * n_j + aj
                row2 = s2 if update.stateful else 0
                target = Rj[ai, aj] + update.gamma * qv[row2].max()
                e = row * n_j + aj
                nc = list(c)
                nc[e] = _level_move(levels, c[e], target)
                if kicks:
                    moves = [(tuple(nc), 1.0 - epsilon)] + [(kc, epsilon / len(kicks)) for kc in kicks]
                else:
                    moves = [(tuple(nc), 1.0)]
                for cc, p in moves:
                    if p > 0.0:
                        ri.append(src)
                        ci.append(s2 * n_configs + cfg_index[cc])
                        data.append(p_a * p)
    P = sparse.csr_matrix((data, (ri, ci)), shape=(n_nodes, n_nodes))
    P.sum_duplicates()
    return JointChain(P, nodes, n_s, n_configs, epsilon)


def recurrent_class_count(P) -> int:
    """Number of closed strongly connected components of the support graph."""
    P = sparse.csr_matrix(P)
    n_comp, labels = csgraph.connected_components(P, directed=True, connection="strong")
    coo = P.tocoo()
    leaves = labels[coo.row] != labels[coo.col]
    open_comp = np.zeros(n_comp, dtype=bool)
    open_comp[labels[coo.row[leaves & (coo.data > 0)]]] = True
    return int((~open_comp).sum())


@dataclass
class PeriodicDistribution:
    phases: np.ndarray  # (k, n_nodes)
    iterations: int
    balance_residual: float

    @property
    def k(self) -> int:
        return self.phases.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.phases.mean(axis=0)


def _matrix(chain_or_P):
    return chain_or_P.P if isinstance(chain_or_P, JointChain) else sparse.csr_matrix(chain_or_P)


def spectral_gap(P) -> float:
    """1 - |lambda_2| of the transition matrix (dense for small chains)."""
    P = _matrix(P)
    n = P.shape[0]
    if n <= 2000:
        ev = np.linalg.eigvals(P.toarray())
    else:
        from scipy.sparse.linalg import eigs
        ev = eigs(P.T.astype(np.float64), k=min(6, n - 2), which="LM", return_eigenvectors=False)
    mags = np.sort(np.abs(ev))[::-1]
    return float(1.0 - mags[1]) if mags.size > 1 else 1.0


def stationary_periodic(chain, k: int = 1, init: Optional[np.ndarray] = None, tol: float = 1e-10,
                        max_iter: int = 1_000_000, balance_tol: float = 1e-8) -> PeriodicDistribution:
    """Power iteration of mu <- mu P^k until successive iterates are within ``tol`` in total variation.

    Returns the k phase distributions mu, mu P, ..., mu P^(k-1).
    """
    if k < 1:
        raise ValueError("period k must be >= 1")
    P = _matrix(chain)
    n = P.shape[0]
    PT = P.T.tocsr()
    mu = np.full(n, 1.0 / n) if init is None else np.asarray(init, dtype=np.float64).copy()
    if mu.shape != (n,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
        raise ValueError("init must be a probability vector over the chain nodes")
    for it in range(1, int(max_iter) + 1):
        nxt = mu
        for _ in range(k):
            nxt = PT @ nxt
        tv = 0.5 * np.abs(nxt - mu).sum()
        mu = nxt
        if tv < tol:
            break
    else:
        raise NonConvergenceError(f"power iteration on P^{k} did not converge in {int(max_iter)} iterations",
                                  spectral_gap(P))
    mu = mu / mu.sum()
    phases = [mu]
    for _ in range(k - 1):
        phases.append(PT @ phases[-1])
    phases = np.array(phases)
    closure = np.abs(PT @ phases[-1] - phases[0]).sum()
    avg = phases.mean(axis=0)
    resid = float(max(closure, np.abs(PT @ avg - avg).sum()))
    if resid >= balance_tol:
        raise NonConvergenceError(f"balance residual {resid:.3g} above {balance_tol:g}", spectral_gap(P))
    return PeriodicDistribution(phases, it, resid)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return float(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class IndependenceRow:
    epsilon: float
    max_tv: float
    passed: bool
    note: str = ""


@dataclass
class IndependenceReport:
    rows: List[IndependenceRow]
    threshold: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def check_init_independence(chain: Union[JointChain, Callable[[float], JointChain]], k: int,
                            inits: Sequence[np.ndarray], epsilons: Sequence[float] = (0.1, 0.03, 0.01),
                            threshold: float = 1e-6, max_iter: int = 1_000_000) -> IndependenceReport:
    """Stationary periodic distributions from every init, compared pairwise per epsilon.

    ``chain`` is either one chain (checked at its own epsilon) or a factory
    epsilon -> chain. A run that fails to converge counts as dependence.
    """
    if len(inits) < 2:
        raise ValueError("need at least two initial distributions")
    chains = [chain] if isinstance(chain, JointChain) else [chain(e) for e in epsilons]
    rows = []
    for ch in chains:
        try:
            dists = [stationary_periodic(ch, k, mu0, max_iter=max_iter).phases for mu0 in inits]
        except NonConvergenceError as exc:
            rows.append(IndependenceRow(ch.epsilon, float("inf"), False, str(exc)))
            continue
        tv = max((max(total_variation(a[l], b[l]) for l in range(k))
                  for a, b in itertools.combinations(dists, 2)), default=0.0)
        rows.append(IndependenceRow(ch.epsilon, tv, tv < threshold))
    return IndependenceReport(rows, threshold)


def point_mass(n: int, idx: int) -> np.ndarray:
    v = np.zeros(n)
    v[idx] = 1.0
    return v


# -- restricted deviation check ---------------------------------------------------

def _flip(g: MatrixGame) -> MatrixGame:
    """The same game seen from the column player (roles swapped)."""
    n0, n1 = g.n_actions
    payoff = {(b, a): (r[1], r[0]) for (a, b), r in g.payoff.items()}
    return MatrixGame(g.name + "^T", (n1, n0), payoff, (g.action_names[1], g.action_names[0]))


def _swap_states(g: MatrixGame, table: np.ndarray) -> np.ndarray:
    """Re-index a per-state table for the flipped game."""
    n0, n1 = g.n_actions
    out = np.empty_like(table)
    out[0] = table[0]
    for a in range(n0):
        for b in range(n1):
            out[1 + b * n0 + a] = table[1 + a * n1 + b]
    return out


def deviation_gain(g: MatrixGame, policies: Tuple, opponent: Optional[OpponentSpec] = None,
                   horizon: int = 10_000, n_rollouts: int = 16, seed: int = 0) -> Dict[int, float]:
    """Best improvement from a unilateral switch to another deterministic stationary policy.

    ``policies`` = (policy_i, policy_j) as action maps or probability tables.
    With ``opponent`` given, agent j is that learner instead of the fixed
    policy_j and only agent i's gain is reported.
    """
    pol_i, pol_j = policies
    pi_i = _as_prob_table(g, pol_i, 0)
    out = {}

    def best_gain(game, own, other_spec):
        tables = np.concatenate([own[None], [_as_prob_table(game, p) for p in stationary_policies(game)]])
        vals = _policy_values(game, tables, other_spec, horizon, n_rollouts, seed)
        return float(vals[1:].max() - vals[0])

    if opponent is not None:
        out[0] = best_gain(g, pi_i, opponent)
        return out
    pi_j = _as_prob_table(g, pol_j, 1)
    out[0] = best_gain(g, pi_i, OpponentSpec.scripted(pi_j))
    gt = _flip(g)
    out[1] = best_gain(gt, _swap_states(g, pi_j), OpponentSpec.scripted(_swap_states(g, pi_i)))
    return out
