"""Learning agents for iterated matrix games.

``SoftAgent`` implements three objectives over one code path:

* ``further`` - average-reward soft actor-critic over (state, inferred latent)
  with a learnable gain ``rho``;
* ``lili``    - identical, but the critic target is discounted instead;
* ``masac``   - discounted, no latent; during training the critic target reads
  the other agent's current policy directly (centralized critic).

The opponents used in the experiments are a tabular epsilon-greedy Q-learner
and fixed scripted policies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .envs import MatrixGame, Transition, state_from_index, state_index, step as env_step
from .inference import (ElboWindow, InferenceModule, LatentBelief, encode_step, encode_transition,
                        initial_belief, transition_dim)
from .nn import Adam, DenseNet, entropy_and_grad, log_softmax, softmax

SOFT_KINDS = ("further", "lili", "masac")
AGENT_KINDS = SOFT_KINDS + ("qlearner", "scripted")


@dataclass
class Hyper:
    """Per-agent hyperparameters; defaults are the IBS table."""

    critic_lr: float = 0.002
    gain_lr: float = 0.02
    actor_lr: float = 0.0005
    inference_lr: float = 0.002
    entropy: float = 0.4
    latent_dim: int = 5
    gamma: float = 0.99
    batch_size: int = 256
    tau_q: float = 0.01
    buffer_capacity: int = 10_000
    warmup: int = 500
    hidden: Tuple[int, ...] = (64, 64)
    kl_weight: float = 0.01


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored column-wise.

    Besides the RL record (s, z, a_i, a_j, r, s', z') each row keeps the
    encoder input that produced ``z`` and the distribution of the latent it
    was conditioned on, which is what an ELBO window needs.
    """

    def __init__(self, capacity: int, n_states: int, latent_dim: int, tau_dim: int):
        if capacity <= 0:
            raise ValueError("buffer capacity must be positive")
        self.capacity = capacity
        c = capacity
        self.s = np.zeros((c, n_states))
        self.z = np.zeros((c, latent_dim))
        self.a_i = np.zeros(c, dtype=np.int64)
        self.a_j = np.zeros(c, dtype=np.int64)
        self.r = np.zeros(c)
        self.s2 = np.zeros((c, n_states))
        self.z2 = np.zeros((c, latent_dim))
        self.z_in = np.zeros((c, latent_dim))
        self.tau_in = np.zeros((c, tau_dim))
        self.prior_mean = np.zeros((c, latent_dim))
        self.prior_log_std = np.zeros((c, latent_dim))
        self.has_enc = np.zeros(c, dtype=bool)
        self.size = 0
        self.next = 0

    def __len__(self) -> int:
        return self.size

    def append(self, s, z, a_i, a_j, r, s2, z2, enc_in=None) -> None:
        k = self.next
        self.s[k] = s
        self.z[k] = z
        self.a_i[k] = a_i
        self.a_j[k] = a_j
        self.r[k] = r
        self.s2[k] = s2
        self.z2[k] = z2
        if enc_in is None:
            self.has_enc[k] = False
        else:
            z_in, tau_in, prior_mean, prior_log_std = enc_in
            self.z_in[k] = z_in
            self.tau_in[k] = tau_in
            self.prior_mean[k] = prior_mean
            self.prior_log_std[k] = prior_log_std
            self.has_enc[k] = True
        self.next = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def recent_indices(self, n: int) -> np.ndarray:
        n = min(n, self.size)
        return (self.next - n + np.arange(n)) % self.capacity

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform sample without replacement, ordered by age within the buffer."""
        picks = rng.choice(self.size, size=min(n, self.size), replace=False)
        oldest = (self.next - self.size) % self.capacity
        return (oldest + np.sort(picks)) % self.capacity

    def batch(self, idx: np.ndarray, n_opp: int) -> "Batch":
        return Batch(self.s[idx], self.z[idx], self.a_i[idx], self.a_j[idx], self.r[idx],
                     self.s2[idx], self.z2[idx])

    def elbo_window(self, n: int) -> Optional[ElboWindow]:
        idx = self.recent_indices(n)
        idx = idx[self.has_enc[idx]]
        if idx.size == 0:
            return None
        return ElboWindow(self.z_in[idx], self.tau_in[idx], self.s[idx], self.a_j[idx],
                          self.prior_mean[idx], self.prior_log_std[idx])


@dataclass
class Batch:
    s: np.ndarray
    z: np.ndarray
    a_i: np.ndarray
    a_j: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    z2: np.ndarray

    def __len__(self) -> int:
        return self.r.shape[0]


class SoftAgent:
    """Soft actor-critic agent; ``kind`` selects FURTHER, LILI or MASAC."""

    def __init__(self, kind: str, game: MatrixGame, player: int, hp: Hyper, rng: np.random.Generator):
        if kind not in SOFT_KINDS:
            raise ValueError(f"unknown soft agent kind {kind!r}")
        self.kind = kind
        self.game = game
        self.player = player
        self.hp = hp
        self.rng = rng
        self.n_states = game.n_states
        self.n_own = game.n_actions[player]
        self.n_opp = game.n_actions[1 - player]
        self.uses_latent = kind != "masac"
        self.average_reward = kind == "further"
        self.latent_dim = hp.latent_dim if self.uses_latent else 0
        self.entropy = hp.entropy
        self.gamma = hp.gamma
        self.state_codes = np.eye(self.n_states)
        self.opp_codes = np.eye(self.n_opp)

        obs_dim = self.n_states + self.latent_dim
        hidden = tuple(hp.hidden)
        # construction order fixes the per-component seed stream
        self.policy = DenseNet([obs_dim, *hidden, self.n_own], rng)
        self.critics = [DenseNet([obs_dim + self.n_opp, *hidden, self.n_own], rng) for _ in range(2)]
        self.targets = [c.copy() for c in self.critics]
        self.policy_opt = Adam(self.policy.params, hp.actor_lr)
        self.critic_opts = [Adam(c.params, hp.critic_lr) for c in self.critics]
        self.rho = np.zeros(1)
        self.rho_opt = Adam(self.rho, hp.gain_lr)
        self.rho_bounds = game.reward_range(player)

        self.tau_dim = transition_dim(game, player)
        if self.uses_latent:
            self.inference = InferenceModule(self.n_states, self.tau_dim, self.n_opp, self.latent_dim,
                                             hidden, rng, hp.inference_lr, hp.kl_weight)
        else:
            self.inference = None
        self.buffer = ReplayBuffer(hp.buffer_capacity, self.n_states, self.latent_dim, self.tau_dim)
        self.belief = initial_belief(self.latent_dim)
        self._enc_in = None
        self.steps = 0

    # -- execution ---------------------------------------------------------
    def latent(self, mode: str = "train") -> np.ndarray:
        return self.belief.sample if mode == "train" else self.belief.dist.mean

    def obs(self, s_idx: int, z: np.ndarray) -> np.ndarray:
        return np.concatenate([self.state_codes[s_idx], z])

    def policy_probs(self, s_idx: int, z: np.ndarray) -> np.ndarray:
        return softmax(self.policy.predict(self.obs(s_idx, z)))

    @property
    def warming_up(self) -> bool:
        return self.steps < self.hp.warmup

    def action_probs(self, s_idx: int) -> np.ndarray:
        """Current behaviour distribution at ``s_idx`` (what a centralized critic reads)."""
        if self.warming_up:
            return np.full(self.n_own, 1.0 / self.n_own)
        return self.policy_probs(s_idx, self.latent("train"))

    def act(self, s_idx: int, mode: str = "train") -> int:
        if mode == "train" and self.warming_up:
            return int(self.rng.integers(self.n_own))
        return act(self, s_idx, self.latent(mode), mode, self.rng)

    # -- inference ---------------------------------------------------------
    def observe(self, tr: Transition, s_idx: int, s2_idx: int) -> None:
        """Infer the next latent and store the transition."""
        prev = self.belief
        enc_in = self._enc_in
        if self.uses_latent:
            tau = encode_transition(self.game, tr, self.player)
            self.belief = encode_step(self.inference, prev, tau, self.rng.standard_normal(self.latent_dim))
            self._enc_in = (prev.sample, tau, prev.dist.mean, prev.dist.log_std)
        self.buffer.append(self.state_codes[s_idx], prev.sample, tr.a_i, tr.a_j, tr.r_i,
                           self.state_codes[s2_idx], self.belief.sample, enc_in)

    # -- training ----------------------------------------------------------
    def opponent_next_probs(self, batch: Batch, other=None) -> np.ndarray:
        if self.uses_latent:
            return self.inference.opponent_probs(batch.s2, batch.z2)
        if other is None:
            raise ValueError("MASAC needs the other agent's policy for its target")
        s2 = batch.s2.argmax(axis=1)
        return np.stack([other.action_probs(int(k)) for k in s2])

    def train(self, other=None) -> Dict[str, float]:
        """One update of critics and gain, policy, inference and targets on the newest transition."""
        self.steps += 1
        out = {"critic_loss": 0.0, "policy_loss": 0.0, "elbo_loss": 0.0}
        if self.steps <= self.hp.warmup:
            return out
        batch = self.buffer.batch(self.buffer.recent_indices(1), self.n_opp)
        p_opp = self.opponent_next_probs(batch, other)
        objective = "average_reward" if self.average_reward else "discounted"
        loss_c, grads = critic_loss(self, batch, objective, p_opp)
        for opt, g in zip(self.critic_opts, grads["critics"]):
            opt.step(g)
        if self.average_reward:
            self.rho_opt.step(grads["rho"])
            np.clip(self.rho, *self.rho_bounds, out=self.rho)
        loss_p, g_pi = policy_loss(self, batch)
        self.policy_opt.step(g_pi)
        if self.uses_latent:
            window = self.buffer.elbo_window(self.hp.batch_size)
            if window is not None:
                noise = self.rng.standard_normal((len(window), self.latent_dim))
                out["elbo_loss"] = self.inference.update(window, noise)
        for tgt, src in zip(self.targets, self.critics):
            tgt.soft_update(src, self.hp.tau_q)
        out["critic_loss"] = loss_c
        out["policy_loss"] = loss_p
        return out

    def gain(self) -> float:
        return float(self.rho[0]) if self.average_reward else 0.0


def act(bundle: SoftAgent, s_idx: int, z: np.ndarray, mode: str, rng: np.random.Generator) -> int:
    """Sample from the policy (train) or take its most probable action (eval, lowest index on ties)."""
    p = bundle.policy_probs(s_idx, z)
    if mode == "eval":
        return int(np.argmax(p))
    return int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right").clip(max=p.size - 1))


def _critic_inputs(obs: np.ndarray, n_opp: int) -> np.ndarray:
    """Rows (b, a_j) = concat(obs_b, one-hot a_j), ordered b-major."""
    b = obs.shape[0]
    rep = np.repeat(obs, n_opp, axis=0)
    codes = np.tile(np.eye(n_opp), (b, 1))
    return np.concatenate([rep, codes], axis=1)


def q_tables(nets: Sequence[DenseNet], obs: np.ndarray, n_opp: int) -> np.ndarray:
    """Per-net q-values with shape (n_nets, batch, n_opp, n_own)."""
    x = _critic_inputs(obs, n_opp)
    return np.stack([net.predict(x).reshape(obs.shape[0], n_opp, -1) for net in nets])


def soft_value(bundle: SoftAgent, s_enc: np.ndarray, z: np.ndarray, p_opp: np.ndarray,
               target: bool = True) -> np.ndarray:
    """v(s, z) = sum_ai pi(ai) sum_aj p(aj) min_b q_b(s, z, ai, aj) + alpha * H(pi), exactly.

    Accepts a single state (1-d inputs, returns a float) or a batch.
    """
    single = np.ndim(s_enc) == 1
    s_enc, z, p_opp = np.atleast_2d(s_enc), np.atleast_2d(z), np.atleast_2d(p_opp)
    obs = np.concatenate([s_enc, z], axis=1)
    logits = bundle.policy.predict(obs)
    pi = softmax(logits)
    logpi = log_softmax(logits)
    q = q_tables(bundle.targets if target else bundle.critics, obs, p_opp.shape[1])
    qmin = np.minimum(q[0], q[1])
    v = _enumerate_value(pi, logpi, p_opp, qmin, bundle.entropy)
    return float(v[0]) if single else v


def _enumerate_value(pi, logpi, p_opp, qmin, alpha):
    n_own, n_opp = pi.shape[1], p_opp.shape[1]
    expected = np.zeros(pi.shape[0])
    for ai in range(n_own):
        inner = np.zeros(pi.shape[0])
        for aj in range(n_opp):
            inner = inner + p_opp[:, aj] * qmin[:, aj, ai]
        expected = expected + pi[:, ai] * inner
    ent = np.zeros(pi.shape[0])
    for ai in range(n_own):
        ent = ent - pi[:, ai] * logpi[:, ai]
    return expected + alpha * ent


def critic_loss(bundle: SoftAgent, batch: Batch, objective: str, p_opp_next: np.ndarray):
    """Soft Bellman residual, averaged over batch and both critics.

    average_reward: y = r - rho + v(s', z'); discounted: y = r + gamma * v(s', z').
    ``v`` uses the target critics and is a constant. Returns the loss and a dict
    with gradients for both critics and for ``rho`` (zero in discounted mode).
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    v_next = soft_value(bundle, batch.s2, batch.z2, p_opp_next, target=True)
    if objective == "average_reward":
        y = batch.r - bundle.rho[0] + v_next
    elif objective == "discounted":
        y = batch.r + bundle.gamma * v_next
    else:
        raise ValueError(f"unknown objective {objective!r}")
    x = np.concatenate([batch.s, batch.z, bundle.opp_codes[batch.a_j]], axis=1)
    rows = np.arange(n)
    loss = 0.0
    grads = []
    resid_sum = 0.0
    for net in bundle.critics:
        q = net.forward(x)
        resid = y - q[rows, batch.a_i]
        loss += float(resid @ resid) / (2 * n)
        resid_sum += resid.sum()
        g = np.zeros_like(q)
        g[rows, batch.a_i] = -resid / n
        net.backward(g)
        grads.append(net.grad.copy())
    g_rho = np.array([-resid_sum / n]) if objective == "average_reward" else np.zeros(1)
    return loss, {"critics": grads, "rho": g_rho, "target": y}


def policy_loss(bundle: SoftAgent, batch: Batch):
    """-(sum_ai pi(ai) min_b q_b(s, z, ai, a_j) + alpha H(pi)), batch-averaged; critics held fixed."""
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    obs = np.concatenate([batch.s, batch.z], axis=1)
    x = np.concatenate([obs, bundle.opp_codes[batch.a_j]], axis=1)
    qmin = np.minimum(bundle.critics[0].predict(x), bundle.critics[1].predict(x))
    logits = bundle.policy.forward(obs)
    pi = softmax(logits)
    h, dh = entropy_and_grad(logits)
    expected = (pi * qmin).sum(axis=1)
    objective = expected + bundle.entropy * h
    d_expected = pi * (qmin - expected[:, None])
    d_logits = -(d_expected + bundle.entropy * dh) / n
    bundle.policy.backward(d_logits)
    return float(-objective.mean()), bundle.policy.grad.copy()


def masac_step(bundle_i: SoftAgent, bundle_j, batch: Batch) -> Dict[str, float]:
    """Discounted critic and policy update whose target reads ``bundle_j``'s live policy."""
    if bundle_i.kind != "masac":
        raise ValueError("masac_step needs a MASAC agent")
    p_opp = bundle_i.opponent_next_probs(batch, bundle_j)
    loss_c, grads = critic_loss(bundle_i, batch, "discounted", p_opp)
    for opt, g in zip(bundle_i.critic_opts, grads["critics"]):
        opt.step(g)
    loss_p, g_pi = policy_loss(bundle_i, batch)
    bundle_i.policy_opt.step(g_pi)
    for tgt, src in zip(bundle_i.targets, bundle_i.critics):
        tgt.soft_update(src, bundle_i.hp.tau_q)
    return {"critic_loss": loss_c, "policy_loss": loss_p}


@dataclass
class TabularQLearner:
    """Epsilon-greedy tabular Q-learner over game states."""

    game: MatrixGame
    player: int
    rng: np.random.Generator
    alpha: float = 0.5
    gamma: float = 0.9
    epsilon: float = 0.05
    q: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.game.n_actions[self.player]
        if self.q is None:
            self.q = np.zeros((self.game.n_states, n))
        else:
            q = np.asarray(self.q, dtype=np.float64)
            self.q = np.tile(q, (self.game.n_states, 1)) if q.ndim == 1 else q.copy()
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    kind = "qlearner"

    def action_probs(self, s_idx: int) -> np.ndarray:
        n = self.q.shape[1]
        p = np.full(n, self.epsilon / n)
        p[int(np.argmax(self.q[s_idx]))] += 1.0 - self.epsilon
        return p

    def act(self, s_idx: int, mode: str = "train") -> int:
        if mode == "train" and self.epsilon > 0.0 and self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.q.shape[1]))
        return int(np.argmax(self.q[s_idx]))

    def observe(self, tr: Transition, s_idx: int, s2_idx: int) -> None:
        self._last = (s_idx, tr.a_i, tr.r_i, s2_idx)

    def train(self, other=None) -> Dict[str, float]:
        s, a, r, s2 = self._last
        self.q[s, a] += self.alpha * (r + self.gamma * self.q[s2].max() - self.q[s, a])
        return {"critic_loss": 0.0, "policy_loss": 0.0, "elbo_loss": 0.0}

    def gain(self) -> float:
        return 0.0


def q_update(ql: TabularQLearner, t: Transition) -> np.ndarray:
    s, s2 = state_index(ql.game, t.s), state_index(ql.game, t.s_next)
    ql.q[s, t.a_i] += ql.alpha * (t.r_i + ql.gamma * ql.q[s2].max() - ql.q[s, t.a_i])
    return ql.q


class ScriptedAgent:
    """Fixed stationary policy given as a (n_states, n_actions) probability table."""

    kind = "scripted"

    def __init__(self, game: MatrixGame, player: int, table, rng: np.random.Generator):
        table = np.asarray(table, dtype=np.float64)
        n = game.n_actions[player]
        if table.ndim == 1 and table.dtype.kind == "f" and table.shape == (n,):
            table = np.tile(table, (game.n_states, 1))
        if table.shape != (game.n_states, n) or np.any(table < 0) or not np.allclose(table.sum(axis=1), 1.0):
            raise ValueError("scripted policy must be a row-stochastic (n_states, n_actions) table")
        self.game = game
        self.player = player
        self.table = table
        self.rng = rng

    @classmethod
    def constant(cls, game, player, action, rng):
        t = np.zeros((game.n_states, game.n_actions[player]))
        t[:, action] = 1.0
        return cls(game, player, t, rng)

    @classmethod
    def alternating(cls, game, player, rng):
        """Plays the action it did not play last step (action 0 from the initial state)."""
        n = game.n_actions[player]
        t = np.zeros((game.n_states, n))
        t[0, 0] = 1.0
        for k, s in enumerate(game.states()[1:], start=1):
            own_prev = s.joint[player]
            t[k, (own_prev + 1) % n] = 1.0
        return cls(game, player, t, rng)

    def action_probs(self, s_idx: int) -> np.ndarray:
        return self.table[s_idx]

    def act(self, s_idx: int, mode: str = "train") -> int:
        p = self.table[s_idx]
        if mode == "eval" or p.max() == 1.0:
            return int(np.argmax(p))
        return int(self.rng.choice(p.size, p=p))

    def observe(self, tr, s_idx, s2_idx) -> None:
        pass

    def train(self, other=None) -> Dict[str, float]:
        return {"critic_loss": 0.0, "policy_loss": 0.0, "elbo_loss": 0.0}

    def gain(self) -> float:
        return 0.0


@dataclass
class World:
    game: MatrixGame
    state: int = 0

    def reset(self) -> None:
        self.state = 0


def further_loop_step(world: World, agents, t: int, actions: Optional[Tuple[int, int]] = None) -> Dict[str, float]:
    """One iteration of decentralized execution followed by decentralized training.

    ``actions`` overrides the sampled joint action (used by scripted tests).
    """
    g = world.game
    s = world.state
    if actions is None:
        a0 = agents[0].act(s)
        a1 = agents[1].act(s)
    else:
        a0, a1 = actions
    tr0, tr1 = env_step(g, state_from_index(g, s), a0, a1)
    s2 = state_index(g, tr0.s_next)
    agents[0].observe(tr0, s, s2)
    agents[1].observe(tr1, s, s2)
    m0 = agents[0].train(agents[1])
    agents[1].train(agents[0])
    world.state = s2
    return {
        "step": t,
        "a_i": a0,
        "a_j": a1,
        "r_i": tr0.r_i,
        "r_j": tr1.r_i,
        "rho_i": agents[0].gain(),
        "rho_j": agents[1].gain(),
        "critic_loss": m0["critic_loss"],
        "policy_loss": m0["policy_loss"],
        "elbo_loss": m0["elbo_loss"],
    }

