"""Variational inference over the opponent's latent strategy.

The encoder maps (previous latent sample, encoded transition) to a diagonal
Gaussian over the next latent, with the mean squashed by tanh so that the
recurrence through the carried sample stays bounded; the decoder maps (state, latent) to logits
over the opponent's next action. Training maximises a windowed sequential
ELBO whose prior at every step is the previous posterior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .envs import MatrixGame, Transition, encode_state, state_index
from .nn import (LOG_STD_MAX, LOG_STD_MIN, Adam, DenseNet, DiagGaussian, kl_terms,
                 log_softmax, sample_reparam, softmax)

KL_WEIGHT = 0.01


@dataclass
class LatentBelief:
    dist: DiagGaussian
    sample: np.ndarray

    @property
    def dim(self) -> int:
        return self.dist.mean.shape[0]


def initial_belief(latent_dim: int) -> LatentBelief:
    """Standard-normal prior; the carried sample starts at its mean."""
    d = DiagGaussian.standard(latent_dim)
    return LatentBelief(d, d.mean.copy())


def transition_dim(g: MatrixGame, player: int = 0) -> int:
    return 2 * g.n_states + g.n_actions[player] + g.n_actions[1 - player] + 1


def encode_transition(g: MatrixGame, t: Transition, player: int = 0) -> np.ndarray:
    """concat(one-hot s, one-hot own action, one-hot opponent action, reward, one-hot s')."""
    n_own, n_opp = g.n_actions[player], g.n_actions[1 - player]
    out = np.zeros(transition_dim(g, player))
    out[state_index(g, t.s)] = 1.0
    out[g.n_states + t.a_i] = 1.0
    out[g.n_states + n_own + t.a_j] = 1.0
    out[g.n_states + n_own + n_opp] = t.r_i
    out[g.n_states + n_own + n_opp + 1 + state_index(g, t.s_next)] = 1.0
    return out


class InferenceModule:
    """Encoder/decoder pair for one agent, with their optimizers."""

    def __init__(self, n_states: int, tau_dim: int, n_opp_actions: int, latent_dim: int,
                 hidden: Sequence[int], rng: np.random.Generator, lr: float,
                 kl_weight: float = KL_WEIGHT):
        self.n_states = n_states
        self.tau_dim = tau_dim
        self.latent_dim = latent_dim
        self.n_opp_actions = n_opp_actions
        self.kl_weight = kl_weight
        self.encoder = DenseNet([latent_dim + tau_dim, *hidden, 2 * latent_dim], rng)
        self.decoder = DenseNet([n_states + latent_dim, *hidden, n_opp_actions], rng)
        self.enc_opt = Adam(self.encoder.params, lr)
        self.dec_opt = Adam(self.decoder.params, lr)

    def posterior(self, z: np.ndarray, tau: np.ndarray) -> DiagGaussian:
        out = self.encoder.predict(np.concatenate([z, tau], axis=-1))
        return DiagGaussian(np.tanh(out[..., :self.latent_dim]), out[..., self.latent_dim:])

    def opponent_probs(self, s_enc: np.ndarray, z: np.ndarray) -> np.ndarray:
        return softmax(self.decoder.predict(np.concatenate([s_enc, z], axis=-1)))

    def update(self, window: "ElboWindow", noise: np.ndarray) -> float:
        loss, g_enc, g_dec = elbo_loss(self, window, noise)
        self.enc_opt.step(g_enc)
        self.dec_opt.step(g_dec)
        return loss


def encode_step(inf: InferenceModule, b: LatentBelief, tau: np.ndarray, noise: np.ndarray) -> LatentBelief:
    if b.sample.shape[-1] != inf.latent_dim or tau.shape[-1] != inf.tau_dim:
        raise ValueError("belief or transition encoding does not match the encoder")
    d = inf.posterior(b.sample, tau)
    return LatentBelief(d, sample_reparam(d, noise))


def decode_logprob(inf: InferenceModule, g: MatrixGame, s, z: np.ndarray, a_j: int) -> float:
    logits = inf.decoder.predict(np.concatenate([encode_state(g, s), z]))
    return float(log_softmax(logits)[a_j])


@dataclass
class ElboWindow:
    """Consecutive ELBO items in arrival order.

    Item ``k`` holds the encoder input that produced the latent at time t_k
    (``z_in``, ``tau_in``), the state and opponent action observed at t_k, and
    the distribution the previous latent was drawn from. Only ``prior_*[0]``
    is used: later items take the recomputed previous posterior as prior.
    """

    z_in: np.ndarray
    tau_in: np.ndarray
    s_enc: np.ndarray
    a_opp: np.ndarray
    prior_mean: np.ndarray
    prior_log_std: np.ndarray

    def __len__(self) -> int:
        return self.z_in.shape[0]


def elbo_loss(inf: InferenceModule, window: ElboWindow, noise: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Negative windowed ELBO and its gradients for encoder and decoder.

    loss = -sum_k [log p(a_k | s_k, z_k) - w * KL(q_k || q_{k-1})] with
    z_k = tanh(m_k) + exp(log_std_k) * noise_k and q_{-1} the carried prior.
    The encoder inputs are treated as data, so one batched pass covers
    the whole window.
    """
    n = len(window)
    if n == 0:
        raise ValueError("empty ELBO window")
    dz = inf.latent_dim
    enc_out = inf.encoder.forward(np.concatenate([window.z_in, window.tau_in], axis=1))
    mu = np.tanh(enc_out[:, :dz])
    raw_ls = enc_out[:, dz:]
    ls = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(ls)
    z = mu + std * noise

    logits = inf.decoder.forward(np.concatenate([window.s_enc, z], axis=1))
    logp = log_softmax(logits)
    rows = np.arange(n)
    recon = logp[rows, window.a_opp]

    prior_mu = np.empty_like(mu)
    prior_ls = np.empty_like(ls)
    prior_mu[0] = window.prior_mean[0]
    prior_ls[0] = window.prior_log_std[0]
    prior_mu[1:] = mu[:-1]
    prior_ls[1:] = ls[:-1]
    kl, g_mu, g_ls, g_pmu, g_pls = kl_terms(mu, ls, prior_mu, prior_ls)

    w = inf.kl_weight
    loss = float(-(recon.sum() - w * kl.sum()))

    # decoder
    d_logits = np.exp(logp)
    d_logits[rows, window.a_opp] -= 1.0
    d_in = inf.decoder.backward(d_logits)
    d_z = d_in[:, inf.n_states:]

    # encoder: reparameterised sample, own KL term, and KL term of the next item
    d_mu = d_z + w * g_mu
    d_ls = d_z * std * noise + w * g_ls
    d_mu[:-1] += w * g_pmu[1:]
    d_ls[:-1] += w * g_pls[1:]
    d_mu *= 1.0 - mu * mu
    d_ls *= (raw_ls >= LOG_STD_MIN) & (raw_ls <= LOG_STD_MAX)
    inf.encoder.backward(np.concatenate([d_mu, d_ls], axis=1))
    return loss, inf.encoder.grad.copy(), inf.decoder.grad.copy()
