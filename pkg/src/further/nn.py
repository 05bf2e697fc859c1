"""Small dense networks with hand-written reverse-mode gradients.

Everything is float64. A network keeps all of its weights in one flat
array (``net.params``) with per-layer views, which keeps optimizer steps and
Polyak target updates to a few vector operations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, List, Optional, Sequence

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


class DenseNet:
    """Fully connected net: relu on hidden layers, linear output.

    ``forward`` caches activations for one subsequent ``backward``;
    ``predict`` evaluates without touching the cache.
    """

    def __init__(self, widths: Sequence[int], rng: Optional[np.random.Generator] = None,
                 out_scale: float = 1.0):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"invalid layer widths {widths}")
        self.widths = widths
        shapes = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        sizes = [int(np.prod(s)) for s in shapes]
        self.params = np.zeros(sum(sizes))
        self.grad = np.zeros_like(self.params)
        self.W: List[np.ndarray] = []
        self.b: List[np.ndarray] = []
        self.gW: List[np.ndarray] = []
        self.gb: List[np.ndarray] = []
        offset = 0
        for k, (shape, size) in enumerate(zip(shapes, sizes)):
            p = self.params[offset:offset + size].reshape(shape)
            g = self.grad[offset:offset + size].reshape(shape)
            (self.W if k % 2 == 0 else self.b).append(p)
            (self.gW if k % 2 == 0 else self.gb).append(g)
            offset += size
        if rng is not None:
            # uniform fan-in scaling, zero biases
            for k, W in enumerate(self.W):
                bound = 1.0 / np.sqrt(W.shape[0])
                W[...] = rng.uniform(-bound, bound, size=W.shape)
            self.W[-1] *= out_scale
        self._cache: Optional[List[np.ndarray]] = None

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"input dimension {x.shape[-1]} does not match net input width {self.n_in}")
        return x

    def predict(self, x: np.ndarray) -> np.ndarray:
        h = self._check(x)
        last = len(self.W) - 1
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            h = h @ W + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self._check(x)
        acts = [h]
        last = len(self.W) - 1
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            h = h @ W + b
            if k < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        self._cache = acts
        return h

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Write d(loss)/d(params) into ``self.grad``; return d(loss)/d(input).

        ``grad_out`` has the shape of the last ``forward`` output. The cache is
        consumed, so every backward needs its own forward.
        """
        if self._cache is None:
            raise RuntimeError("backward called without a preceding forward")
        acts, self._cache = self._cache, None
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != acts[-1].shape:
            raise ValueError(f"output gradient shape {g.shape} != output shape {acts[-1].shape}")
        for k in range(len(self.W) - 1, -1, -1):
            if k < len(self.W) - 1:
                g = g * (acts[k + 1] > 0.0)
            a = acts[k]
            if g.ndim == 1:
                np.multiply.outer(a, g, out=self.gW[k])
                self.gb[k][...] = g
            else:
                np.matmul(a.T, g, out=self.gW[k])
                g.sum(axis=0, out=self.gb[k])
            g = g @ self.W[k].T
        return g

    def copy(self) -> "DenseNet":
        other = DenseNet(self.widths)
        other.params[...] = self.params
        return other

    def soft_update(self, source: "DenseNet", tau: float) -> None:
        """Polyak averaging: self <- tau * source + (1 - tau) * self."""
        self.params *= 1.0 - tau
        self.params += tau * source.params


@dataclass
class Adam:
    """Adaptive-moment optimizer over one flat parameter array (updated in place)."""

    params: np.ndarray
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m = np.zeros_like(self.params)
        self.v = np.zeros_like(self.params)

    def step(self, grad: np.ndarray) -> np.ndarray:
        if grad.shape != self.params.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {self.params.shape}")
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        self.params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return self.params


def adam_step(state: Adam, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    if params is not state.params:
        raise ValueError("optimizer state is bound to a different parameter array")
    return state.step(grads)


@dataclass
class DiagGaussian:
    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.clip(np.asarray(self.log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
        if self.mean.shape != self.log_std.shape:
            raise ValueError("mean and log_std must have the same shape")

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @classmethod
    def standard(cls, dim: int) -> "DiagGaussian":
        return cls(np.zeros(dim), np.zeros(dim))


def sample_reparam(d: DiagGaussian, noise: np.ndarray) -> np.ndarray:
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != d.mean.shape[-1]:
        raise ValueError("noise dimension does not match the distribution")
    return d.mean + np.exp(d.log_std) * noise


def kl_terms(mu_p, ls_p, mu_q, ls_q):
    """Elementwise KL(p || q) summed over the last axis, plus its four gradients."""
    var_ratio = np.exp(2.0 * (ls_p - ls_q))
    diff = mu_p - mu_q
    inv_var_q = np.exp(-2.0 * ls_q)
    dsq = diff * diff * inv_var_q
    kl = np.sum(ls_q - ls_p + 0.5 * (var_ratio + dsq) - 0.5, axis=-1)
    g_mu_p = diff * inv_var_q
    g_ls_p = var_ratio - 1.0
    g_mu_q = -g_mu_p
    g_ls_q = 1.0 - var_ratio - dsq
    return kl, g_mu_p, g_ls_p, g_mu_q, g_ls_q


def diag_gaussian_kl(p: DiagGaussian, q: DiagGaussian) -> float:
    if p.mean.shape != q.mean.shape:
        raise ValueError("KL between Gaussians of different dimension")
    return float(kl_terms(p.mean, p.log_std, q.mean, q.log_std)[0])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    x = x - x.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def entropy_and_grad(logits: np.ndarray):
    """Categorical entropy per row and its gradient with respect to the logits."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -(p * logp).sum(axis=-1)
    dh = -p * (logp + h[..., None])
    return h, dh


# -- parameter snapshots -----------------------------------------------------
# Layout: magic b"FNN1", uint32 version, uint32 n_arrays, then per array a
# uint64 length followed by that many float64 values. Everything little-endian.
_MAGIC = b"FNN1"
SNAPSHOT_VERSION = 1


def save_params(f: BinaryIO, arrays: Sequence[np.ndarray]) -> None:
    f.write(_MAGIC)
    f.write(struct.pack("<II", SNAPSHOT_VERSION, len(arrays)))
    for a in arrays:
        flat = np.ascontiguousarray(a, dtype="<f8").ravel()
        f.write(struct.pack("<Q", flat.size))
        f.write(flat.tobytes())


def load_params(f: BinaryIO) -> List[np.ndarray]:
    if f.read(4) != _MAGIC:
        raise ValueError("not a parameter snapshot")
    version, n = struct.unpack("<II", f.read(8))
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    out = []
    for _ in range(n):
        (size,) = struct.unpack("<Q", f.read(8))
        out.append(np.frombuffer(f.read(8 * size), dtype="<f8").astype(np.float64))
    return out
