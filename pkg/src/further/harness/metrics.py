"""Summary statistics over run logs."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .config import ExperimentConfig
from .runner import RunLog, run_matchup

CONVERGED_FRACTION = 0.1


def relative_accumulated_reward(log: RunLog) -> Dict[int, np.ndarray]:
    """Per seed, the running sum of r_i - r_j."""
    return {s: np.cumsum(lg["r_i"] - lg["r_j"]) for s in log.seeds for lg in [log.for_seed(s)]}


def _tail(x: np.ndarray, frac: float) -> np.ndarray:
    n = max(1, int(round(len(x) * frac)))
    return x[-n:]


def converged_reward(log: RunLog, column: str = "r_i", frac: float = CONVERGED_FRACTION) -> Dict[int, float]:
    """Mean of ``column`` over the final ``frac`` of each seed's steps."""
    return {s: float(_tail(log.for_seed(s)[column], frac).mean()) for s in log.seeds}


def td_error(log: RunLog, frac: float = CONVERGED_FRACTION) -> Dict[int, float]:
    """Mean squared Bellman residual (agent i's critic loss) over the final window."""
    return converged_reward(log, "critic_loss", frac)


@dataclass
class MetricSeries:
    mean: np.ndarray
    half_width: Optional[np.ndarray]
    n_seeds: int
    window: int


def _smooth(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; the first window-1 entries average what is available."""
    if window <= 1:
        return x
    c = np.cumsum(x, axis=-1)
    out = c.copy()
    out[..., window:] = c[..., window:] - c[..., :-window]
    counts = np.minimum(np.arange(1, x.shape[-1] + 1), window)
    return out / counts


def aggregate(values, window: int = 100, confidence: float = 0.95) -> MetricSeries:
    """Per-step mean and t-interval half-width across seeds.

    ``values`` is an (n_seeds, n_steps) array or a list of equal-length
    per-seed series; each series is first smoothed with a trailing window.
    """
    x = np.asarray([np.asarray(v, dtype=np.float64) for v in values])
    if x.ndim != 2:
        raise ValueError("aggregate needs equal-length per-seed series")
    x = _smooth(x, window)
    n = x.shape[0]
    mean = x.mean(axis=0)
    if n < 2:
        warnings.warn("fewer than two seeds: confidence interval undefined, reporting the mean only")
        return MetricSeries(mean, None, n, window)
    sd = x.std(axis=0, ddof=1)
    half = stats.t.ppf(0.5 + confidence / 2, n - 1) * sd / np.sqrt(n)
    return MetricSeries(mean, half, n, window)


def aggregate_log(log: RunLog, column: str = "r_i", window: int = 100) -> MetricSeries:
    return aggregate([log.for_seed(s)[column] for s in log.seeds], window)


@dataclass
class GammaRow:
    gamma: float
    rewards: Dict[int, float]
    td_errors: Dict[int, float]

    @property
    def mean_reward(self) -> float:
        return float(np.mean(list(self.rewards.values())))

    @property
    def mean_td_error(self) -> float:
        return float(np.mean(list(self.td_errors.values())))


def gamma_sweep(cfg: ExperimentConfig, gammas: Sequence[float], seeds: Optional[List[int]] = None,
                logs: Optional[Dict[float, RunLog]] = None) -> List[GammaRow]:
    """Converged reward and TD error of a discounted (LILI) agent i for each discount.

    ``logs`` may supply already-computed runs keyed by gamma.
    """
    if cfg.agent_i != "lili":
        raise ValueError("the discount sweep runs a lili agent as agent i")
    if any(not 0.0 < g < 1.0 for g in gammas):
        raise ValueError("every gamma must lie in (0, 1)")
    rows = []
    for gm in gammas:
        log = (logs or {}).get(gm)
        if log is None:
            log = run_matchup(cfg.replace(gamma=float(gm)), seeds)
        rows.append(GammaRow(float(gm), converged_reward(log), td_error(log)))
    return rows
