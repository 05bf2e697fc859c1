"""Two-player iterated matrix games viewed as active Markov games.

The state is the previous joint action (or a dedicated initial state), so a
2x2 game has five states. Transitions are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np


class ConfigError(ValueError):
    """Raised for invalid user-facing configuration (unknown game, bad field)."""


@dataclass(frozen=True)
class GameState:
    """Either the initial state (``joint is None``) or the last joint action."""

    joint: Optional[Tuple[int, int]] = None

    @property
    def is_initial(self) -> bool:
        return self.joint is None

    def __repr__(self) -> str:
        return "Initial" if self.joint is None else f"Joint{self.joint}"


INITIAL = GameState()


def joint(a_row: int, a_col: int) -> GameState:
    return GameState((int(a_row), int(a_col)))


class Transition(NamedTuple):
    """One agent's view of a step.

    ``a_i`` is always the owner's action and ``a_j`` the opponent's, so the
    column player's transition has its own action in ``a_i``. ``s`` and
    ``s_next`` are global states in row/column order.
    """

    s: GameState
    a_i: int
    a_j: int
    r_i: float
    s_next: GameState


@dataclass(frozen=True)
class MatrixGame:
    name: str
    n_actions: Tuple[int, int]
    payoff: Dict[Tuple[int, int], Tuple[float, float]]
    action_names: Tuple[Tuple[str, ...], Tuple[str, ...]]

    def __post_init__(self):
        n0, n1 = self.n_actions
        missing = [(a, b) for a in range(n0) for b in range(n1) if (a, b) not in self.payoff]
        if missing:
            raise ConfigError(f"payoff table for {self.name!r} is missing joint actions {missing}")

    @property
    def n_states(self) -> int:
        return 1 + self.n_actions[0] * self.n_actions[1]

    def payoff_matrix(self, player: int) -> np.ndarray:
        """Payoff of ``player`` as an (n_row, n_col) array."""
        n0, n1 = self.n_actions
        out = np.empty((n0, n1))
        for (a, b), r in self.payoff.items():
            out[a, b] = r[player]
        return out

    def reward_range(self, player: int) -> Tuple[float, float]:
        m = self.payoff_matrix(player)
        return float(m.min()), float(m.max())

    def states(self):
        """All states, ordered by their encoding index."""
        n0, n1 = self.n_actions
        return [INITIAL] + [joint(a, b) for a in range(n0) for b in range(n1)]


def _two_by_two(name, actions, table):
    payoff = {(a, b): (float(table[a][b][0]), float(table[a][b][1]))
              for a in range(2) for b in range(2)}
    return MatrixGame(name, (2, 2), payoff, (actions, actions))


# Row player's first listed action is index 0.
GAMES = {
    "ibs": lambda: _two_by_two("ibs", ("B", "S"), [[(2, 1), (0, 0)], [(0, 0), (1, 2)]]),
    "ic": lambda: _two_by_two("ic", ("U", "D"), [[(4, 4), (0, 0)], [(0, 0), (8, 8)]]),
    "imp": lambda: _two_by_two("imp", ("H", "T"), [[(1, -1), (-1, 1)], [(-1, 1), (1, -1)]]),
    "ipd": lambda: _two_by_two("ipd", ("C", "D"), [[(-1, -1), (-3, 0)], [(0, -3), (-2, -2)]]),
}


def make_game(name: str) -> MatrixGame:
    try:
        return GAMES[name]()
    except KeyError:
        raise ConfigError(f"unknown game {name!r}; valid choices: {', '.join(sorted(GAMES))}") from None


def state_index(g: MatrixGame, s: GameState) -> int:
    if s.joint is None:
        return 0
    a, b = s.joint
    n0, n1 = g.n_actions
    if not (0 <= a < n0 and 0 <= b < n1):
        raise ValueError(f"state {s!r} is not a state of {g.name}")
    return 1 + a * n1 + b


def state_from_index(g: MatrixGame, k: int) -> GameState:
    if k == 0:
        return INITIAL
    n1 = g.n_actions[1]
    return joint((k - 1) // n1, (k - 1) % n1)


def encode_state(g: MatrixGame, s: GameState) -> np.ndarray:
    v = np.zeros(g.n_states)
    v[state_index(g, s)] = 1.0
    return v


def step(g: MatrixGame, s: GameState, a_i: int, a_j: int) -> Tuple[Transition, Transition]:
    """Play the joint action (row ``a_i``, column ``a_j``) from state ``s``."""
    n0, n1 = g.n_actions
    if not (0 <= a_i < n0) or not (0 <= a_j < n1):
        raise ValueError(f"actions ({a_i}, {a_j}) out of range for {g.name} with {g.n_actions} actions")
    r_i, r_j = g.payoff[(a_i, a_j)]
    s_next = joint(a_i, a_j)
    return Transition(s, a_i, a_j, r_i, s_next), Transition(s, a_j, a_i, r_j, s_next)
