import numpy as np
import pytest
from hypothesis import given, strategies as st

from further.envs import (GAMES, INITIAL, ConfigError, encode_state, joint, make_game, state_from_index,
                          state_index, step)


def test_ibs_payoffs():
    g = make_game("ibs")
    assert g.payoff[(0, 0)] == (2, 1)
    assert g.payoff[(1, 1)] == (1, 2)
    assert g.payoff[(0, 1)] == (0, 0) and g.payoff[(1, 0)] == (0, 0)


def test_ic_payoffs():
    g = make_game("ic")
    assert g.payoff[(0, 0)] == (4, 4)
    assert g.payoff[(1, 1)] == (8, 8)
    assert g.payoff[(0, 1)] == (0, 0) and g.payoff[(1, 0)] == (0, 0)


def test_ipd_payoffs():
    g = make_game("ipd")
    assert g.payoff[(0, 0)] == (-1, -1)
    assert g.payoff[(1, 0)] == (0, -3)
    assert g.payoff[(0, 1)] == (-3, 0)
    assert g.payoff[(1, 1)] == (-2, -2)


def test_unknown_game_names_choices():
    with pytest.raises(ConfigError, match="ibs, ic, imp, ipd"):
        make_game("chess")


def test_imp_heads():
    g = make_game("imp")
    ti, tj = step(g, joint(1, 0), 0, 0)
    assert ti.r_i == 1 and tj.r_i == -1


def test_ibs_mismatch_from_initial():
    ti, tj = step(make_game("ibs"), INITIAL, 0, 1)
    assert (ti.r_i, tj.r_i) == (0, 0)
    assert ti.s_next == joint(0, 1) == tj.s_next


def test_ic_defect_pair():
    ti, tj = step(make_game("ic"), joint(0, 0), 1, 1)
    assert ti.r_i == tj.r_i == 8


def test_column_view_swaps_actions():
    ti, tj = step(make_game("ibs"), INITIAL, 0, 1)
    assert (ti.a_i, ti.a_j) == (0, 1)
    assert (tj.a_i, tj.a_j) == (1, 0)
    assert tj.s == ti.s


def test_out_of_range_action():
    with pytest.raises(ValueError):
        step(make_game("ibs"), INITIAL, 2, 0)


def test_encoding_indices():
    g = make_game("ibs")
    assert encode_state(g, INITIAL).tolist() == [1, 0, 0, 0, 0]
    assert encode_state(g, joint(1, 0)).tolist() == [0, 0, 0, 1, 0]
    for s in g.states():
        assert encode_state(g, s).sum() == 1


def test_encoding_injective_and_inverse():
    g = make_game("ipd")
    codes = {tuple(encode_state(g, s)) for s in g.states()}
    assert len(codes) == g.n_states == 5
    for k in range(g.n_states):
        assert state_index(g, state_from_index(g, k)) == k


game_names = st.sampled_from(sorted(GAMES))
acts = st.integers(0, 1)


@given(game_names, st.integers(0, 4), acts, acts)
def test_step_is_deterministic(name, k, a, b):
    g = make_game(name)
    s = state_from_index(g, k)
    assert step(g, s, a, b) == step(g, s, a, b)
    ti, _ = step(g, s, a, b)
    assert ti.s_next == joint(a, b)


@given(acts, acts)
def test_imp_zero_sum(a, b):
    ti, tj = step(make_game("imp"), INITIAL, a, b)
    assert ti.r_i + tj.r_i == 0


@given(acts, acts)
def test_ic_symmetric(a, b):
    ti, tj = step(make_game("ic"), INITIAL, a, b)
    assert ti.r_i == tj.r_i


def test_reward_range():
    assert make_game("ipd").reward_range(0) == (-3.0, 0.0)
    assert np.array_equal(make_game("ibs").payoff_matrix(1), [[1, 0], [0, 2]])
