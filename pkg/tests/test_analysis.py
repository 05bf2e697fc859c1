import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from further.analysis import (ChainUpdateSpec, JointChain, NonConvergenceError, OpponentSpec, q_init_grid,
                              build_joint_chain, check_init_independence, deviation_gain, exact_avg_reward,
                              point_mass, policy_iteration_sweep, recurrent_class_count, spectral_gap,
                              stationary_periodic, stationary_policies, total_variation)
from further.envs import ConfigError, make_game

IBS, IPD, IMP, IC = (make_game(n) for n in ("ibs", "ipd", "imp", "ic"))

# 10^6-step pure-python rollout (alpha .5, gamma .9, eps .05, q0 = (0, 1) in every state), burn-in 5*10^5
IBS_B_VS_Q_FAVOURING_S = 1.949784


def toy_chain(P, eps=0.1):
    P = sparse.csr_matrix(np.asarray(P, dtype=np.float64))
    n = P.shape[0]
    return JointChain(P, [(s, ()) for s in range(n)], n, 1, eps)


# -- stationary policies and average reward -------------------------------------

def test_policy_enumeration_complete():
    pols = stationary_policies(IBS)
    assert pols.shape == (32, 5)
    assert len({tuple(p) for p in pols}) == 32


def test_imp_uniform_vs_uniform_is_zero():
    v = exact_avg_reward(IMP, np.full((5, 2), 0.5), OpponentSpec.scripted([0.5, 0.5]), n_rollouts=16)
    assert abs(v) < 0.02


def test_ibs_both_always_b():
    assert exact_avg_reward(IBS, np.zeros(5, int), OpponentSpec.constant(IBS, 0)) == 2.0


def test_ibs_always_b_vs_q_learner_matches_long_rollout():
    spec = OpponentSpec(q_init=np.array([0.0, 1.0]))
    v = exact_avg_reward(IBS, np.zeros(5, int), spec, horizon=10_000, n_rollouts=16, seed=3)
    assert abs(v - IBS_B_VS_Q_FAVOURING_S) < 0.005


def test_short_horizon_rejected():
    with pytest.raises(ValueError):
        exact_avg_reward(IBS, np.zeros(5, int), OpponentSpec.constant(IBS, 0), horizon=999)


def test_doubled_horizon_changes_little():
    spec = OpponentSpec(q_init=np.array([-2.0, 1.0]))
    pol = np.array([0, 1, 0, 1, 1])
    a = exact_avg_reward(IPD, pol, spec, horizon=10_000, n_rollouts=16, seed=1)
    b = exact_avg_reward(IPD, pol, spec, horizon=20_000, n_rollouts=16, seed=2)
    assert abs(a - b) < 0.02


def test_greedy_opponent_single_rollout_is_deterministic():
    spec = OpponentSpec(q_init=np.array([1.0, 0.0]), epsilon=0.0)
    vals = {exact_avg_reward(IPD, np.array([1, 0, 1, 0, 1]), spec, seed=s) for s in range(3)}
    assert len(vals) == 1


# -- sweep ---------------------------------------------------------------------------

def test_singleton_grid_scripted_matches_direct_maximum():
    spec = OpponentSpec.scripted([0.3, 0.7])
    res = policy_iteration_sweep(IBS, "glie", [np.zeros(2)], horizon=10_000, n_rollouts=4, opponent=spec)
    direct = max(exact_avg_reward(IBS, p, spec, n_rollouts=4) for p in stationary_policies(IBS))
    assert res.best_rho.shape == (1,)
    # best achievable is always S (1 * 0.7) against this opponent
    assert abs(res.best_rho[0] - direct) < 0.03
    assert abs(direct - 0.7) < 0.03


def test_singleton_grid_constant_exact():
    spec = OpponentSpec.constant(IBS, 1)
    res = policy_iteration_sweep(IBS, "greedy", [np.zeros(2)], opponent=spec)
    assert res.best_rho[0] == 1.0 == max(exact_avg_reward(IBS, p, spec) for p in stationary_policies(IBS))


def test_sweep_rejects_bad_mode_and_empty_grid():
    with pytest.raises(ValueError):
        policy_iteration_sweep(IPD, "lazy", [np.zeros(2)])
    with pytest.raises(ValueError):
        policy_iteration_sweep(IPD, "greedy", [])


def test_q_init_grid_shape():
    g = q_init_grid(-3, 3, 9)
    assert len(g) == 81 and g[0].tolist() == [-3, -3] and g[-1].tolist() == [3, 3]


def test_ipd_sweep_small_grid_dichotomy():
    grid = q_init_grid(-30, 30, 3)
    greedy = policy_iteration_sweep(IPD, "greedy", grid)
    glie = policy_iteration_sweep(IPD, "glie", grid, n_rollouts=2)
    assert greedy.value_range > 0.5
    assert np.any(np.abs(greedy.best_rho + 2.0) < 0.1)
    assert glie.value_range < 0.2


# -- chains -------------------------------------------------------------------------

def test_single_policy_node_is_game_chain():
    ch = build_joint_chain(IBS, ChainUpdateSpec(levels=(0.0,)), np.array([0, 1, 0, 1, 0]), 0.1)
    assert ch.n_nodes == 5
    P = ch.P.toarray()
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    # the column player is greedy on a flat q-row: action 0
    assert P[0, 1] == 1.0 and P[1, 3] == 1.0


@pytest.mark.parametrize("stateful", [False, True])
def test_chain_rows_stochastic(stateful):
    levels = (-10.0, 0.0) if stateful else (-10.0, -5.0, 0.0)
    ch = build_joint_chain(IPD, ChainUpdateSpec(levels=levels, stateful=stateful), np.zeros(5, int), 0.05)
    assert ch.n_nodes == 5 * ch.n_configs
    assert np.allclose(np.asarray(ch.P.sum(axis=1)).ravel(), 1.0, atol=1e-12)


def test_epsilon_one_uniform_over_neighbours():
    ch = build_joint_chain(IPD, ChainUpdateSpec(), np.zeros(5, int), 1.0)
    for s, c in [(0, (0, 0)), (2, (1, 1)), (4, (2, 0))]:
        row = ch.node_index(s, c)
        m = ch.policy_marginal(row).reshape(3, 3)
        nb = [(c[0] + d, c[1]) for d in (-1, 1) if 0 <= c[0] + d < 3] + \
             [(c[0], c[1] + d) for d in (-1, 1) if 0 <= c[1] + d < 3]
        expect = np.zeros((3, 3))
        for a, b in nb:
            expect[a, b] = 1.0 / len(nb)
        assert np.allclose(m, expect, atol=1e-15)


def test_budget_exceeded_is_config_error():
    with pytest.raises(ConfigError):
        build_joint_chain(IPD, ChainUpdateSpec(stateful=True), np.zeros(5, int), 0.1)


def scc_oracle(P):
    """Closed communicating classes by reachability sets (transitive closure)."""
    A = (np.asarray(P) > 0).astype(int)
    n = len(A)
    R = ((np.eye(n, dtype=int) + A) > 0).astype(int)
    for _ in range(int(np.ceil(np.log2(n))) + 1):
        R = ((R @ R) > 0).astype(int)
    classes = {tuple(np.flatnonzero(R[i] & R[:, i])) for i in range(n)}
    return sum(set(np.flatnonzero(R[c[0]])) <= set(c) for c in classes)


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_perturbed_ipd_chain_single_recurrent_class(eps):
    ch = build_joint_chain(IPD, ChainUpdateSpec(), np.zeros(5, int), eps)
    assert recurrent_class_count(ch.P) == 1 == scc_oracle(ch.P.toarray())


def test_greedy_ipd_chain_is_multichain():
    ch = build_joint_chain(IPD, ChainUpdateSpec(), np.zeros(5, int), 0.0)
    n = recurrent_class_count(ch.P)
    assert n > 1 and n == scc_oracle(ch.P.toarray())


# -- periodic distributions ---------------------------------------------------------

def test_two_node_symmetric():
    d = stationary_periodic(toy_chain([[0.5, 0.5], [0.5, 0.5]]), 1, point_mass(2, 0))
    assert np.allclose(d.phases[0], [0.5, 0.5], atol=1e-12)


def test_two_cycle_period_two():
    cyc = toy_chain([[0, 1], [1, 0]])
    d = stationary_periodic(cyc, 2, point_mass(2, 0))
    assert d.phases.tolist() == [[1.0, 0.0], [0.0, 1.0]]
    with pytest.raises(NonConvergenceError) as exc:
        stationary_periodic(cyc, 1, point_mass(2, 0), max_iter=1000)
    assert exc.value.spectral_gap == pytest.approx(0.0, abs=1e-12)


def test_period_must_be_positive():
    with pytest.raises(ValueError):
        stationary_periodic(toy_chain([[1.0]]), 0)


def test_random_ergodic_chain_matches_eigenvector():
    rng = np.random.default_rng(0)
    P = rng.random((50, 50))
    P /= P.sum(axis=1, keepdims=True)
    d = stationary_periodic(toy_chain(P), 1, point_mass(50, 7))
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    pi /= pi.sum()
    assert np.max(np.abs(d.phases[0] - pi)) < 1e-8
    assert np.abs(d.phases[0] @ P - d.phases[0]).sum() < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_stationary_balance_property(seed, n):
    rng = np.random.default_rng(seed)
    P = rng.random((n, n)) + 0.05
    P /= P.sum(axis=1, keepdims=True)
    d = stationary_periodic(toy_chain(P), 1, rng.dirichlet(np.ones(n)))
    assert abs(d.phases[0].sum() - 1.0) < 1e-12
    assert np.abs(d.phases[0] @ P - d.phases[0]).sum() < 1e-8


def test_spectral_gap_examples():
    assert spectral_gap(sparse.csr_matrix([[0.5, 0.5], [0.5, 0.5]])) == pytest.approx(1.0)
    assert spectral_gap(sparse.csr_matrix([[0.9, 0.1], [0.1, 0.9]])) == pytest.approx(0.2)


# -- independence ---------------------------------------------------------------------

def test_ergodic_toy_chain_independent():
    ch = toy_chain([[0.2, 0.8], [0.6, 0.4]])
    rep = check_init_independence(ch, 1, [point_mass(2, 0), point_mass(2, 1)])
    assert rep.passed and rep.rows[0].max_tv < 1e-6


def test_identical_inits_zero_distance():
    ch = toy_chain([[0.2, 0.8], [0.6, 0.4]])
    rep = check_init_independence(ch, 1, [point_mass(2, 0), point_mass(2, 0)])
    assert rep.rows[0].max_tv == 0.0


def test_needs_two_inits():
    with pytest.raises(ValueError):
        check_init_independence(toy_chain([[1.0]]), 1, [point_mass(1, 0)])


def test_two_absorbing_classes_flagged():
    ch = toy_chain([[1, 0, 0], [0.5, 0, 0.5], [0, 0, 1]], eps=0.0)
    rep = check_init_independence(ch, 1, [point_mass(3, 0), point_mass(3, 2)])
    assert not rep.passed and rep.rows[0].max_tv == 1.0


def test_greedy_ipd_chain_depends_on_init():
    upd = ChainUpdateSpec()
    ch = build_joint_chain(IPD, upd, np.zeros(5, int), 0.0)
    inits = [point_mass(ch.n_nodes, 0), point_mass(ch.n_nodes, ch.n_configs - 1)]
    rep = check_init_independence(ch, 1, inits, max_iter=10_000)
    assert not rep.passed


def test_perturbed_ipd_chain_factory_passes():
    upd = ChainUpdateSpec()

    def factory(eps):
        return build_joint_chain(IPD, upd, np.zeros(5, int), eps)
    n = factory(0.1).n_nodes
    inits = [point_mass(n, 0), point_mass(n, 8), np.full(n, 1.0 / n)]
    rep = check_init_independence(factory, 1, inits, epsilons=(0.1, 0.03))
    assert rep.passed and [r.epsilon for r in rep.rows] == [0.1, 0.03]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_total_variation_metric(seed):
    rng = np.random.default_rng(seed)
    p, q, r = rng.dirichlet(np.ones(6), size=3)
    assert 0.0 <= total_variation(p, q) <= 1.0
    assert total_variation(p, q) == total_variation(q, p)
    assert total_variation(p, r) <= total_variation(p, q) + total_variation(q, r) + 1e-15


# -- deviation ---------------------------------------------------------------------------

def test_ibs_bb_no_gain():
    gains = deviation_gain(IBS, (np.zeros(5, int), np.zeros(5, int)))
    assert gains == {0: 0.0, 1: 0.0}


def test_ic_uu_is_nash():
    gains = deviation_gain(IC, (np.zeros(5, int), np.zeros(5, int)))
    assert gains == {0: 0.0, 1: 0.0}


def test_ibs_mismatch_has_gain():
    gains = deviation_gain(IBS, (np.zeros(5, int), np.ones(5, int)))
    assert gains[0] == 1.0 and gains[1] == 1.0


@pytest.mark.parametrize("ai,aj", list(itertools.product((0, 1), repeat=2)))
def test_imp_pure_profiles_have_gain(ai, aj):
    gains = deviation_gain(IMP, (np.full(5, ai), np.full(5, aj)))
    assert max(gains.values()) == 2.0
    assert min(gains.values()) == 0.0


def test_deviation_against_learner_reports_row_only():
    spec = OpponentSpec(q_init=np.array([0.0, 1.0]))
    gains = deviation_gain(IBS, (np.zeros(5, int), None), spec, n_rollouts=4)
    assert set(gains) == {0} and gains[0] >= -0.02
