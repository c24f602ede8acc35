import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bellstat import (
    JointDistribution,
    Scenario,
    SettingDistribution,
    conditional_uniform,
    enumerate_strategies,
    epsilon_bound,
    kl_divergence,
    make_pbr,
    minimize_kl,
    strategy_distribution,
    validate_distribution,
)
from bellstat.lr import InfeasibleError, StrategyCountError, _kl_bits, strategy_matrix

from conftest import random_conditional_q, random_lr_q
from oracles import strength_oracle


@pytest.mark.parametrize("shape,count", [((2, 2, 2, 2), 16), ((3, 3, 2, 2), 64), ((1, 1, 1, 1), 1), ((2, 1, 3, 2), 18)])
def test_strategy_counts(shape, count):
    lams = enumerate_strategies(Scenario(*shape))
    assert len(lams) == count
    assert len(set(lams)) == count


def test_strategy_order_is_lexicographic():
    lams = enumerate_strategies(Scenario.chsh())
    keys = [(lam.alice_map, lam.bob_map) for lam in lams]
    assert keys == sorted(keys)
    assert keys[0] == ((0, 0), (0, 0))
    assert keys[1] == ((0, 0), (0, 1))


def test_strategy_cap():
    with pytest.raises(StrategyCountError, match="65536"):
        enumerate_strategies(Scenario(8, 8, 2, 2), cap=1000)


def test_all_zero_strategy(uniform_settings):
    lam = enumerate_strategies(Scenario.chsh())[0]
    q = strategy_distribution(lam, uniform_settings)
    expect = np.zeros((2, 2, 2, 2))
    expect[:, :, 0, 0] = 0.25
    assert np.array_equal(q.probs, expect)
    assert validate_distribution(q, check_no_signaling=True) == []


def test_kl_examples(chsh_scenario, uniform_settings, ideal_q):
    assert kl_divergence(ideal_q, ideal_q) == 0.0
    # two-cell toy: 0.5 log2(0.5/0.25) + 0.5 log2(0.5/0.75)
    assert _kl_bits(np.array([0.5, 0.5]), np.array([0.25, 0.75])) == pytest.approx(0.20752, abs=5e-6)
    lam = strategy_distribution(enumerate_strategies(chsh_scenario)[0], uniform_settings)
    assert kl_divergence(ideal_q, lam) == math.inf
    assert kl_divergence(lam, ideal_q) < math.inf


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    sc, sd = Scenario.chsh(), SettingDistribution.uniform(Scenario.chsh())
    q, p = random_conditional_q(rng, sc, sd), random_conditional_q(rng, sc, sd)
    assert kl_divergence(q, p) >= 0
    assert kl_divergence(q, q) == 0


def test_white_noise_has_zero_strength(chsh_scenario, uniform_settings):
    u = conditional_uniform(chsh_scenario, uniform_settings)
    res = minimize_kl(u)
    assert res.strength_bits <= 1e-12
    assert np.allclose(res.mixture.induced.flat, u.flat, atol=1e-9)
    assert res.epsilon <= 1e-8


def test_vertices_have_zero_strength(chsh_scenario, uniform_settings):
    for lam in enumerate_strategies(chsh_scenario):
        res = minimize_kl(strategy_distribution(lam, uniform_settings), tol=1e-10)
        # the EM iterate is within log2(1 + eps) of the optimum
        assert res.strength_bits <= math.log2(1 + 1e-10) + 1e-15
        assert res.converged


def test_ideal_chsh_strength_against_oracle(ideal_q):
    res = minimize_kl(ideal_q, tol=1e-10)
    oracle, _ = strength_oracle(ideal_q.flat, ideal_q.setting_dist.probs)
    assert res.strength_bits == pytest.approx(0.0463, abs=5e-4)
    assert res.strength_bits == pytest.approx(oracle, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_random_targets_against_oracle(seed, chsh_scenario):
    rng = np.random.default_rng(100 + seed)
    sd = SettingDistribution(rng.dirichlet(np.full(4, 5.0)).reshape(2, 2))
    q = random_conditional_q(rng, chsh_scenario, sd, alpha=0.7)
    res = minimize_kl(q, tol=1e-10)
    oracle, _ = strength_oracle(q.flat, sd.probs)
    assert res.strength_bits == pytest.approx(oracle, abs=1e-6)


def test_zero_probability_setting_pair_is_infeasible(chsh_scenario):
    sd = SettingDistribution(np.array([[0.5, 0.5], [0.0, 0.0]]))
    p = np.zeros((2, 2, 2, 2))
    p[0, 0, 0, 0] = p[0, 1, 0, 0] = 0.4
    p[1, 0, 0, 0] = 0.2
    with pytest.raises(InfeasibleError):
        minimize_kl(JointDistribution(chsh_scenario, sd, p))


def test_epsilon_zero_for_lr_target(chsh_scenario, uniform_settings):
    rng = np.random.default_rng(3)
    q = random_lr_q(rng, chsh_scenario, uniform_settings)
    assert epsilon_bound(q, q) == 0.0


def test_epsilon_at_minimizer(ideal_q):
    res = minimize_kl(ideal_q, tol=1e-10)
    assert epsilon_bound(ideal_q, res.mixture.induced) <= 1e-10


def test_epsilon_against_u_by_enumeration(chsh_scenario, uniform_settings, ideal_q):
    u = conditional_uniform(chsh_scenario, uniform_settings)
    brute = max(
        sum(pl * q / pu for pl, q, pu in zip(strategy_distribution(lam, uniform_settings).flat, ideal_q.flat, u.flat))
        for lam in enumerate_strategies(chsh_scenario)
    )
    assert epsilon_bound(ideal_q, u) == pytest.approx(brute - 1, abs=1e-12)
    assert brute > 1


def test_make_pbr_of_lr_target_is_one(chsh_scenario, uniform_settings):
    q = random_lr_q(np.random.default_rng(5), chsh_scenario, uniform_settings)
    r = make_pbr(q, q, epsilon_bound(q, q))
    assert np.allclose(r.ratios, 1.0)


def test_pbr_expected_log_increment_is_strength(ideal_q, strategies):
    res = minimize_kl(ideal_q, tol=1e-12)
    r = make_pbr(ideal_q, res.mixture.induced, res.epsilon)
    lbar = float(np.sum(ideal_q.flat * np.log2(r.ratios.reshape(-1))))
    assert lbar == pytest.approx(res.strength_bits, abs=1e-6)
    assert np.max(strategies @ r.ratios.reshape(-1)) <= 1 + 1e-9


def test_make_pbr_rejects_zero_denominator(chsh_scenario, uniform_settings, ideal_q):
    lam = strategy_distribution(enumerate_strategies(chsh_scenario)[0], uniform_settings)
    with pytest.raises(ZeroDivisionError):
        make_pbr(ideal_q, lam, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 3.0))
def test_em_step_never_increases_divergence(seed, alpha):
    rng = np.random.default_rng(seed)
    sc, sd = Scenario.chsh(), SettingDistribution.uniform(Scenario.chsh())
    q = random_conditional_q(rng, sc, sd, alpha).flat
    m = strategy_matrix(sc, sd)
    w = np.full(16, 1 / 16)
    prev = _kl_bits(q, w @ m)
    for _ in range(60):
        p = w @ m
        w = w * (m @ np.where(q > 0, q / p, 0.0))
        w /= w.sum()
        cur = _kl_bits(q, w @ m)
        assert cur <= prev + 1e-13
        prev = cur


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kkt_certificate_and_bell_inequality(seed):
    rng = np.random.default_rng(seed)
    sc, sd = Scenario.chsh(), SettingDistribution.uniform(Scenario.chsh())
    q = random_conditional_q(rng, sc, sd)
    tol = 1e-9
    res = minimize_kl(q, tol=tol)
    m = strategy_matrix(sc, sd)
    r = m @ (q.flat / res.mixture.induced.flat)
    assert np.all(r <= 1 + tol)
    support = res.mixture.weights > 1e-3
    assert np.all(np.abs(r[support] - 1) <= 1e-6)
    # any LR model sees expectation <= 1 for q / p_LR
    for w in rng.dirichlet(np.ones(16), size=5):
        p = w @ m
        assert float(np.sum(p * q.flat / res.mixture.induced.flat)) <= 1 + tol


def sandwich_gaps(q, qp, strategies_tol=1e-10):
    """(S_q - lbar, lbar - (S_q - D(q|q'))) for one pair; both should be >= 0."""
    s_q = minimize_kl(q, tol=strategies_tol).strength_bits
    lr_p = minimize_kl(qp, tol=strategies_tol).mixture.induced
    lbar = float(np.sum(q.flat * np.log2(qp.flat / lr_p.flat)))
    return s_q - lbar, lbar - (s_q - kl_divergence(q, qp))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sandwich_bound(seed):
    rng = np.random.default_rng(seed)
    sc, sd = Scenario.chsh(), SettingDistribution.uniform(Scenario.chsh())
    q = random_conditional_q(rng, sc, sd)
    qp = random_conditional_q(rng, sc, sd)
    upper, lower = sandwich_gaps(q, qp)
    assert upper >= -1e-7
    assert lower >= -1e-7
