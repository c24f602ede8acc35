import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bellstat import (
    ChshConfig,
    gain_rates,
    minimize_kl,
    optimal_angles,
    quantum_distribution,
    sample_trials,
    validate_distribution,
)
from bellstat.chsh import chsh_value, optimal_config, sample_indices

PAULI_Z = np.diag([1.0, -1.0])
PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Y = np.array([[0.0, -1j], [1j, 0.0]])


def density_matrix(theta, vis):
    psi = np.zeros(4)
    psi[0], psi[3] = math.cos(theta), math.sin(theta)
    return vis * np.outer(psi, psi) + (1 - vis) * np.eye(4) / 4


def born_table(theta, vis, eta, angles):
    """Independent reference: projectors, Born rule, then per-party loss mapped to -1."""
    rho = density_matrix(theta, vis)
    a_obs = [math.cos(t) * PAULI_Z + math.sin(t) * PAULI_X for t in angles[:2]]
    b_obs = [math.cos(t) * PAULI_Z + math.sin(t) * PAULI_X for t in angles[2:]]
    cond = np.zeros((2, 2, 2, 2))
    for i, j in itertools.product(range(2), range(2)):
        for a, b in itertools.product(range(2), range(2)):
            pa = (np.eye(2) + (1 - 2 * a) * a_obs[i]) / 2
            pb = (np.eye(2) + (1 - 2 * b) * b_obs[j]) / 2
            cond[i, j, a, b] = np.trace(rho @ np.kron(pa, pb)).real
        ideal = cond[i, j].copy()
        # detection: clicks keep the outcome, misses report label 1
        obs = np.zeros((2, 2))
        for a, b in itertools.product(range(2), range(2)):
            for da, db in itertools.product([True, False], repeat=2):
                w = (eta if da else 1 - eta) * (eta if db else 1 - eta)
                obs[a if da else 1, b if db else 1] += w * ideal[a, b]
        cond[i, j] = obs
    return cond


def horodecki_max(theta):
    """Largest CHSH value for the pure state from its correlation matrix."""
    rho = density_matrix(theta, 1.0)
    paulis = [PAULI_X, PAULI_Y, PAULI_Z]
    t = np.array([[np.trace(rho @ np.kron(p, q)).real for q in paulis] for p in paulis])
    ev = np.sort(np.linalg.eigvalsh(t.T @ t))
    return 2 * math.sqrt(ev[-1] + ev[-2])


def test_ideal_chsh_value(chsh, ideal_q):
    assert chsh.expectation(ideal_q) == pytest.approx(2 * math.sqrt(2), abs=1e-9)
    assert chsh_value(ChshConfig(math.pi / 4)) == pytest.approx(2 * math.sqrt(2), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0, math.pi / 2),
    st.floats(0, 1),
    st.floats(0, 1),
    st.tuples(*[st.floats(-math.pi, math.pi)] * 4),
)
def test_distribution_matches_born_rule(theta, eta, vis, angles):
    q = quantum_distribution(ChshConfig(theta, eta, vis, angles))
    assert np.allclose(q.conditional(), born_table(theta, vis, eta, angles), atol=1e-12)
    assert validate_distribution(q, check_no_signaling=True) == []


@settings(max_examples=40, deadline=None)
@given(st.floats(0, math.pi / 2), st.floats(0, 1), st.floats(0, 1), st.tuples(*[st.floats(-math.pi, math.pi)] * 4))
def test_closed_form_value_matches_distribution(chsh, theta, eta, vis, angles):
    cfg = ChshConfig(theta, eta, vis, angles)
    assert chsh_value(cfg) == pytest.approx(chsh.expectation(quantum_distribution(cfg)), abs=1e-10)


def test_ideal_probabilities_nonnegative_on_grid():
    for theta, vis in itertools.product(np.linspace(0, math.pi / 2, 7), np.linspace(0, 1, 5)):
        for angles in itertools.product(np.linspace(-math.pi, math.pi, 5), repeat=4):
            assert born_table(theta, vis, 1.0, angles).min() >= -1e-12


def test_no_detection_is_deterministic(uniform_settings):
    q = quantum_distribution(ChshConfig(math.pi / 4, eta=0.0))
    expect = np.zeros((2, 2, 2, 2))
    expect[:, :, 1, 1] = 0.25
    assert np.allclose(q.probs, expect)
    assert minimize_kl(q, tol=1e-10).strength_bits <= math.log2(1 + 1e-10)


def test_zero_visibility_is_local():
    q = quantum_distribution(ChshConfig(math.pi / 4, vis=0.0))
    assert np.allclose(q.flat, 1 / 16)
    assert minimize_kl(q).strength_bits <= 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        ChshConfig(0.3, eta=1.2)
    with pytest.raises(ValueError):
        ChshConfig(0.3, vis=-0.1)


@pytest.mark.parametrize("theta_deg", [5, 15, 22.5, 30, 33.4, 40, 45, 60, 80])
def test_optimal_value_matches_correlation_matrix(theta_deg):
    theta = math.radians(theta_deg)
    angles, value = optimal_angles(theta)
    assert value == pytest.approx(horodecki_max(theta), abs=1e-6)
    assert chsh_value(ChshConfig(theta, angles=angles)) == pytest.approx(value, abs=1e-12)
    assert all(-math.pi <= a < math.pi for a in angles)


def test_optimal_at_45_is_tsirelson():
    _, value = optimal_angles(math.pi / 4)
    assert value == pytest.approx(2 * math.sqrt(2), abs=1e-6)


def test_product_state_does_not_violate():
    _, value = optimal_angles(0.0)
    assert value == pytest.approx(2.0, abs=1e-6)


def test_optimizer_is_reproducible():
    assert optimal_angles(0.6, 0.9, 0.97) == optimal_angles(0.6, 0.9, 0.97)


def test_lossy_optimum_beats_textbook_angles():
    cfg = ChshConfig(math.radians(30), eta=0.9, vis=0.98)
    _, value = optimal_angles(cfg.theta, cfg.eta, cfg.vis)
    assert value >= chsh_value(cfg) - 1e-12


def test_sampling_is_seeded(ideal_q):
    assert sample_trials(ideal_q, 0, seed=1) == []
    a = sample_indices(ideal_q, 1000, seed=42)
    b = sample_indices(ideal_q, 1000, seed=42)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, sample_indices(ideal_q, 1000, seed=43))
    assert sample_trials(ideal_q, 50, seed=7) == sample_trials(ideal_q, 50, seed=7)


def test_sample_frequencies(ideal_q):
    n = 100_000
    counts = np.bincount(sample_indices(ideal_q, n, seed=11), minlength=16)
    se = np.sqrt(n * ideal_q.flat * (1 - ideal_q.flat))
    assert np.all(np.abs(counts - n * ideal_q.flat) <= 5 * se)


def test_strength_monotone_in_visibility_and_efficiency():
    def strength(eta, vis):
        return minimize_kl(quantum_distribution(optimal_config(math.pi / 4, eta, vis)), tol=1e-10).strength_bits

    by_vis = [strength(1.0, v) for v in np.linspace(0.7, 1.0, 7)]
    by_eta = [strength(e, 1.0) for e in np.linspace(0.8, 1.0, 5)]
    assert all(b >= a - 1e-9 for a, b in zip(by_vis, by_vis[1:]))
    assert all(b >= a - 1e-9 for a, b in zip(by_eta, by_eta[1:]))
    assert by_vis[0] <= 1e-8  # V = 0.7 < 1/sqrt(2) admits no violation


@pytest.mark.parametrize("eta,vis", [(1.0, 1.0), (0.98, 1.0), (1.0, 0.98), (0.97, 0.97)])
def test_rate_ordering_near_ideal_corner(eta, vis, chsh):
    g = gain_rates(quantum_distribution(optimal_config(math.pi / 4, eta, vis)), chsh, tol=1e-10)
    assert g.g_sd >= g.strength >= g.g_mart
