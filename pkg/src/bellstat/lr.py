"""The local-realistic polytope: deterministic strategies, KL projection, PBR tables."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scenario import JointDistribution, Scenario, SettingDistribution, StructuralError

log = logging.getLogger(__name__)

STRATEGY_CAP = 10**6


class StrategyCountError(ValueError):
    pass


class InfeasibleError(ValueError):
    """The target puts mass where every LR distribution is zero."""


@dataclass(frozen=True)
class DeterministicStrategy:
    """Outcome label per Alice setting and per Bob setting."""

    alice_map: tuple[int, ...]
    bob_map: tuple[int, ...]


def strategy_count(scenario: Scenario) -> int:
    return scenario.alice_outcomes**scenario.alice_settings * scenario.bob_outcomes**scenario.bob_settings


def enumerate_strategies(scenario: Scenario, cap: int = STRATEGY_CAP) -> list[DeterministicStrategy]:
    """All deterministic strategies, lexicographic in ``(alice_map, bob_map)``."""
    count = strategy_count(scenario)
    if count > cap:
        raise StrategyCountError(f"scenario has {count} deterministic strategies, above the cap of {cap}")
    alice = itertools.product(range(scenario.alice_outcomes), repeat=scenario.alice_settings)
    bob = list(itertools.product(range(scenario.bob_outcomes), repeat=scenario.bob_settings))
    return [DeterministicStrategy(a, b) for a in alice for b in bob]


def _strategy_indicator(scenario: Scenario, lam: DeterministicStrategy) -> np.ndarray:
    nA, nB, kA, kB = scenario.shape
    if len(lam.alice_map) != nA or len(lam.bob_map) != nB:
        raise StructuralError("strategy does not match scenario settings")
    if any(not 0 <= a < kA for a in lam.alice_map) or any(not 0 <= b < kB for b in lam.bob_map):
        raise StructuralError("strategy outcome label out of range")
    ind = np.zeros(scenario.shape)
    for i in range(nA):
        for j in range(nB):
            ind[i, j, lam.alice_map[i], lam.bob_map[j]] = 1.0
    return ind


def strategy_distribution(lam: DeterministicStrategy, sd: SettingDistribution, scenario: Scenario | None = None) -> JointDistribution:
    """p_lambda: mass p_ij on the single outcome pair that ``lam`` fixes for settings (i, j).

    Without an explicit scenario the parties are taken to have two outcomes.
    """
    if scenario is None:
        nA, nB = sd.probs.shape
        scenario = Scenario(nA, nB, 2, 2)
    ind = _strategy_indicator(scenario, lam)
    return JointDistribution(scenario, sd, ind * sd.probs[:, :, None, None])


@lru_cache(maxsize=32)
def _indicator_matrix(scenario: Scenario) -> np.ndarray:
    lams = enumerate_strategies(scenario)
    mat = np.stack([_strategy_indicator(scenario, lam).reshape(-1) for lam in lams])
    mat.setflags(write=False)
    return mat


def strategy_matrix(scenario: Scenario, sd: SettingDistribution) -> np.ndarray:
    """Row lambda holds p_lambda,x over the flat combination index."""
    return _indicator_matrix(scenario) * np.repeat(sd.probs.reshape(-1), scenario.alice_outcomes * scenario.bob_outcomes)


@dataclass(frozen=True, eq=False)
class LrMixture:
    weights: np.ndarray
    induced: JointDistribution


@dataclass(frozen=True, eq=False)
class StrengthResult:
    mixture: LrMixture
    strength_bits: float
    epsilon: float
    iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class RatioTable:
    """Nonnegative ratios R(x) whose expectation is at most 1 under every LR model."""

    ratios: np.ndarray

    def max_lr_expectation(self, scenario: Scenario, sd: SettingDistribution) -> float:
        return float(np.max(strategy_matrix(scenario, sd) @ self.ratios.reshape(-1)))

    @classmethod
    def ones(cls, scenario: Scenario) -> "RatioTable":
        return cls(np.ones(scenario.shape))


def _check_pair(q: JointDistribution, p: JointDistribution):
    if q.scenario != p.scenario:
        raise StructuralError("distributions belong to different scenarios")


def kl_divergence(q: JointDistribution, p: JointDistribution) -> float:
    """D(q|p) in bits; ``inf`` when q has mass where p has none."""
    _check_pair(q, p)
    return _kl_bits(q.flat, p.flat)


def _kl_bits(q: np.ndarray, p: np.ndarray) -> float:
    m = q > 0
    if np.any(p[m] <= 0):
        return float("inf")
    return float(np.sum(q[m] * np.log2(q[m] / p[m])))


def _lr_expectations(mat: np.ndarray, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """sum_x p_lambda,x q_x / p_x for every lambda, with 0/0 terms dropped."""
    m = q > 0
    ratio = np.zeros_like(q)
    ratio[m] = q[m] / p[m]
    return mat @ ratio


def epsilon_bound(q: JointDistribution, p: JointDistribution, cap: int = STRATEGY_CAP) -> float:
    """max(0, max_lambda <q/p>_{p_lambda} - 1), exhaustive over strategies."""
    _check_pair(q, p)
    if strategy_count(q.scenario) > cap:
        raise StrategyCountError(f"{strategy_count(q.scenario)} strategies exceed cap {cap}")
    qf, pf = q.flat, p.flat
    if np.any(pf[qf > 0] <= 0):
        raise ZeroDivisionError("p vanishes where q has mass")
    mat = strategy_matrix(q.scenario, q.setting_dist)
    return max(0.0, float(np.max(_lr_expectations(mat, qf, pf))) - 1.0)


def minimize_kl(q: JointDistribution, tol: float = 1e-8, max_iter: int = 10**6) -> StrengthResult:
    """Project ``q`` onto the LR polytope in KL divergence with the EM update.

    The weights start uniform over all strategies and are multiplied by
    ``r_lambda = sum_x q_x p_lambda,x / p_x`` each step. ``max(r) - 1`` is the
    epsilon correction of the current iterate, so it doubles as the
    stopping criterion.
    """
    mat = strategy_matrix(q.scenario, q.setting_dist)
    qf = q.flat
    sp = q.setting_dist.probs.reshape(-1)
    if np.any(q.probs.sum(axis=(2, 3)).reshape(-1)[sp == 0] > 0):
        raise InfeasibleError("q puts mass on a setting pair with zero setting probability")
    support = qf > 0
    qs = qf[support]
    ms = mat[:, support]
    w = np.full(mat.shape[0], 1.0 / mat.shape[0])
    it = 0
    eps = np.inf
    while True:
        ps = w @ ms
        r = ms @ (qs / ps)
        eps = float(r.max()) - 1.0
        if eps <= tol or it >= max_iter:
            break
        w = w * r
        w /= w.sum()
        it += 1
    converged = eps <= tol
    if not converged:
        log.warning("EM stopped at iteration cap %d with epsilon %.3g", max_iter, eps)
    induced = q.with_probs((w @ mat).reshape(q.scenario.shape))
    strength = _kl_bits(qf, induced.flat)
    return StrengthResult(LrMixture(w, induced), max(strength, 0.0), max(eps, 0.0), it, converged)


def make_pbr(q: JointDistribution, p: JointDistribution, epsilon: float) -> RatioTable:
    """R(x) = q_x / (p_x (1 + epsilon)); zero where q vanishes."""
    _check_pair(q, p)
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    qf, pf = q.flat, p.flat
    m = qf > 0
    if np.any(pf[m] <= 0):
        raise ZeroDivisionError("p vanishes where q has mass")
    r = np.zeros_like(qf)
    r[m] = qf[m] / (pf[m] * (1.0 + epsilon))
    return RatioTable(r.reshape(q.scenario.shape))
