"""CHSH simulation for cos(theta)|00> + sin(theta)|11> with loss and Werner noise.

Measurements lie in the x-z plane: angle ``alpha`` means the observable
``cos(alpha) Z + sin(alpha) X``. Visibility ``V`` mixes in white noise,
``rho = V |psi><psi| + (1 - V) I/4``, which scales every correlator and
marginal by ``V``. Each party detects independently with probability
``eta``; a missed detection is recorded as outcome -1 (label 1).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .scenario import JointDistribution, Scenario, SettingDistribution, TrialRecord, indices_to_trials

CHSH_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0]])
START_GRID = np.linspace(0.0, 2.0 * np.pi, 5, endpoint=False)
N_LOCAL_STARTS = 8


@dataclass(frozen=True)
class ChshConfig:
    theta: float
    eta: float = 1.0
    vis: float = 1.0
    angles: tuple[float, float, float, float] = (0.0, np.pi / 2, np.pi / 4, -np.pi / 4)
    setting_dist: SettingDistribution = field(default_factory=lambda: SettingDistribution.uniform(Scenario.chsh()))

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.vis <= 1.0:
            raise ValueError(f"visibility must lie in [0, 1], got {self.vis}")
        if len(self.angles) != 4:
            raise ValueError("angles are (alpha1, alpha2, beta1, beta2)")


def _ideal_moments(theta, vis, alpha, beta):
    """Marginals <A>, <B> and correlator E for ideal detectors (broadcasting)."""
    s2, c2 = np.sin(2 * theta), np.cos(2 * theta)
    ea = vis * c2 * np.cos(alpha)
    eb = vis * c2 * np.cos(beta)
    e = vis * (np.cos(alpha) * np.cos(beta) + s2 * np.sin(alpha) * np.sin(beta))
    return ea, eb, e


def quantum_distribution(cfg: ChshConfig) -> JointDistribution:
    scen = Scenario.chsh()
    a1, a2, b1, b2 = cfg.angles
    alphas, betas = np.array([a1, a2]), np.array([b1, b2])
    vals = np.array([1.0, -1.0])  # label -> value
    eta = cfg.eta
    cond = np.zeros(scen.shape)
    for i, j in itertools.product(range(2), range(2)):
        ea, eb, e = _ideal_moments(cfg.theta, cfg.vis, alphas[i], betas[j])
        ideal = 0.25 * (1 + vals[:, None] * ea + vals[None, :] * eb + np.outer(vals, vals) * e)
        pa = 0.5 * (1 + vals * ea)
        pb = 0.5 * (1 + vals * eb)
        obs = eta * eta * ideal
        obs[:, 1] += eta * (1 - eta) * pa
        obs[1, :] += (1 - eta) * eta * pb
        obs[1, 1] += (1 - eta) ** 2
        cond[i, j] = obs
    cond = np.clip(cond, 0.0, None)  # round-off at the boundary of the state space
    cond /= cond.sum(axis=(2, 3), keepdims=True)
    return JointDistribution(scen, cfg.setting_dist, cond * cfg.setting_dist.probs[:, :, None, None])


def _chsh_value_and_grad(x, theta, eta, vis):
    """Observed CHSH value sum_ij s_ij E_obs(alpha_i, beta_j) and its gradient."""
    alpha, beta = x[:2, None], x[None, 2:]
    s2, c2 = np.sin(2 * theta), np.cos(2 * theta)
    ca, sa, cb, sb = np.cos(alpha), np.sin(alpha), np.cos(beta), np.sin(beta)
    e = vis * (ca * cb + s2 * sa * sb)
    ea = vis * c2 * ca
    eb = vis * c2 * cb
    # undetected outcomes are -1: E_obs = eta^2 E - eta(1-eta)(<A> + <B>) + (1-eta)^2
    k = eta * (1 - eta)
    e_obs = eta**2 * e - k * (ea + eb) + (1 - eta) ** 2
    val = float(np.sum(CHSH_SIGNS * e_obs))
    de_da = vis * (-sa * cb + s2 * ca * sb)
    de_db = vis * (-ca * sb + s2 * sa * cb)
    d_da = CHSH_SIGNS * (eta**2 * de_da + k * vis * c2 * sa)
    d_db = CHSH_SIGNS * (eta**2 * de_db + k * vis * c2 * sb)
    grad = np.concatenate([d_da.sum(axis=1), d_db.sum(axis=0)])
    return val, grad


def chsh_value(cfg: ChshConfig) -> float:
    return _chsh_value_and_grad(np.asarray(cfg.angles, dtype=float), cfg.theta, cfg.eta, cfg.vis)[0]


def optimal_angles(theta: float, eta: float = 1.0, vis: float = 1.0, setting_dist: SettingDistribution | None = None):
    """Angles maximizing the observed CHSH value; returns ``(angles, value)``.

    Every point of a fixed 5^4 grid is scored, and BFGS is run from the
    ``N_LOCAL_STARTS`` best grid points. The value does not depend on the
    setting distribution because the functional divides it out.
    """
    grid = np.array(list(itertools.product(START_GRID, repeat=4)))
    scores = np.array([_chsh_value_and_grad(g, theta, eta, vis)[0] for g in grid])
    order = np.argsort(-scores, kind="stable")[:N_LOCAL_STARTS]

    def neg(x):
        v, g = _chsh_value_and_grad(x, theta, eta, vis)
        return -v, -g

    best_x, best_v = grid[order[0]], scores[order[0]]
    for k in order:
        res = minimize(neg, grid[k], jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 200})
        if -res.fun > best_v + 1e-15:
            best_x, best_v = res.x, -res.fun
    angles = tuple(float(np.mod(a + np.pi, 2 * np.pi) - np.pi) for a in best_x)
    return angles, float(best_v)


def optimal_config(theta: float, eta: float = 1.0, vis: float = 1.0, setting_dist: SettingDistribution | None = None) -> ChshConfig:
    sd = setting_dist or SettingDistribution.uniform(Scenario.chsh())
    angles, _ = optimal_angles(theta, eta, vis, sd)
    return ChshConfig(theta, eta, vis, angles, sd)


def sample_indices(q: JointDistribution, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. flat combination indices drawn from ``q`` (PCG64 seeded by ``seed``)."""
    rng = np.random.default_rng(seed)
    p = np.clip(q.flat, 0.0, None)
    return rng.choice(p.size, size=n, p=p / p.sum())


def sample_trials(q: JointDistribution, n: int, seed: int) -> list[TrialRecord]:
    return indices_to_trials(sample_indices(q, n, seed), q.scenario)
