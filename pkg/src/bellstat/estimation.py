"""Estimating the next trial's setting-outcome distribution from observed trials."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.linalg import null_space

from .scenario import (
    JointDistribution,
    Scenario,
    SettingDistribution,
    StructuralError,
    TrialRecord,
    conditional_uniform,
    trials_to_indices,
)

BARRIER_FINAL = 1e-12
MAX_NEWTON = 10**5


class MlFitError(RuntimeError):
    """Raised when the constrained fit does not converge; carries the best iterate."""

    def __init__(self, message: str, best: JointDistribution, residuals: dict):
        super().__init__(message)
        self.best = best
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    scenario: Scenario
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.size != self.scenario.size:
            raise StructuralError("count table does not match scenario")
        object.__setattr__(self, "counts", c.reshape(self.scenario.shape))

    @property
    def total(self) -> float:
        return self.counts.sum().item()

    def frequencies(self) -> np.ndarray:
        t = self.total
        return self.counts / t if t > 0 else np.zeros(self.scenario.shape)


def empirical_frequencies(trials: Sequence[TrialRecord] | np.ndarray, scenario: Scenario) -> FrequencyTable:
    idx = trials_to_indices(trials, scenario)
    return FrequencyTable(scenario, np.bincount(idx, minlength=scenario.size).astype(np.int64))


@lru_cache(maxsize=64)
def _constraint_basis(scenario: Scenario, sd: SettingDistribution, no_signaling: bool):
    """Null-space basis of the linear constraints over cells of positive-probability pairs.

    Returns ``(active, basis)`` where ``active`` masks the free cells.
    Conditional-uniform ``u`` satisfies every constraint and is the base point.
    """
    nA, nB, kA, kB = scenario.shape
    p = sd.probs
    active = np.broadcast_to(p[:, :, None, None] > 0, scenario.shape).reshape(-1)
    pos = np.flatnonzero(active)
    col = {x: k for k, x in enumerate(pos)}
    rows = []

    def cell(i, j, a, b):
        return col[scenario.index(i, j, a, b)]

    for i in range(nA):
        for j in range(nB):
            if p[i, j] > 0:
                r = np.zeros(pos.size)
                for a in range(kA):
                    for b in range(kB):
                        r[cell(i, j, a, b)] = 1.0
                rows.append(r)
    if no_signaling:
        # conditional marginals agree across the other party's settings
        for i in range(nA):
            js = [j for j in range(nB) if p[i, j] > 0]
            for j in js[1:]:
                for a in range(kA):
                    r = np.zeros(pos.size)
                    for b in range(kB):
                        r[cell(i, j, a, b)] += 1.0 / p[i, j]
                        r[cell(i, js[0], a, b)] -= 1.0 / p[i, js[0]]
                    rows.append(r)
        for j in range(nB):
            is_ = [i for i in range(nA) if p[i, j] > 0]
            for i in is_[1:]:
                for b in range(kB):
                    r = np.zeros(pos.size)
                    for a in range(kA):
                        r[cell(i, j, a, b)] += 1.0 / p[i, j]
                        r[cell(is_[0], j, a, b)] -= 1.0 / p[is_[0], j]
                    rows.append(r)
    basis = null_space(np.array(rows)) if rows else np.eye(pos.size)
    basis.setflags(write=False)
    return active, basis


def constraint_residuals(q: JointDistribution, no_signaling: bool = True) -> dict:
    """Largest violation of each linear constraint family plus the most negative cell."""
    c = q.conditional()
    res = {
        "setting_marginal": float(np.max(np.abs(q.probs.sum(axis=(2, 3)) - q.setting_dist.probs))),
        "nonnegativity": float(max(0.0, -q.probs.min())),
    }
    if no_signaling:
        pos = q.setting_dist.probs > 0
        worst = 0.0
        alice = c.sum(axis=3)
        for i in range(c.shape[0]):
            m = alice[i][pos[i]]
            if len(m):
                worst = max(worst, float(np.max(m.max(axis=0) - m.min(axis=0))))
        bob = c.sum(axis=2)
        for j in range(c.shape[1]):
            m = bob[:, j][pos[:, j]]
            if len(m):
                worst = max(worst, float(np.max(m.max(axis=0) - m.min(axis=0))))
        res["no_signaling"] = worst
    return res


def log_likelihood(weights: np.ndarray, q: JointDistribution) -> float:
    """sum_x w_x ln q_x in nats (terms with zero weight dropped)."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    m = w > 0
    qf = q.flat[m]
    if np.any(qf <= 0):
        return -math.inf
    return float(np.sum(w[m] * np.log(qf)))


def _newton_barrier(w: np.ndarray, v0: np.ndarray, basis: np.ndarray):
    """Maximize sum (w + mu) log v over v0 + span(basis), following mu down to BARRIER_FINAL."""
    v = v0.copy()
    total = float(w.sum())
    mu = max(total, 1.0)
    steps = 0
    while True:
        wt = w + mu
        for _ in range(200):
            g = basis.T @ (wt / v)
            h = (basis.T * (wt / v**2)) @ basis
            try:
                dz = np.linalg.solve(h, g)
            except np.linalg.LinAlgError:
                dz = np.linalg.lstsq(h, g, rcond=None)[0]
            dv = basis @ dz
            dec = float(g @ dz)  # squared Newton decrement
            steps += 1
            if dec < 1e-20 * max(1.0, total) or steps > MAX_NEWTON:
                break
            neg = dv < 0
            t = 1.0
            if np.any(neg):
                t = min(1.0, 0.99 * float(np.min(-v[neg] / dv[neg])))
            f0 = float(wt @ np.log(v))
            while t > 1e-16:
                vn = v + t * dv
                if np.all(vn > 0) and float(wt @ np.log(vn)) >= f0 + 0.25 * t * dec:
                    break
                t *= 0.5
            else:
                break
            v = vn
            if dec < 1e-24:
                break
        if mu <= BARRIER_FINAL or steps > MAX_NEWTON:
            return v, steps, mu
        mu = max(mu * 0.1, BARRIER_FINAL)


def ml_fit(f: FrequencyTable | np.ndarray, sd: SettingDistribution, enforce_no_signaling: bool = True,
           scenario: Scenario | None = None) -> JointDistribution:
    """Maximum-likelihood distribution with setting marginals ``sd`` (and no-signaling).

    ``f`` may be a count table or an array of nonnegative real weights.
    Setting pairs without data get uniform outcomes; with no-signaling the
    log-barrier path converges to the analytic center of the optimal face,
    which is ``u`` when there is no data at all.
    """
    if isinstance(f, FrequencyTable):
        scenario = f.scenario
        w = f.counts.astype(float).reshape(-1)
    else:
        if scenario is None:
            nA, nB = sd.probs.shape
            scenario = Scenario(nA, nB, 2, 2)
        w = np.asarray(f, dtype=float).reshape(-1)
        if w.size != scenario.size:
            raise StructuralError("weight table does not match scenario")
    if np.any(w < 0):
        raise ValueError("counts must be nonnegative")
    u = conditional_uniform(scenario, sd)
    p = sd.probs
    if not enforce_no_signaling:
        counts = w.reshape(scenario.shape)
        n_pair = counts.sum(axis=(2, 3), keepdims=True)
        ps = p[:, :, None, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(n_pair > 0, ps * counts / np.where(n_pair > 0, n_pair, 1.0), u.probs)
        return JointDistribution(scenario, sd, q)

    active, basis = _constraint_basis(scenario, sd, True)
    v0 = u.flat[active]
    v, steps, mu = _newton_barrier(w[active], v0, basis)
    full = np.zeros(scenario.size)
    full[active] = v
    # remove round-off drift in the setting marginals
    q = full.reshape(scenario.shape)
    marg = q.sum(axis=(2, 3), keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(marg > 0, q * (p[:, :, None, None] / np.where(marg > 0, marg, 1.0)), q)
    out = JointDistribution(scenario, sd, q)
    if steps > MAX_NEWTON:
        raise MlFitError("constrained ML fit hit the Newton iteration cap", out, constraint_residuals(out))
    return out


def smooth(q0: JointDistribution, n: float) -> JointDistribution:
    """Mix toward ``u`` with weight 1/(n+1)."""
    if n < 0:
        raise ValueError("effective count must be nonnegative")
    u = conditional_uniform(q0.scenario, q0.setting_dist)
    return q0.with_probs((n / (n + 1.0)) * q0.probs + (1.0 / (n + 1.0)) * u.probs)


def block_size(total_trials: int, combinations: int) -> int:
    """max(ceil(N/1000), ceil(ln(2d) d))."""
    if total_trials < 1 or combinations < 1:
        raise ValueError("need at least one trial and one combination")
    return max(-(-total_trials // 1000), math.ceil(math.log(2 * combinations) * combinations))


@dataclass(frozen=True, eq=False)
class Prior:
    dist: JointDistribution
    weight: float


@dataclass(frozen=True, eq=False)
class EstimatorState:
    """Weighted counts for the fit, including any prior pseudo-counts.

    The prior is folded in once, at :func:`initial_state`, so forgetting
    discounts it exactly like real trials.
    """

    scenario: Scenario
    setting_dist: SettingDistribution
    weighted_counts: np.ndarray
    effective_n: float = 0.0
    prior: Prior | None = None
    half_life: float | None = None
    no_signaling: bool = True


def initial_state(scenario: Scenario, setting_dist: SettingDistribution, prior: Prior | None = None,
                  half_life: float | None = None, no_signaling: bool = True) -> EstimatorState:
    counts = np.zeros(scenario.shape)
    n = 0.0
    if prior is not None:
        if prior.weight < 0:
            raise ValueError("prior weight must be nonnegative")
        if prior.dist.scenario != scenario:
            raise StructuralError("prior belongs to a different scenario")
        counts = counts + prior.weight * np.clip(prior.dist.probs, 0.0, None)
        n = float(prior.weight)
    if half_life is not None and half_life <= 0:
        raise ValueError("half-life must be positive")
    return EstimatorState(scenario, setting_dist, counts, n, prior, half_life, no_signaling)


def update_estimate(state: EstimatorState, block: Sequence[TrialRecord] | np.ndarray) -> tuple[EstimatorState, JointDistribution]:
    """Fold one block into the state and return the smoothed estimate q1."""
    idx = trials_to_indices(block, state.scenario)
    counts, n = state.weighted_counts, state.effective_n
    if state.half_life is not None:
        decay = 2.0 ** (-len(idx) / state.half_life)
        counts, n = counts * decay, n * decay
    add = np.bincount(idx, minlength=state.scenario.size).reshape(state.scenario.shape)
    counts = counts + add
    n = n + len(idx)
    new = replace(state, weighted_counts=counts, effective_n=n)
    q0 = ml_fit(counts, state.setting_dist, state.no_signaling, state.scenario)
    return new, smooth(q0, n)
