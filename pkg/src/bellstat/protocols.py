"""Running p-values for the PBR, martingale and standard-deviation protocols, and gain rates.

All p-values are reported as log2 p, which is always <= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import log_ndtr

from . import estimation as est
from .lr import RatioTable, minimize_kl, make_pbr, strategy_matrix
from .scenario import BellFunctional, JointDistribution, Scenario, SettingDistribution, TrialRecord, trials_to_indices

LOG2E = math.log2(math.e)
RATIO_SLACK = 1e-9


class DegenerateDistributionError(ValueError):
    pass


class SupermartingaleViolation(RuntimeError):
    """An installed ratio table has LR expectation above 1."""


def log2_q_function(z: float | np.ndarray) -> float | np.ndarray:
    """log2 of the standard normal upper tail Q(z), finite far into the tail."""
    return log_ndtr(-np.asarray(z, dtype=float)) * LOG2E


def azuma_bound(n: int, mean: float, bound: float, low: float, high: float) -> float:
    """Upper bound on Prob_LR(mean of n trials >= ``mean``) for values in [low, high]."""
    excess = mean - bound
    if excess <= 0 or n == 0:
        return 1.0
    return math.exp(-2.0 * n * excess**2 / (high - low) ** 2)


@dataclass
class TableRecord:
    """One ratio-table installation during a PBR run."""

    trial: int
    max_lr_expectation: float
    epsilon: float
    strength_bits: float
    gated: bool = False


@dataclass
class RunningResult:
    """Per-trial series; ``None`` for protocols not run, NaN where a value is undefined."""

    n: np.ndarray
    log2_p_pbr: np.ndarray | None = None
    log2_p_mart: np.ndarray | None = None
    log2_p_sd: np.ndarray | None = None
    I_hat: np.ndarray | None = None
    I_tilde: np.ndarray | None = None
    sigma: np.ndarray | None = None
    pbr_log2_product: np.ndarray | None = None  # unclamped sum of log2 R
    pbr_tables: list[TableRecord] = field(default_factory=list)

    def merge(self, other: "RunningResult") -> "RunningResult":
        if len(other.n) != len(self.n):
            raise ValueError("cannot merge runs of different length")
        out = RunningResult(self.n)
        for name in ("log2_p_pbr", "log2_p_mart", "log2_p_sd", "I_hat", "I_tilde", "sigma", "pbr_log2_product"):
            mine, theirs = getattr(self, name), getattr(other, name)
            setattr(out, name, mine if mine is not None else theirs)
        out.pbr_tables = self.pbr_tables or other.pbr_tables
        return out


@dataclass(frozen=True)
class GainRates:
    g_sd: float
    g_mart: float
    strength: float
    sigma1: float
    mean_value: float


@dataclass
class PbrOptions:
    block_len: int | None = None
    no_signaling: bool = True
    prior: est.Prior | None = None
    half_life: float | None = None
    significance: float | None = None  # gate threshold c on n*S; off when None
    tol: float = 1e-8
    max_iter: int = 10**6
    check_tables: bool = True


class PbrAccumulator:
    """Sequential PBR state: ratio table in force, accumulated log2 product, estimator.

    Trials are fed one at a time with :meth:`add`. The first block only
    trains the estimator (R = 1); afterwards the table is rebuilt from the
    current estimate at every block boundary.
    """

    def __init__(self, scenario: Scenario, setting_dist: SettingDistribution, block_len: int,
                 options: PbrOptions | None = None):
        if block_len < 1:
            raise ValueError("block length must be at least 1")
        self.options = options or PbrOptions()
        self.scenario = scenario
        self.setting_dist = setting_dist
        self.block_len = int(block_len)
        self.ratio_table = RatioTable.ones(scenario)
        self.log2_product = 0.0
        self.trials_seen = 0
        self.position_in_block = 0
        self.estimator = est.initial_state(scenario, setting_dist, self.options.prior, self.options.half_life,
                                           self.options.no_signaling)
        self.tables: list[TableRecord] = []
        self._block: list[int] = []
        self._strategies = strategy_matrix(scenario, setting_dist)
        self._log2_ratios = np.zeros(scenario.size)

    @property
    def log2_p(self) -> float:
        return min(-self.log2_product, 0.0)

    def add(self, index: int) -> float:
        """Account for one trial (flat combination index); returns the running log2 p."""
        r = self._log2_ratios[index]
        self.log2_product += r
        self.trials_seen += 1
        self._block.append(int(index))
        self.position_in_block += 1
        if self.position_in_block == self.block_len:
            self._end_block()
        return self.log2_p

    def _end_block(self):
        self.estimator, q1 = est.update_estimate(self.estimator, np.asarray(self._block, dtype=np.int64))
        self._block = []
        self.position_in_block = 0
        res = minimize_kl(q1, tol=self.options.tol, max_iter=self.options.max_iter)
        gated = False
        if self.options.significance is not None and self.estimator.effective_n * res.strength_bits < self.options.significance:
            table = RatioTable.ones(self.scenario)
            gated = True
        else:
            table = make_pbr(q1, res.mixture.induced, res.epsilon)
        self.install(table, res.epsilon, res.strength_bits, gated)

    def install(self, table: RatioTable, epsilon: float = 0.0, strength: float = 0.0, gated: bool = False):
        """Put a new ratio table in force after checking it against every deterministic strategy."""
        ratios = table.ratios.reshape(-1)
        if np.any(ratios < 0):
            raise SupermartingaleViolation("negative ratio")
        worst = float(np.max(self._strategies @ ratios))
        self.tables.append(TableRecord(self.trials_seen, worst, epsilon, strength, gated))
        if self.options.check_tables and worst > 1.0 + RATIO_SLACK:
            raise SupermartingaleViolation(f"ratio table has LR expectation {worst!r} at trial {self.trials_seen}")
        self.ratio_table = table
        with np.errstate(divide="ignore"):
            # a zero ratio makes the product -inf and pins p at 1 for good
            self._log2_ratios = np.log2(ratios)


def pbr_run(trials: Sequence[TrialRecord] | np.ndarray, scenario: Scenario, setting_dist: SettingDistribution,
            options: PbrOptions | None = None) -> RunningResult:
    opts = options or PbrOptions()
    idx = trials_to_indices(trials, scenario)
    h = opts.block_len or est.block_size(max(len(idx), 1), scenario.size)
    acc = PbrAccumulator(scenario, setting_dist, h, opts)
    out = np.empty(len(idx))
    product = np.empty(len(idx))
    for k, x in enumerate(idx):
        try:
            out[k] = acc.add(x)
        except est.MlFitError as exc:
            raise est.MlFitError(f"trial {k + 1}: {exc}", exc.best, exc.residuals) from exc
        product[k] = acc.log2_product
    return RunningResult(np.arange(1, len(idx) + 1), log2_p_pbr=out, pbr_log2_product=product, pbr_tables=acc.tables)


def _values(trials, functional: BellFunctional) -> np.ndarray:
    idx = trials_to_indices(trials, functional.scenario)
    return functional.flat[idx]


def martingale_log2_p(n: int | np.ndarray, mean_norm, bound_norm: float):
    """log2 of exp(-n (I' - B')^2 / 32) for I' above B', else 0."""
    excess = np.asarray(mean_norm, dtype=float) - bound_norm
    return np.where(excess > 0, -np.asarray(n) * excess**2 / 32.0 * LOG2E, 0.0)


def martingale_run(trials, functional: BellFunctional) -> RunningResult:
    norm = functional.normalized()
    vals = _values(trials, norm)
    n = np.arange(1, len(vals) + 1)
    mean_norm = np.cumsum(vals) / np.maximum(n, 1)
    raw = _values(trials, functional)
    return RunningResult(n, log2_p_mart=martingale_log2_p(n, mean_norm, norm.bound), I_hat=np.cumsum(raw) / np.maximum(n, 1))


def conditional_estimate(counts: np.ndarray, functional: BellFunctional, setting_dist: SettingDistribution):
    """Setting-conditioned estimate and its Poisson-propagated SD for a count table.

    Returns ``(I_tilde, sigma)``; both NaN if some setting pair has no trials.
    """
    c = np.asarray(counts, dtype=float).reshape(functional.scenario.shape)
    v = functional.values
    n_ij = c.sum(axis=(2, 3))
    if np.any(n_ij[setting_dist.probs > 0] == 0):
        return math.nan, math.nan
    p = setting_dist.probs
    with np.errstate(invalid="ignore", divide="ignore"):
        s1 = (c * v).sum(axis=(2, 3))
        s2 = (c * v * v).sum(axis=(2, 3))
        m = np.where(n_ij > 0, s1 / n_ij, 0.0)
        spread = np.where(n_ij > 0, np.maximum(s2 - s1 * m, 0.0) / n_ij**2, 0.0)
    return float(np.sum(p * m)), math.sqrt(float(np.sum(p * p * spread)))


def sd_run(trials, functional: BellFunctional, setting_dist: SettingDistribution, chunk: int = 65536) -> RunningResult:
    """Running conditional estimate, its SD and log2 Q((I~ - B)/sigma).

    NaN marks prefixes where the estimate or the p-value is undefined:
    a setting pair without trials, or zero spread.
    """
    scen = functional.scenario
    idx = trials_to_indices(trials, scen)
    nt = len(idx)
    d = scen.size
    v = functional.flat
    p = setting_dist.probs.reshape(-1)
    pair = np.arange(d) // (scen.alice_outcomes * scen.bob_outcomes)
    npairs = scen.alice_settings * scen.bob_settings
    pair_of = pair[idx]
    I_tilde = np.full(nt, np.nan)
    sigma = np.full(nt, np.nan)
    base = np.zeros((3, npairs))
    for start in range(0, nt, chunk):
        sl = slice(start, min(start + chunk, nt))
        k = pair_of[sl]
        x = v[idx[sl]]
        m = sl.stop - sl.start
        inc = np.zeros((m, 3, npairs))
        rows = np.arange(m)
        inc[rows, 0, k] = 1.0
        inc[rows, 1, k] = x
        inc[rows, 2, k] = x * x
        cum = base + np.cumsum(inc, axis=0)
        base = cum[-1]
        n_ij, s1, s2 = cum[:, 0], cum[:, 1], cum[:, 2]
        ok = np.all(n_ij[:, p > 0] > 0, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = s1 / n_ij
            spread = np.maximum(s2 - s1 * mean, 0.0) / n_ij**2
            mean = np.where(n_ij > 0, mean, 0.0)
            spread = np.where(n_ij > 0, spread, 0.0)
        I_tilde[sl] = np.where(ok, mean @ p, np.nan)
        sigma[sl] = np.where(ok, np.sqrt(spread @ (p * p)), np.nan)
    n = np.arange(1, nt + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = (I_tilde - functional.bound) / sigma
    log2p = np.where(sigma > 0, log2_q_function(np.where(sigma > 0, z, 0.0)), np.nan)
    I_hat = np.cumsum(v[idx]) / np.maximum(n, 1)
    return RunningResult(n, log2_p_sd=log2p, I_hat=I_hat, I_tilde=I_tilde, sigma=sigma)


def gain_rates(q: JointDistribution, functional: BellFunctional, tol: float = 1e-8) -> GainRates:
    """Asymptotic confidence-gain rates (bits/trial) of the SD and martingale protocols and the strength."""
    v = functional.values
    mean = float(np.sum(q.probs * v))
    cond = q.conditional()
    cmean = (cond * v).sum(axis=(2, 3))
    cvar = np.maximum((cond * v * v).sum(axis=(2, 3)) - cmean**2, 0.0)
    var1 = float(np.sum(q.setting_dist.probs * cvar))
    sigma1 = math.sqrt(var1)
    excess = mean - functional.bound
    if excess > 0:
        if var1 <= 0:
            raise DegenerateDistributionError("zero one-trial SD with a violation: SD gain rate is unbounded")
        g_sd = LOG2E * excess**2 / (2 * var1)
    else:
        g_sd = 0.0
    norm = functional.normalized()
    excess_n = float(np.sum(q.probs * norm.values)) - norm.bound
    g_mart = LOG2E * excess_n**2 / 32.0 if excess_n > 0 else 0.0
    strength = minimize_kl(q, tol=tol).strength_bits
    return GainRates(g_sd, g_mart, strength, sigma1, mean)


def analyze(trials, scenario: Scenario, setting_dist: SettingDistribution, functional: BellFunctional | None,
            protocols: Sequence[str] = ("pbr", "mart", "sd"), pbr_options: PbrOptions | None = None) -> RunningResult:
    """Run the selected protocols on one trial stream and merge the series."""
    unknown = set(protocols) - {"pbr", "mart", "sd"}
    if unknown:
        raise ValueError(f"unknown protocols: {sorted(unknown)}")
    idx = trials_to_indices(trials, scenario)
    result = RunningResult(np.arange(1, len(idx) + 1))
    if ("mart" in protocols or "sd" in protocols) and functional is None:
        raise ValueError("martingale and SD protocols need a Bell functional")
    if "pbr" in protocols:
        result = result.merge(pbr_run(idx, scenario, setting_dist, pbr_options))
    if "sd" in protocols:
        result = result.merge(sd_run(idx, functional, setting_dist))
    if "mart" in protocols:
        result = result.merge(martingale_run(idx, functional))
    return result
