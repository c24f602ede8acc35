"""Request handlers: the same functions back the HTTP routes and the local CLI."""

from __future__ import annotations

import math
import threading
import uuid

import numpy as np

from .. import chsh, estimation as est, protocols as prot
from ..lr import InfeasibleError, minimize_kl
from ..scenario import (
    BellFunctional,
    JointDistribution,
    Scenario,
    SettingDistribution,
    StructuralError,
    chsh_functional,
    validate_distribution,
)
from . import schemas as s


class InputError(ValueError):
    """Bad request content; ``violations`` lists failed constraints."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or []


class ConvergenceError(RuntimeError):
    pass


def to_scenario(m: s.ScenarioModel) -> Scenario:
    return Scenario(m.alice_settings, m.bob_settings, m.alice_outcomes, m.bob_outcomes)


def scenario_model(sc: Scenario) -> s.ScenarioModel:
    return s.ScenarioModel(alice_settings=sc.alice_settings, bob_settings=sc.bob_settings,
                           alice_outcomes=sc.alice_outcomes, bob_outcomes=sc.bob_outcomes)


def to_settings(sc: Scenario, probs: list[float] | None) -> SettingDistribution:
    if probs is None:
        return SettingDistribution.uniform(sc)
    try:
        return SettingDistribution(np.asarray(probs, dtype=float).reshape(sc.settings_shape))
    except ValueError as exc:
        raise InputError(f"invalid setting distribution: {exc}") from None


def to_distribution(m: s.DistributionModel) -> JointDistribution:
    sc = to_scenario(m.scenario)
    try:
        return JointDistribution(sc, to_settings(sc, m.settings), np.asarray(m.probs, dtype=float))
    except StructuralError as exc:
        raise InputError(str(exc)) from None


def distribution_model(q: JointDistribution) -> s.DistributionModel:
    return s.DistributionModel(scenario=scenario_model(q.scenario),
                               settings=[float(v) for v in q.setting_dist.probs.reshape(-1)],
                               probs=[float(v) for v in q.flat])


def to_functional(m: s.FunctionalModel | None, sc: Scenario, sd: SettingDistribution) -> BellFunctional:
    if m is None:
        if sc != Scenario.chsh():
            raise InputError("no Bell functional given and the scenario is not CHSH")
        try:
            return chsh_functional(sd)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    try:
        f = BellFunctional(to_scenario(m.scenario), np.asarray(m.values, dtype=float), m.bound)
    except ValueError as exc:
        raise InputError(f"invalid Bell functional: {exc}") from None
    if f.scenario != sc:
        raise InputError("Bell functional scenario differs from the trial scenario")
    return f


def functional_model(f: BellFunctional) -> s.FunctionalModel:
    return s.FunctionalModel(scenario=scenario_model(f.scenario), values=[float(v) for v in f.flat], bound=f.bound)


def _series(a) -> list[float | None] | None:
    if a is None:
        return None
    return [float(v) if math.isfinite(v) else None for v in np.asarray(a, dtype=float)]


def _pbr_options(req: s.PbrSettings, sc: Scenario, sd: SettingDistribution, block: int | None) -> prot.PbrOptions:
    prior = None
    if req.prior is not None:
        pd = to_distribution(req.prior)
        if pd.scenario != sc:
            raise InputError("prior distribution scenario differs from the trial scenario")
        bad = validate_distribution(pd, check_no_signaling=False)
        if bad:
            raise InputError("prior distribution is invalid", [str(v) for v in bad])
        prior = est.Prior(pd, req.prior_weight)
    return prot.PbrOptions(block_len=block, no_signaling=req.no_signaling, prior=prior,
                           half_life=req.half_life, significance=req.significance)


def simulate(req: s.SimulateRequest) -> s.SimulateResponse:
    cfg = chsh.optimal_config(math.radians(req.theta_deg), req.eta, req.vis)
    q = chsh.quantum_distribution(cfg)
    idx = chsh.sample_indices(q, req.trials, req.seed)
    recs = np.stack(np.unravel_index(idx, q.scenario.shape), axis=1) if req.trials else np.zeros((0, 4), int)
    return s.SimulateResponse(
        theta_deg=req.theta_deg, eta=req.eta, vis=req.vis, seed=req.seed,
        angles_deg=[math.degrees(a) for a in cfg.angles], chsh_value=chsh.chsh_value(cfg),
        settings=[float(v) for v in cfg.setting_dist.probs.reshape(-1)],
        trials=[tuple(int(v) for v in r) for r in recs],
    )


def analyze(req: s.AnalyzeRequest) -> s.AnalyzeResponse:
    sc = to_scenario(req.scenario)
    sd = to_settings(sc, req.settings)
    try:
        idx = np.ravel_multi_index(np.asarray(req.trials, dtype=np.int64).reshape(-1, 4).T, sc.shape) if req.trials \
            else np.zeros(0, dtype=np.int64)
    except ValueError:
        raise InputError("trial index outside the scenario") from None
    protocols = list(dict.fromkeys(req.protocols))
    functional = to_functional(req.functional, sc, sd) if ("mart" in protocols or "sd" in protocols) else None
    block = req.block_size or est.block_size(max(len(idx), 1), sc.size)
    opts = _pbr_options(req, sc, sd, block)
    try:
        res = prot.analyze(idx, sc, sd, functional, protocols, opts)
    except est.MlFitError as exc:
        raise ConvergenceError(str(exc)) from None
    return s.AnalyzeResponse(
        block_size=block if "pbr" in protocols else None,
        n=[int(v) for v in res.n],
        log2p_pbr=_series(res.log2_p_pbr), log2p_mart=_series(res.log2_p_mart), log2p_sd=_series(res.log2_p_sd),
        I_hat=_series(res.I_hat), I_tilde=_series(res.I_tilde), sigma=_series(res.sigma),
        tables=[s.TableInfo(**vars(t)) for t in res.pbr_tables],
    )


def strength(req: s.StrengthRequest) -> s.StrengthResponse:
    q = to_distribution(req.distribution)
    bad = validate_distribution(q, check_no_signaling=False)
    if bad:
        raise InputError("distribution violates constraints", [str(v) for v in bad])
    try:
        res = minimize_kl(q, tol=req.tol, max_iter=req.max_iter)
    except InfeasibleError as exc:
        raise InputError(str(exc)) from None
    return s.StrengthResponse(strength_bits=res.strength_bits, epsilon=res.epsilon, iterations=res.iterations,
                              converged=res.converged, lr_distribution=distribution_model(res.mixture.induced),
                              weights=[float(w) for w in res.mixture.weights])


def gain_point(p: s.GainPoint) -> s.GainRow:
    cfg = chsh.optimal_config(math.radians(p.theta_deg), p.eta, p.vis)
    q = chsh.quantum_distribution(cfg)
    g = prot.gain_rates(q, chsh_functional(cfg.setting_dist))
    return s.GainRow(theta_deg=p.theta_deg, eta=p.eta, vis=p.vis, chsh_value=chsh.chsh_value(cfg),
                     angles_deg=[math.degrees(a) for a in cfg.angles], g_sd=g.g_sd, g_mart=g.g_mart,
                     strength=g.strength)


def gains(req: s.GainsRequest) -> s.GainsResponse:
    return s.GainsResponse(rows=[gain_point(p) for p in req.points])


class Session:
    """Live analysis of a growing trial stream."""

    def __init__(self, req: s.SessionCreate):
        sc = to_scenario(req.scenario)
        sd = to_settings(sc, req.settings)
        block = req.block_size
        if block is None:
            if req.planned_trials is None:
                raise InputError("a live session needs block_size or planned_trials")
            block = est.block_size(req.planned_trials, sc.size)
        self.id = uuid.uuid4().hex
        self.scenario, self.setting_dist = sc, sd
        self.functional = to_functional(req.functional, sc, sd) if (req.functional or sc == Scenario.chsh()) else None
        self.pbr = prot.PbrAccumulator(sc, sd, block, _pbr_options(req, sc, sd, block))
        self.counts = np.zeros(sc.size)
        self.norm_sum = 0.0
        self.raw_sum = 0.0
        self.lock = threading.Lock()

    def add(self, batch: s.TrialBatch) -> s.SessionStatus:
        try:
            idx = np.ravel_multi_index(np.asarray(batch.trials, dtype=np.int64).reshape(-1, 4).T, self.scenario.shape) \
                if batch.trials else np.zeros(0, dtype=np.int64)
        except ValueError:
            raise InputError("trial index outside the scenario") from None
        with self.lock:
            for x in idx:
                try:
                    self.pbr.add(int(x))
                except est.MlFitError as exc:
                    raise ConvergenceError(str(exc)) from None
            np.add.at(self.counts, idx, 1.0)
            if self.functional is not None:
                self.norm_sum += float(self.functional.normalized().flat[idx].sum())
                self.raw_sum += float(self.functional.flat[idx].sum())
            return self.status()

    def status(self) -> s.SessionStatus:
        n = self.pbr.trials_seen
        out = s.SessionStatus(id=self.id, n=n, block_size=self.pbr.block_len, log2p_pbr=self.pbr.log2_p,
                              tables_installed=len(self.pbr.tables))
        if self.functional is not None and n > 0:
            norm = self.functional.normalized()
            out.log2p_mart = float(prot.martingale_log2_p(n, self.norm_sum / n, norm.bound))
            out.I_hat = self.raw_sum / n
            it, sig = prot.conditional_estimate(self.counts, self.functional, self.setting_dist)
            if math.isfinite(it):
                out.I_tilde, out.sigma = it, sig
                if sig > 0:
                    out.log2p_sd = float(prot.log2_q_function((it - self.functional.bound) / sig))
        return out


class SessionStore:
    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, req: s.SessionCreate) -> Session:
        sess = Session(req)
        with self._lock:
            self._sessions[sess.id] = sess
        return sess

    def get(self, sid: str) -> Session | None:
        with self._lock:
            return self._sessions.get(sid)

    def delete(self, sid: str) -> bool:
        with self._lock:
            return self._sessions.pop(sid, None) is not None
