"""Shared data model: scenarios, trials, setting-outcome distributions, Bell functionals.

Combinations ``x = (i, j, a, b)`` are stored in C order over the shape
``(nA, nB, kA, kB)``, so the flat index is ``((i*nB + j)*kA + a)*kB + b``.
All indices are 0-based. For two-outcome parties label 0 stands for the
value +1 and label 1 for -1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TOL = 1e-9


class StructuralError(ValueError):
    """Array shapes or indices do not fit the scenario."""


def outcome_value(label: int | np.ndarray) -> int | np.ndarray:
    """Map an outcome label to the +-1 value used by CHSH (0 -> +1, 1 -> -1)."""
    return 1 - 2 * label


@dataclass(frozen=True)
class Scenario:
    alice_settings: int
    bob_settings: int
    alice_outcomes: int
    bob_outcomes: int

    def __post_init__(self):
        for name in ("alice_settings", "bob_settings", "alice_outcomes", "bob_outcomes"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @classmethod
    def chsh(cls) -> "Scenario":
        return cls(2, 2, 2, 2)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.alice_settings, self.bob_settings, self.alice_outcomes, self.bob_outcomes)

    @property
    def settings_shape(self) -> tuple[int, int]:
        return (self.alice_settings, self.bob_settings)

    @property
    def size(self) -> int:
        """Number of setting-outcome combinations d."""
        return int(np.prod(self.shape))

    def index(self, i: int, j: int, a: int, b: int) -> int:
        return int(np.ravel_multi_index((i, j, a, b), self.shape))

    def combinations(self) -> list[tuple[int, int, int, int]]:
        return [tuple(int(v) for v in np.unravel_index(x, self.shape)) for x in range(self.size)]


@dataclass(frozen=True)
class SettingDistribution:
    """Known probabilities p_ij of the setting pairs, shape ``(nA, nB)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2:
            raise StructuralError("setting distribution must be a 2-d table")
        if np.any(p < 0):
            raise ValueError("setting probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"setting probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, scenario: Scenario) -> "SettingDistribution":
        nA, nB = scenario.settings_shape
        return cls(np.full((nA, nB), 1.0 / (nA * nB)))

    def __eq__(self, other):
        return isinstance(other, SettingDistribution) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())


@dataclass(frozen=True)
class TrialRecord:
    alice_setting: int
    bob_setting: int
    alice_outcome: int
    bob_outcome: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.alice_setting, self.bob_setting, self.alice_outcome, self.bob_outcome)

    def in_bounds(self, scenario: Scenario) -> bool:
        return all(0 <= v < n for v, n in zip(self.as_tuple(), scenario.shape))


def trials_to_indices(trials: Sequence[TrialRecord] | np.ndarray, scenario: Scenario) -> np.ndarray:
    """Flat combination index of every trial; raises naming the first bad trial."""
    if isinstance(trials, np.ndarray) and trials.ndim == 1:
        idx = trials.astype(np.int64)
        bad = np.flatnonzero((idx < 0) | (idx >= scenario.size))
        if bad.size:
            raise StructuralError(f"trial {bad[0]} has combination index {idx[bad[0]]} out of range")
        return idx
    arr = np.array([t.as_tuple() if isinstance(t, TrialRecord) else tuple(t) for t in trials], dtype=np.int64)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    bounds = np.array(scenario.shape)
    bad = np.flatnonzero(np.any((arr < 0) | (arr >= bounds), axis=1))
    if bad.size:
        k = int(bad[0])
        raise StructuralError(f"trial {k} = {tuple(arr[k])} is outside scenario {scenario.shape}")
    return np.ravel_multi_index(arr.T, scenario.shape)


def indices_to_trials(indices: Iterable[int], scenario: Scenario) -> list[TrialRecord]:
    idx = np.asarray(list(indices), dtype=np.int64)
    cols = np.unravel_index(idx, scenario.shape)
    return [TrialRecord(int(i), int(j), int(a), int(b)) for i, j, a, b in zip(*cols)]


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Probabilities q_x over setting-outcome combinations with a fixed setting distribution.

    ``probs`` has shape ``scenario.shape``. Construction checks only the
    shape; use :func:`validate_distribution` for the numerical constraints.
    """

    scenario: Scenario
    setting_dist: SettingDistribution
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.size != self.scenario.size:
            raise StructuralError(f"expected {self.scenario.size} probabilities, got {p.size}")
        if self.setting_dist.probs.shape != self.scenario.settings_shape:
            raise StructuralError("setting distribution does not match scenario")
        p = p.reshape(self.scenario.shape)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def flat(self) -> np.ndarray:
        return self.probs.reshape(-1)

    def conditional(self) -> np.ndarray:
        """Outcome distribution given each setting pair; zero-probability pairs come back uniform."""
        ps = self.setting_dist.probs[:, :, None, None]
        kA, kB = self.scenario.alice_outcomes, self.scenario.bob_outcomes
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(ps > 0, self.probs / np.where(ps > 0, ps, 1.0), 1.0 / (kA * kB))
        return c

    def with_probs(self, probs: np.ndarray) -> "JointDistribution":
        return JointDistribution(self.scenario, self.setting_dist, probs)


def conditional_uniform(scenario: Scenario, setting_dist: SettingDistribution | None = None) -> JointDistribution:
    """The distribution u: uniform outcomes given each setting pair."""
    sd = setting_dist or SettingDistribution.uniform(scenario)
    kA, kB = scenario.alice_outcomes, scenario.bob_outcomes
    probs = np.broadcast_to(sd.probs[:, :, None, None] / (kA * kB), scenario.shape)
    return JointDistribution(scenario, sd, probs)


@dataclass(frozen=True)
class Violation:
    constraint: str
    magnitude: float
    where: tuple = field(default=())

    def __str__(self):
        loc = f" at {self.where}" if self.where else ""
        return f"{self.constraint}{loc}: {self.magnitude:.3g}"


def no_signaling_deviation(probs: np.ndarray) -> list[Violation]:
    """Largest marginal discrepancy per party and setting, relative to the conditional tables."""
    out = []
    # probs here are conditional distributions c[i, j, a, b]
    alice = probs.sum(axis=3)  # (nA, nB, kA)
    for i in range(alice.shape[0]):
        dev = float(np.max(alice[i].max(axis=0) - alice[i].min(axis=0)))
        if dev > TOL:
            out.append(Violation("no-signaling (Alice marginal depends on Bob's setting)", dev, ("alice", i)))
    bob = probs.sum(axis=2)  # (nA, nB, kB)
    for j in range(bob.shape[1]):
        dev = float(np.max(bob[:, j].max(axis=0) - bob[:, j].min(axis=0)))
        if dev > TOL:
            out.append(Violation("no-signaling (Bob marginal depends on Alice's setting)", dev, ("bob", j)))
    return out


def validate_distribution(q: JointDistribution, check_no_signaling: bool = True) -> list[Violation]:
    """Return the violated constraints of ``q``; an empty list means ``q`` is valid.

    Checks nonnegativity, normalization, the setting marginals and, if asked,
    no-signaling of the conditional outcome distributions, all at 1e-9.
    """
    if q.probs.shape != q.scenario.shape:
        raise StructuralError("distribution shape does not match its scenario")
    report = []
    p = q.probs
    neg = p.min()
    if neg < -TOL:
        where = tuple(int(v) for v in np.unravel_index(int(np.argmin(p)), p.shape))
        report.append(Violation("nonnegativity", float(-neg), where))
    total = float(p.sum())
    if abs(total - 1.0) > TOL:
        report.append(Violation("normalization", abs(total - 1.0)))
    marg = p.sum(axis=(2, 3))
    diff = np.abs(marg - q.setting_dist.probs)
    if diff.max() > TOL:
        where = tuple(int(v) for v in np.unravel_index(int(np.argmax(diff)), diff.shape))
        report.append(Violation("setting marginal", float(diff.max()), where))
    if check_no_signaling:
        report.extend(no_signaling_deviation(q.conditional()))
    return report


@dataclass(frozen=True, eq=False)
class BellFunctional:
    """Values I(x) with LR bound B; ``<I> <= B`` under every LR model."""

    scenario: Scenario
    values: np.ndarray
    bound: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.size != self.scenario.size:
            raise StructuralError(f"expected {self.scenario.size} functional values, got {v.size}")
        v = v.reshape(self.scenario.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("functional values must be finite")
        if v.max() <= v.min():
            raise ValueError("functional must take at least two distinct values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "bound", float(self.bound))

    @property
    def range_low(self) -> float:
        return float(self.values.min())

    @property
    def range_high(self) -> float:
        return float(self.values.max())

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def expectation(self, q: JointDistribution) -> float:
        return float(np.sum(q.probs * self.values))

    def normalized(self) -> "BellFunctional":
        """Affine rescaling onto [-4, 4] used by the martingale protocol."""
        lo, hi = self.range_low, self.range_high
        scale = 8.0 / (hi - lo)
        return BellFunctional(self.scenario, scale * (self.values - lo) - 4.0, scale * (self.bound - lo) - 4.0)


def chsh_functional(setting_dist: SettingDistribution) -> BellFunctional:
    """CHSH as a single-trial functional: I = (1 - 2[i=j=1]) a b / p_ij, B = 2."""
    p = setting_dist.probs
    if p.shape != (2, 2):
        raise StructuralError("CHSH needs two settings per party")
    if np.any(p <= 0):
        raise ValueError("CHSH functional needs every setting pair to have positive probability")
    sign = np.array([[1.0, 1.0], [1.0, -1.0]])
    vals = outcome_value(np.arange(2))
    ab = np.outer(vals, vals).astype(float)
    values = (sign / p)[:, :, None, None] * ab[None, None, :, :]
    return BellFunctional(Scenario.chsh(), values, 2.0)
