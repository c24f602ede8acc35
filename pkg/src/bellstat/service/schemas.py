"""Request and response models shared by the HTTP service and the CLI."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

Protocol = Literal["pbr", "mart", "sd"]
Trial = tuple[int, int, int, int]


class ScenarioModel(BaseModel):
    alice_settings: int = Field(2, ge=1)
    bob_settings: int = Field(2, ge=1)
    alice_outcomes: int = Field(2, ge=1)
    bob_outcomes: int = Field(2, ge=1)


class DistributionModel(BaseModel):
    """Probabilities in row-major (i, j, a, b) order."""

    scenario: ScenarioModel = ScenarioModel()
    settings: Optional[list[float]] = None
    probs: list[float]


class FunctionalModel(BaseModel):
    scenario: ScenarioModel = ScenarioModel()
    values: list[float]
    bound: float


class PbrSettings(BaseModel):
    block_size: Optional[int] = Field(None, ge=1)
    no_signaling: bool = True
    prior: Optional[DistributionModel] = None
    prior_weight: float = Field(0.0, ge=0)
    half_life: Optional[float] = Field(None, gt=0)
    significance: Optional[float] = None


class SimulateRequest(BaseModel):
    theta_deg: float
    eta: float = Field(1.0, ge=0, le=1)
    vis: float = Field(1.0, ge=0, le=1)
    trials: int = Field(..., ge=0)
    seed: int


class SimulateResponse(BaseModel):
    theta_deg: float
    eta: float
    vis: float
    seed: int
    angles_deg: list[float]
    chsh_value: float
    settings: list[float]
    trials: list[Trial]


class AnalyzeRequest(PbrSettings):
    scenario: ScenarioModel = ScenarioModel()
    settings: Optional[list[float]] = None
    trials: list[Trial]
    protocols: list[Protocol] = ["pbr", "mart", "sd"]
    functional: Optional[FunctionalModel] = None


class TableInfo(BaseModel):
    trial: int
    max_lr_expectation: float
    epsilon: float
    strength_bits: float
    gated: bool


class AnalyzeResponse(BaseModel):
    """Per-trial columns; ``None`` entries are undefined values, absent lists unselected protocols."""

    block_size: Optional[int] = None
    n: list[int]
    log2p_pbr: Optional[list[Optional[float]]] = None
    log2p_mart: Optional[list[Optional[float]]] = None
    log2p_sd: Optional[list[Optional[float]]] = None
    I_hat: Optional[list[Optional[float]]] = None
    I_tilde: Optional[list[Optional[float]]] = None
    sigma: Optional[list[Optional[float]]] = None
    tables: list[TableInfo] = []


class StrengthRequest(BaseModel):
    distribution: DistributionModel
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(10**6, ge=1)


class StrengthResponse(BaseModel):
    strength_bits: float
    epsilon: float
    iterations: int
    converged: bool
    lr_distribution: DistributionModel
    weights: list[float]


class GainPoint(BaseModel):
    theta_deg: float
    eta: float = Field(1.0, ge=0, le=1)
    vis: float = Field(1.0, ge=0, le=1)


class GainsRequest(BaseModel):
    points: list[GainPoint]

    @model_validator(mode="after")
    def _nonempty(self):
        if not self.points:
            raise ValueError("sweep grid is empty")
        return self


class GainRow(GainPoint):
    chsh_value: float
    angles_deg: list[float]
    g_sd: float
    g_mart: float
    strength: float


class GainsResponse(BaseModel):
    rows: list[GainRow]


class SessionCreate(PbrSettings):
    """A live analysis: trials arrive in batches and running p-values are kept."""

    scenario: ScenarioModel = ScenarioModel()
    settings: Optional[list[float]] = None
    functional: Optional[FunctionalModel] = None
    planned_trials: Optional[int] = Field(None, ge=1)


class TrialBatch(BaseModel):
    trials: list[Trial]


class SessionStatus(BaseModel):
    id: str
    n: int
    block_size: int
    log2p_pbr: float
    log2p_mart: Optional[float] = None
    log2p_sd: Optional[float] = None
    I_hat: Optional[float] = None
    I_tilde: Optional[float] = None
    sigma: Optional[float] = None
    tables_installed: int


class ErrorDetail(BaseModel):
    kind: Literal["validation", "nonconvergence", "usage"]
    message: str
    violations: list[str] = []
