"""Valid running p-values for Bell tests: PBR, martingale and SD protocols."""

__version__ = "0.1.0"

from .scenario import (  # noqa: E402
    BellFunctional,
    JointDistribution,
    Scenario,
    SettingDistribution,
    TrialRecord,
    chsh_functional,
    conditional_uniform,
    validate_distribution,
)
from .lr import (  # noqa: E402
    DeterministicStrategy,
    RatioTable,
    enumerate_strategies,
    epsilon_bound,
    kl_divergence,
    make_pbr,
    minimize_kl,
    strategy_distribution,
)
from .estimation import block_size, empirical_frequencies, ml_fit, smooth, update_estimate  # noqa: E402
from .protocols import GainRates, PbrOptions, RunningResult, gain_rates, martingale_run, pbr_run, sd_run  # noqa: E402
from .chsh import ChshConfig, optimal_angles, quantum_distribution, sample_trials  # noqa: E402
