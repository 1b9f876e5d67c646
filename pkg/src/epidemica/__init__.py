"""Transmissive-attack epidemics: contact processes, a timeout-controlled
propagation engine, mean-field models and tradeoff searches."""
from ._validation import ConfigError, DataError, InfeasibleError
from .analytic import (
    EpidemicParams,
    expected_risk,
    optimal_timeout,
    si_infected_closed_form,
    sis_steady_state,
    solve_epidemic_ode,
    target_success_cdf,
)
from .engine import (
    AttackConfig,
    Channel,
    ExposureStream,
    MonteCarloSummary,
    PatchConfig,
    TrialOutcome,
    run_monte_carlo,
    run_trial,
    wilson_interval,
)
from .estimators import AttackSimulator, EpidemicModel, MeetingRateEstimator
from .mobility import (
    ContactTrace,
    MobilityConfig,
    MobilityModel,
    analytic_meeting_rate,
    estimate_pairwise_meeting_rate,
    generate_contact_trace,
    toroidal_distance,
)
from .optimizer import constrained_config_search, min_timeout_mc, tradeoff_curve
from .scenarios import MobilityScenario, PoissonMixingScenario, StreamScenario
from .traces import (
    DualPathConfig,
    SocialGraph,
    build_exposure_stream,
    import_contact_csv,
    import_social_csv,
)

__all__ = [
    "ConfigError",
    "DataError",
    "InfeasibleError",
    "EpidemicParams",
    "expected_risk",
    "optimal_timeout",
    "si_infected_closed_form",
    "sis_steady_state",
    "solve_epidemic_ode",
    "target_success_cdf",
    "AttackConfig",
    "Channel",
    "ExposureStream",
    "MonteCarloSummary",
    "PatchConfig",
    "TrialOutcome",
    "run_monte_carlo",
    "run_trial",
    "wilson_interval",
    "AttackSimulator",
    "EpidemicModel",
    "MeetingRateEstimator",
    "ContactTrace",
    "MobilityConfig",
    "MobilityModel",
    "analytic_meeting_rate",
    "estimate_pairwise_meeting_rate",
    "generate_contact_trace",
    "toroidal_distance",
    "constrained_config_search",
    "min_timeout_mc",
    "tradeoff_curve",
    "MobilityScenario",
    "PoissonMixingScenario",
    "StreamScenario",
    "DualPathConfig",
    "SocialGraph",
    "build_exposure_stream",
    "import_contact_csv",
    "import_social_csv",
]

__version__ = "0.1.0"
