"""duotilt: rare-event simulation for Markov random walks.

Importance sampling with a two-parameter exponential change of measure: the
increment law is tilted by theta and the latent transition kernel by eta
through a link function.  A stochastic-gradient stage minimizes the
estimator's second moment over (theta, eta), then standard importance
sampling runs at the found tilt.  Ships discretized Heston, stochastic SIRD
and VAR-GARCH models, an affine eigen/Poisson toolkit, exact finite-chain
oracles for verification, and a config-driven CLI harness.
"""

__version__ = "0.1.0"

from .core import (
    FiniteChainSpec,
    FirstPassageBeforeT,
    FixedTimeThreshold,
    GaussianIncrements,
    JointPassageAndTerminal,
    LatticeIncrements,
    MarkovRandomWalkModel,
    PathRecord,
    TiltParams,
    build_finite_chain,
    build_regime_switching_ar1,
    event_value,
    exact_probability,
    simulate_path,
)
from .estimators import (
    EfficiencyReport,
    EstimateSummary,
    classical_estimate,
    covar_bisection,
    efficiency_report,
    importance_estimate,
    ld_tilt_param,
    plain_mc,
    two_stage_estimate,
)
from .models import (
    AffineSpec,
    HestonParams,
    SirdParams,
    VarGarchParams,
    build_heston,
    build_sird,
    build_var_garch,
    solve_affine_eigen,
    solve_poisson,
)
from .optimizer import SgdConfig, search_tilt
from .tilting import (
    LinkFunction,
    grad_second_moment,
    make_classical_embedding_link,
    make_classical_link,
    make_lan_link,
    second_moment_estimate,
)

__all__ = [
    "__version__",
    "FiniteChainSpec",
    "FirstPassageBeforeT",
    "FixedTimeThreshold",
    "GaussianIncrements",
    "JointPassageAndTerminal",
    "LatticeIncrements",
    "MarkovRandomWalkModel",
    "PathRecord",
    "TiltParams",
    "build_finite_chain",
    "build_regime_switching_ar1",
    "event_value",
    "exact_probability",
    "simulate_path",
    "EfficiencyReport",
    "EstimateSummary",
    "classical_estimate",
    "covar_bisection",
    "efficiency_report",
    "importance_estimate",
    "ld_tilt_param",
    "plain_mc",
    "two_stage_estimate",
    "AffineSpec",
    "HestonParams",
    "SirdParams",
    "VarGarchParams",
    "build_heston",
    "build_sird",
    "build_var_garch",
    "solve_affine_eigen",
    "solve_poisson",
    "SgdConfig",
    "search_tilt",
    "LinkFunction",
    "grad_second_moment",
    "make_classical_embedding_link",
    "make_classical_link",
    "make_lan_link",
    "second_moment_estimate",
]
