from .chain import (
    FiniteChainSpec,
    GaussianIncrements,
    LatticeIncrements,
    RegimeSwitchingAr1,
    build_finite_chain,
    build_regime_switching_ar1,
    chain_perron,
    dp_second_moment,
    dp_weighted_probability,
    exact_probability,
)
from .events import (
    EventSpec,
    FirstPassageBeforeT,
    FixedTimeThreshold,
    JointPassageAndTerminal,
    event_horizon,
    event_id,
)
from .model import (
    BatchPaths,
    MarkovRandomWalkModel,
    PathRecord,
    TiltParams,
    event_value,
    path_record_json,
    simulate_batch,
    simulate_path,
)
from .rng import BLOCK_SIZE, as_stream, stream

__all__ = [
    "FiniteChainSpec",
    "GaussianIncrements",
    "LatticeIncrements",
    "RegimeSwitchingAr1",
    "build_finite_chain",
    "build_regime_switching_ar1",
    "chain_perron",
    "dp_second_moment",
    "dp_weighted_probability",
    "exact_probability",
    "EventSpec",
    "FirstPassageBeforeT",
    "FixedTimeThreshold",
    "JointPassageAndTerminal",
    "event_horizon",
    "event_id",
    "BatchPaths",
    "MarkovRandomWalkModel",
    "PathRecord",
    "TiltParams",
    "event_value",
    "path_record_json",
    "simulate_batch",
    "simulate_path",
    "BLOCK_SIZE",
    "as_stream",
    "stream",
]
