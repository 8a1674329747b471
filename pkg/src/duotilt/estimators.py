"""Estimators: plain MC, tilted importance sampling, the two-stage method,
the classical large-deviation baseline, CoVaR bisection, and efficiency
reporting against a baseline run.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core.chain import FiniteChainSpec, chain_perron
from .core.events import (
    EventSpec,
    FirstPassageBeforeT,
    FixedTimeThreshold,
    JointPassageAndTerminal,
    event_id,
)
from .core.model import MarkovRandomWalkModel, TiltParams
from .errors import (
    BracketError,
    ConditioningTooRareError,
    ContractError,
    SearchFailedError,
)
from .optimizer import SgdConfig, search_tilt
from .tilting import bind_link, collect_paths, make_classical_embedding_link, weighted_values

__all__ = [
    "EstimateSummary",
    "EfficiencyReport",
    "plain_mc",
    "importance_estimate",
    "two_stage_estimate",
    "ld_tilt_param",
    "classical_estimate",
    "covar_bisection",
    "efficiency_report",
    "summary_csv_row",
    "SUMMARY_COLUMNS",
]


@dataclass
class EstimateSummary:
    mean: float
    std_error: float
    sample_variance: float
    n: int
    elapsed_seconds: float
    method: str
    tilt: Optional[TiltParams] = None
    event_id: Optional[str] = None
    n_hits: int = 0
    stage1_samples: int = 0


@dataclass
class EfficiencyReport:
    sd_reduction_ratio: float
    time_consumption_ratio: float
    efficiency_ratio: float


def _aggregate(paths, n: int):
    vals, scale = weighted_values(paths.f, paths.log_weight)
    mean = float(np.exp(scale) * np.mean(vals))
    sample_var = float(np.exp(2.0 * scale) * np.var(vals, ddof=1)) if n > 1 else 0.0
    return mean, sample_var, int(np.sum(paths.f > 0))


def importance_estimate(
    model: MarkovRandomWalkModel,
    link,
    tilt: TiltParams,
    event: EventSpec,
    n: int,
    rng,
    method: str = "importance",
) -> EstimateSummary:
    """Mean of F * exp(log weight) over n paths drawn under the tilt."""
    if n < 2:
        raise ContractError("n must be at least 2")
    bound = bind_link(model, link)
    bound.require_in_domain(tilt)
    t0 = time.perf_counter()
    paths = collect_paths(bound, event, tilt, tilt, n, rng, key=(2,))
    mean, sample_var, n_hits = _aggregate(paths, n)
    elapsed = time.perf_counter() - t0
    return EstimateSummary(
        mean=mean,
        std_error=float(np.sqrt(sample_var / n)),
        sample_variance=sample_var,
        n=n,
        elapsed_seconds=elapsed,
        method=method,
        tilt=tilt,
        event_id=event_id(event),
        n_hits=n_hits,
    )


def plain_mc(model: MarkovRandomWalkModel, event: EventSpec, n: int, rng) -> EstimateSummary:
    """Untilted baseline; bitwise identical to importance sampling at tilt (0,0)."""
    summary = importance_estimate(model, None, model.zero_tilt(), event, n, rng, method="plain")
    return summary


def two_stage_estimate(
    model: MarkovRandomWalkModel,
    link,
    event: EventSpec,
    sgd_config: SgdConfig,
    n: int,
    rng,
):
    """Stage-1 search followed by importance sampling at the found tilt.

    Elapsed time covers both stages; the stage-1 sample count is recorded on
    the summary so efficiency comparisons charge the search to the method.
    """
    bound = bind_link(model, link)
    t0 = time.perf_counter()
    tilt, trace = search_tilt(bound, None, event, sgd_config, rng)
    summary = importance_estimate(bound, None, tilt, event, n, rng, method="two_stage")
    summary.elapsed_seconds = time.perf_counter() - t0
    summary.stage1_samples = int(sum(row.batch_size for row in trace))
    return summary, tilt, trace


def _lambda_fn(spec):
    """Lambda(theta) for specs exposing an eigenvalue: affine or finite chain."""
    from .models.affine import AffineSpec, solve_affine_eigen

    if isinstance(spec, AffineSpec):
        if spec.incr_dim != 1:
            raise ContractError("LD tilt selection is one-dimensional")
        return lambda th: solve_affine_eigen(spec, np.array([th]))[1]
    if isinstance(spec, FiniteChainSpec):
        return lambda th: chain_perron(spec, th)[0]
    raise ContractError(f"no eigenvalue available for {type(spec).__name__}")


def ld_tilt_param(spec, event: EventSpec, tol: float = 1e-10) -> float:
    """Large-deviation tilt: solve Lambda'(theta) = c/n for a fixed-time event.

    Lambda' is a centered difference of the eigenvalue (h = 1e-6); the root is
    found by safeguarded bracketing.  A flat Lambda' (deterministic walk) at
    the target rate is degenerate: any theta solves, 0 is returned with a
    warning.
    """
    if not isinstance(event, FixedTimeThreshold):
        raise ContractError("LD tilt selection requires a fixed-time threshold event")
    rate = event.threshold / event.n
    lam = _lambda_fn(spec)
    h = 1e-6

    def dlam(th: float) -> float:
        try:
            return (lam(th + h) - lam(th - h)) / (2.0 * h)
        except Exception:
            return np.nan

    f0 = dlam(0.0)
    if not np.isfinite(f0):
        raise BracketError("Lambda' not computable at 0")
    if abs(dlam(1e-3) - f0) < 1e-12 and abs(dlam(-1e-3) - f0) < 1e-12:
        # flat derivative: deterministic walk
        if abs(f0 - rate) <= 1e-9:
            warnings.warn("degenerate LD root: any theta solves Lambda' = c/n", stacklevel=2)
            return 0.0
        raise BracketError(f"c/n = {rate} outside the (constant) range of Lambda'")

    lo, hi = 0.0, 0.0
    step = 0.5
    flo = fhi = f0 - rate
    for _ in range(200):
        if flo <= 0.0 <= fhi:
            break
        if fhi < 0.0:
            cand = hi + step
            val = dlam(cand)
            if np.isfinite(val):
                hi, fhi = cand, val - rate
                step *= 2.0
            else:
                step *= 0.5
        else:
            cand = lo - step
            val = dlam(cand)
            if np.isfinite(val):
                lo, flo = cand, val - rate
                step *= 2.0
            else:
                step *= 0.5
        if step < 1e-14:
            raise BracketError(f"c/n = {rate} outside the attainable range of Lambda'")
    else:
        raise BracketError(f"c/n = {rate} outside the attainable range of Lambda'")

    from scipy.optimize import brentq

    return float(brentq(lambda th: dlam(th) - rate, lo, hi, xtol=tol))


def classical_estimate(
    model: MarkovRandomWalkModel, event: EventSpec, n: int, rng
) -> EstimateSummary:
    """One-parameter classical exponential-tilting baseline at the LD tilt.

    Affine models use the linear link at eta = A(theta) + D0(theta); finite
    chains use the exact embedding link (Perron eigenfunction) at eta = theta.
    """
    t0 = time.perf_counter()
    if model.affine is not None and model.classical_eta is not None:
        theta = ld_tilt_param(model.affine, event)
        eta = np.atleast_1d(model.classical_eta(np.array([theta])))
        tilt = TiltParams(np.array([theta]), eta)
        summary = importance_estimate(model, None, tilt, event, n, rng, method="classical")
    elif model.chain is not None:
        theta = ld_tilt_param(model.chain, event)
        linked = bind_link(model, make_classical_embedding_link(model.chain))
        tilt = TiltParams(np.array([theta]), np.array([theta]))
        summary = importance_estimate(linked, None, tilt, event, n, rng, method="classical")
    else:
        raise ContractError(
            "classical tilting needs an affine structure or a finite chain"
        )
    summary.elapsed_seconds = time.perf_counter() - t0
    return summary


def efficiency_report(candidate: EstimateSummary, baseline: EstimateSummary) -> EfficiencyReport:
    """Standard-deviation reduction over the square root of the time ratio."""
    if candidate.n != baseline.n:
        raise ContractError("efficiency comparison requires equal sample sizes")
    if (
        candidate.event_id is not None
        and baseline.event_id is not None
        and candidate.event_id != baseline.event_id
    ):
        raise ContractError("efficiency comparison requires the same event")
    sd_reduction = baseline.std_error / candidate.std_error
    time_ratio = candidate.elapsed_seconds / baseline.elapsed_seconds
    return EfficiencyReport(
        sd_reduction_ratio=sd_reduction,
        time_consumption_ratio=time_ratio,
        efficiency_ratio=sd_reduction / np.sqrt(time_ratio),
    )


def covar_bisection(
    model: MarkovRandomWalkModel,
    link,
    conditional_event: FirstPassageBeforeT,
    target_component: int,
    q: float,
    sgd_config: SgdConfig,
    n_per_eval: int,
    tolerance: float,
    rng,
    max_iterations: int = 100,
    tilt_refresh_every: int = 5,
):
    """Quantile of one component's terminal value given a passage event.

    Returns -b* where P(S_j(T) <= b* | tau <= T) = 1 - q within ``tolerance``
    on the estimated conditional CDF.  The denominator is estimated once with
    its own optimized tilt; the numerator (a joint passage-and-terminal
    event) is re-estimated per bisection iterate under common random numbers,
    with its tilt re-optimized every ``tilt_refresh_every`` iterations.
    """
    if not (0.0 < q < 1.0):
        raise ContractError("q must lie in (0, 1)")
    if isinstance(rng, np.random.Generator):
        raise ContractError("covar_bisection needs an integer seed (common random numbers)")
    if not isinstance(conditional_event, FirstPassageBeforeT):
        raise ContractError("the conditioning event must be a first passage")
    seed = int(rng)
    bound = bind_link(model, link)
    target = 1.0 - q

    den, den_tilt, _ = two_stage_estimate(
        bound, None, conditional_event, sgd_config, n_per_eval, seed + 31
    )
    if den.mean < 10.0 / n_per_eval:
        raise ConditioningTooRareError(
            f"conditioning probability {den.mean:.3e} below floor {10.0 / n_per_eval:.3e}"
        )

    # pilot run under the original measure for the starting bracket point
    probe = FixedTimeThreshold(
        n=conditional_event.horizon, component=target_component, threshold=0.0
    )
    pilot = collect_paths(
        bound, probe, bound.zero_tilt(), bound.zero_tilt(), n_per_eval, seed + 32, key=(3,)
    )
    b = float(np.quantile(pilot.terminal_sum[:, target_component], target))

    def joint(bval: float) -> JointPassageAndTerminal:
        return JointPassageAndTerminal(
            passage=conditional_event,
            terminal_component=target_component,
            terminal_threshold=bval,
            terminal_direction="below",
        )

    def optimize(bval: float, attempt: int, init: Optional[TiltParams]):
        cfg = SgdConfig(
            initial_theta=None if init is None else init.theta,
            initial_eta=None if init is None else init.eta,
            iterations=sgd_config.iterations,
            batch_size=sgd_config.batch_size,
            step_a0=sgd_config.step_a0,
            step_kappa=sgd_config.step_kappa,
            step_gamma=sgd_config.step_gamma,
            max_batch=sgd_config.max_batch,
        )
        try:
            tilt, _ = search_tilt(bound, None, joint(bval), cfg, seed + 41 + attempt)
            return tilt
        except SearchFailedError:
            return init if init is not None else den_tilt

    tilt_num = optimize(b, 0, None)

    def cdf(bval: float) -> float:
        # common random numbers: every evaluation reuses the same stream key
        num = importance_estimate(bound, None, tilt_num, joint(bval), n_per_eval, seed + 52)
        return num.mean / den.mean

    # the estimated CDF is nondecreasing in b under common random numbers, so
    # doubling steps away from the pilot quantile yields a valid bracket
    c0 = cdf(b)
    spread = float(np.std(pilot.terminal_sum[:, target_component]))
    step = max(spread, abs(b) * 0.5, 1e-6)
    lo = hi = b
    if c0 >= target:
        for _ in range(60):
            lo -= step
            step *= 2.0
            if cdf(lo) <= target:
                break
        else:
            raise BracketError("could not bracket the conditional quantile in 60 doublings")
    else:
        for _ in range(60):
            hi += step
            step *= 2.0
            if cdf(hi) >= target:
                break
        else:
            raise BracketError("could not bracket the conditional quantile in 60 doublings")

    mid = b
    refresh = 0
    for it in range(max_iterations):
        mid = 0.5 * (lo + hi)
        if it > 0 and it % tilt_refresh_every == 0:
            refresh += 1
            tilt_num = optimize(mid, refresh, tilt_num)
        c_mid = cdf(mid)
        if abs(c_mid - target) <= tolerance:
            return -mid
        if c_mid < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, abs(hi)):
            break
    return -0.5 * (lo + hi)


SUMMARY_COLUMNS = [
    "method",
    "event_id",
    "mean",
    "std_error",
    "n",
    "elapsed_s",
    "sd_reduction",
    "time_ratio",
    "efficiency_ratio",
    "tilt_theta",
    "tilt_eta",
]


def summary_csv_row(summary: EstimateSummary, report: Optional[EfficiencyReport] = None):
    def vec(a):
        if a is None or a.size == 0:
            return ""
        return ";".join(repr(float(v)) for v in a)

    return [
        summary.method,
        summary.event_id or "",
        repr(summary.mean),
        repr(summary.std_error),
        summary.n,
        repr(summary.elapsed_seconds),
        repr(report.sd_reduction_ratio) if report else "",
        repr(report.time_consumption_ratio) if report else "",
        repr(report.efficiency_ratio) if report else "",
        vec(summary.tilt.theta if summary.tilt else None),
        vec(summary.tilt.eta if summary.tilt else None),
    ]
