"""Markov random walk abstraction and path simulation.

A model bundles the latent-chain transition sampler, the increment sampler,
the two cumulant functions psi (increments) and phi (transitions), the link
function k attached at construction time, and the derivatives needed by the
variance-minimization stage.  All samplers and evaluators are *batched*:
states are ``(n, state_dim)`` float arrays and evaluators return ``(n,)`` or
``(n, dim)`` arrays.  Single-path simulation wraps the batch machinery with
``n = 1``.

Tilting convention: under tilt ``(theta, eta)`` the chain moves by
``p_eta(x, dx') = exp(k(x,x',eta) - phi(x,eta)) p(x, dx')`` and the increment
density is ``exp(theta'y - psi(x,x',theta)) rho(y|x,x')``.  The unbiased
estimator weight accumulates, per step,

    -theta'y_i - k(x_{i-1}, x_i, eta) + psi(x_{i-1}, x_i, theta) + phi(x_{i-1}, eta)

in log space; the exponential is taken only at aggregation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from ..errors import ContractError, NumericOverflowError, ParameterDomainError
from .events import (
    EventSpec,
    FirstPassageBeforeT,
    FixedTimeThreshold,
    JointPassageAndTerminal,
    compare,
    event_horizon,
)

__all__ = [
    "TiltParams",
    "MarkovRandomWalkModel",
    "PathRecord",
    "BatchPaths",
    "simulate_path",
    "simulate_batch",
    "event_value",
    "path_record_json",
]

Array = np.ndarray


@dataclass(frozen=True)
class TiltParams:
    """The pair (theta, eta) indexing a member of the duo-exponential family."""

    theta: Array
    eta: Array

    def __post_init__(self):
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "eta", np.atleast_1d(np.asarray(self.eta, dtype=float)))

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.theta) or np.any(self.eta))

    @staticmethod
    def zero(model: "MarkovRandomWalkModel") -> "TiltParams":
        return TiltParams(np.zeros(model.theta_dim), np.zeros(model.eta_dim))


@dataclass(frozen=True)
class MarkovRandomWalkModel:
    """A Markov random walk equipped with a duo-exponential tilting family.

    Samplers draw batches given the tilt parameters; evaluators are exact
    closed forms.  The contract every constructor must honour:

    * ``psi(x, x', 0) == 0``, ``phi(x, 0) == 0`` and ``k(x, x', 0) == 0``
      exactly (bitwise), so a zero tilt reproduces the original measure and
      carries log-weight 0.
    * ``domain_check(0, 0)`` is true.
    * Samplers are pure functions of their arguments and the passed stream.
    """

    name: str
    state_dim: int
    incr_dim: int
    eta_dim: int
    # (n, rng) -> (n, state_dim)
    initial_sampler: Callable[[int, np.random.Generator], Array]
    # (X, eta, rng) -> (n, state_dim); samples p_eta(x, .)
    transition_sampler: Callable[[Array, Array, np.random.Generator], Array]
    # (X, X', theta, rng) -> (n, incr_dim); samples rho_theta(y | x, x')
    increment_sampler: Callable[[Array, Array, Array, np.random.Generator], Array]
    psi: Callable[[Array, Array, Array], Array]
    phi: Callable[[Array, Array], Array]
    link: Any  # LinkFunction; typed loosely to keep core free of tilting imports
    dpsi_dtheta: Callable[[Array, Array, Array], Array]
    dphi_deta: Callable[[Array, Array], Array]
    domain_check: Callable[[Array, Array], bool]
    # theta_dim == incr_dim unless the additive part is degenerate (then 0)
    theta_dim: Optional[int] = None
    theta_box: tuple = (None, None)  # (lo, hi) arrays or None for unbounded
    eta_box: tuple = (None, None)
    is_absorbing: Optional[Callable[[Array], Array]] = None
    # S_0 as a function of X_0; default zeros.  Degenerate-additive models set
    # this to the identity so the running sum *is* the state.
    initial_sum: Optional[Callable[[Array], Array]] = None
    # optional closed-form increment log-density, for validation only
    increment_logpdf: Optional[Callable[[Array, Array, Array], Array]] = None
    # optional fused evaluator returning (psi - k + phi, dpsi, -dk + dphi)
    # in one pass; semantically identical to composing the fields above,
    # provided by models whose evaluators share expensive intermediates
    step_terms: Optional[Callable] = None
    # rebuild this model with a different link (finite chains support this)
    rebind_link: Optional[Callable[[Any], "MarkovRandomWalkModel"]] = None
    affine: Any = None          # AffineSpec when the model is affine
    chain: Any = None           # FiniteChainSpec for finite-state models
    classical_eta: Optional[Callable[[Array], Array]] = None  # theta -> A(theta)+D0(theta)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.theta_dim is None:
            object.__setattr__(self, "theta_dim", self.incr_dim)

    # The spec surfaces the attached link's evaluators as model fields.
    @property
    def link_k(self):
        return self.link.k

    @property
    def dk_deta(self):
        return self.link.dk_deta

    def zero_tilt(self) -> TiltParams:
        return TiltParams.zero(self)

    def require_in_domain(self, tilt: TiltParams) -> None:
        if tilt.theta.shape != (self.theta_dim,) or tilt.eta.shape != (self.eta_dim,):
            raise ContractError(
                f"tilt dims {tilt.theta.shape}/{tilt.eta.shape} do not match model "
                f"({self.theta_dim},)/({self.eta_dim},)"
            )
        if not self.domain_check(tilt.theta, tilt.eta):
            raise ParameterDomainError(
                f"tilt theta={tilt.theta}, eta={tilt.eta} outside the domain of {self.name}"
            )


@dataclass
class PathRecord:
    """One simulated trajectory with its accumulated log-weight components."""

    states: Array            # (tau+1, state_dim)
    increments: Array        # (tau, incr_dim)
    running_sums: Array      # (tau+1, incr_dim)
    terminal_sum: Array      # (incr_dim,)
    stop_step: int
    log_weight: float
    event_hit: bool
    absorbed: bool = False
    horizon: int = 0


@dataclass
class BatchPaths:
    """Vectorized result of simulating a batch of paths against one event."""

    f: Array                 # (n,) indicator values
    log_weight: Array        # (n,) log weights at the evaluation tilt
    terminal_sum: Array      # (n, incr_dim)
    stop_step: Array         # (n,)
    sum_y: Array             # (n, incr_dim) total additive increment (walk from 0)
    grad_theta: Optional[Array] = None  # (n, theta_dim): -sum_y + sum dpsi/dtheta
    grad_eta: Optional[Array] = None    # (n, eta_dim): sum (-dk/deta + dphi/deta)


def _passage_events(event: EventSpec):
    """(passage_spec or None, terminal checks or None, stops_at_passage)."""
    if isinstance(event, FixedTimeThreshold):
        return None, (event.component, event.threshold, event.direction), False
    if isinstance(event, FirstPassageBeforeT):
        return event, None, True
    if isinstance(event, JointPassageAndTerminal):
        return (
            event.passage,
            (event.terminal_component, event.terminal_threshold, event.terminal_direction),
            False,
        )
    raise ContractError(f"unknown event type {type(event).__name__}")


def simulate_batch(
    model: MarkovRandomWalkModel,
    event: EventSpec,
    sim_tilt: TiltParams,
    eval_tilt: TiltParams,
    n: int,
    rng: np.random.Generator,
    want_grad: bool = False,
) -> BatchPaths:
    """Simulate n paths under ``sim_tilt`` and accumulate weight terms at ``eval_tilt``.

    Sampling under the original measure with ``eval_tilt`` elsewhere is how
    the second-moment objective and its gradients are estimated; stage-2
    importance sampling passes the same tilt for both roles.
    """
    model.require_in_domain(sim_tilt)
    model.require_in_domain(eval_tilt)
    horizon = event_horizon(event)
    passage, terminal, stops_at_passage = _passage_events(event)

    X = np.asarray(model.initial_sampler(n, rng), dtype=float)
    if X.shape != (n, model.state_dim):
        raise ContractError(f"initial_sampler returned shape {X.shape}")
    S = model.initial_sum(X) if model.initial_sum is not None else np.zeros((n, model.incr_dim))
    S = np.array(S, dtype=float, copy=True)
    sum_y = np.zeros((n, model.incr_dim))
    logw = np.zeros(n)
    active = np.ones(n, dtype=bool)
    stop_step = np.full(n, horizon, dtype=np.int64)
    passed = np.zeros(n, dtype=bool)
    absorbed = np.zeros(n, dtype=bool)
    sum_dpsi = np.zeros((n, model.theta_dim)) if want_grad else None
    sum_deta = np.zeros((n, model.eta_dim)) if want_grad else None

    theta_live = model.theta_dim > 0 and bool(np.any(eval_tilt.theta))

    if passage is not None:
        hit0 = compare(S[:, passage.component], passage.barrier, passage.direction)
        passed |= hit0
        if stops_at_passage:
            stop_step[hit0] = 0
            active &= ~hit0

    for step in range(1, horizon + 1):
        if model.is_absorbing is not None:
            newly = active & np.asarray(model.is_absorbing(X), dtype=bool)
            if np.any(newly):
                stop_step[newly] = step - 1
                absorbed |= newly
                active &= ~newly
        if not np.any(active):
            break

        try:
            X2 = model.transition_sampler(X, sim_tilt.eta, rng)
            Y = model.increment_sampler(X, X2, sim_tilt.theta, rng)
        except NumericOverflowError as exc:
            raise NumericOverflowError(str(exc), step=step) from exc
        X2 = np.asarray(X2, dtype=float)
        Y = np.asarray(Y, dtype=float)

        if model.step_terms is not None:
            term, dpsi, deta = model.step_terms(
                X, X2, eval_tilt.theta, eval_tilt.eta, want_grad
            )
        else:
            term = (
                model.psi(X, X2, eval_tilt.theta)
                - model.link.k(X, X2, eval_tilt.eta)
                + model.phi(X, eval_tilt.eta)
            )
            dpsi = deta = None
            if want_grad:
                if model.theta_dim > 0:
                    dpsi = model.dpsi_dtheta(X, X2, eval_tilt.theta)
                if model.eta_dim > 0:
                    deta = model.dphi_deta(X, eval_tilt.eta) - model.link.dk_deta(
                        X, X2, eval_tilt.eta
                    )
        if theta_live:
            term = term - Y[:, : model.theta_dim] @ eval_tilt.theta
        bad = active & ~(
            np.isfinite(term) & np.isfinite(X2).all(axis=1) & np.isfinite(Y).all(axis=1)
        )
        if np.any(bad):
            raise NumericOverflowError(
                f"non-finite state or weight term in {model.name}", step=step
            )

        if want_grad:
            if model.theta_dim > 0 and dpsi is not None:
                sum_dpsi[active] += dpsi[active]
            if model.eta_dim > 0 and deta is not None:
                sum_deta[active] += deta[active]

        logw[active] += term[active]
        S[active] += Y[active]
        sum_y[active] += Y[active]
        X = np.where(active[:, None], X2, X)

        if passage is not None:
            crossed = active & compare(S[:, passage.component], passage.barrier, passage.direction)
            newly = crossed & ~passed
            passed |= newly
            if stops_at_passage and np.any(newly):
                stop_step[newly] = step
                active &= ~newly

    # stopped-early paths keep their recorded stop_step; the rest ran to the
    # horizon (or to absorption, already recorded)
    if passage is not None and stops_at_passage:
        f = passed.astype(float)
    elif terminal is not None:
        comp, level, direction = terminal
        ok = compare(S[:, comp], level, direction)
        f = (ok & passed).astype(float) if passage is not None else ok.astype(float)
    else:  # pragma: no cover - exhaustively handled above
        raise ContractError("unreachable event decomposition")

    grad_theta = None
    grad_eta = None
    if want_grad:
        grad_theta = sum_dpsi - sum_y[:, : model.theta_dim] if model.theta_dim > 0 else sum_dpsi
        grad_eta = sum_deta
    return BatchPaths(
        f=f,
        log_weight=logw,
        terminal_sum=S,
        stop_step=stop_step,
        sum_y=sum_y,
        grad_theta=grad_theta,
        grad_eta=grad_eta,
    )


def simulate_path(
    model: MarkovRandomWalkModel,
    tilt: TiltParams,
    event: EventSpec,
    rng: np.random.Generator,
) -> PathRecord:
    """Simulate one trajectory under P_{theta,eta}, recording states and weights.

    The log-weight is accumulated term by term as each step is drawn; with a
    zero tilt every term is exactly 0.0.
    """
    model.require_in_domain(tilt)
    horizon = event_horizon(event)
    passage, terminal, stops_at_passage = _passage_events(event)

    X = np.asarray(model.initial_sampler(1, rng), dtype=float)
    S = (
        np.array(model.initial_sum(X), dtype=float, copy=True)
        if model.initial_sum is not None
        else np.zeros((1, model.incr_dim))
    )
    states = [X[0].copy()]
    sums = [S[0].copy()]
    increments = []
    logw = 0.0
    absorbed = False
    passed = False
    stop = horizon
    theta_live = model.theta_dim > 0 and bool(np.any(tilt.theta))

    if passage is not None and bool(
        compare(S[:, passage.component], passage.barrier, passage.direction)[0]
    ):
        passed = True
        if stops_at_passage:
            stop = 0

    step = 0
    while step < horizon:
        if stops_at_passage and passed:
            break
        step += 1
        if model.is_absorbing is not None and bool(model.is_absorbing(X)[0]):
            absorbed = True
            stop = step - 1
            break
        try:
            X2 = np.asarray(model.transition_sampler(X, tilt.eta, rng), dtype=float)
            Y = np.asarray(model.increment_sampler(X, X2, tilt.theta, rng), dtype=float)
        except NumericOverflowError as exc:
            raise NumericOverflowError(str(exc), step=step) from exc
        term = float(
            model.psi(X, X2, tilt.theta)[0]
            - model.link.k(X, X2, tilt.eta)[0]
            + model.phi(X, tilt.eta)[0]
        )
        if theta_live:
            term -= float(Y[0, : model.theta_dim] @ tilt.theta)
        if not (np.isfinite(term) and np.isfinite(X2).all() and np.isfinite(Y).all()):
            raise NumericOverflowError(f"non-finite state or weight term in {model.name}", step=step)
        logw += term
        S = S + Y
        X = X2
        states.append(X[0].copy())
        sums.append(S[0].copy())
        increments.append(Y[0].copy())
        if passage is not None and not passed:
            if bool(compare(S[:, passage.component], passage.barrier, passage.direction)[0]):
                passed = True
                if stops_at_passage:
                    stop = step
                    break

    tau = len(increments)
    if not absorbed and not (stops_at_passage and passed):
        stop = tau

    if stops_at_passage:
        hit = passed
    else:
        comp, level, direction = terminal
        ok = bool(compare(S[:, comp], level, direction)[0])
        hit = (ok and passed) if passage is not None else ok

    return PathRecord(
        states=np.asarray(states),
        increments=(
            np.asarray(increments) if increments else np.zeros((0, model.incr_dim))
        ),
        running_sums=np.asarray(sums),
        terminal_sum=S[0].copy(),
        stop_step=stop,
        log_weight=logw,
        event_hit=hit,
        absorbed=absorbed,
        horizon=horizon,
    )


def event_value(event: EventSpec, path: PathRecord) -> float:
    """Evaluate F(S_tau) for a recorded path.

    Raises ContractError when the path was simulated with an incompatible
    stopping rule (wrong horizon, or too short for a fixed-time event).
    """
    if isinstance(event, FixedTimeThreshold):
        if path.horizon != event.n and path.stop_step != event.n and not path.absorbed:
            raise ContractError(
                f"path horizon {path.horizon} incompatible with fixed-time n={event.n}"
            )
        return float(compare(path.terminal_sum[event.component], event.threshold, event.direction))
    if isinstance(event, FirstPassageBeforeT):
        if path.horizon != event.horizon:
            raise ContractError(
                f"path horizon {path.horizon} incompatible with passage T={event.horizon}"
            )
        sums = path.running_sums[:, event.component]
        crossed = compare(sums, event.barrier, event.direction)
        return float(np.any(crossed))
    if isinstance(event, JointPassageAndTerminal):
        if path.horizon != event.passage.horizon:
            raise ContractError("path horizon incompatible with joint event")
        if path.stop_step < event.passage.horizon and not path.absorbed:
            raise ContractError("joint event requires the path to run to T")
        p = event.passage
        crossed = bool(np.any(compare(path.running_sums[:, p.component], p.barrier, p.direction)))
        terminal = bool(
            compare(
                path.terminal_sum[event.terminal_component],
                event.terminal_threshold,
                event.terminal_direction,
            )
        )
        return float(crossed and terminal)
    raise ContractError(f"unknown event type {type(event).__name__}")


def path_record_json(path: PathRecord) -> str:
    """One-line JSON serialization of a path, for debugging output."""
    return json.dumps(
        {
            "states": path.states.tolist(),
            "increments": path.increments.tolist(),
            "log_weight": path.log_weight,
            "event": bool(path.event_hit),
        }
    )
