"""Stage 1: projected stochastic gradient descent on the second moment.

Plain Robbins-Monro with a decaying step schedule a_k = a0 / (1 + k/kappa)^gamma,
fresh paths every iteration, and gradients normalized by a running estimate
of G so step sizes are scale-free across events of different rarity.
Batches with zero event hits are skipped and the batch size doubles (capped);
a search where every iteration was skipped fails with advice to supply a
pilot tilt.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core.model import MarkovRandomWalkModel, TiltParams
from .core.rng import as_stream
from .errors import ContractError, SearchFailedError, ValidationError, ZeroHitWarning
from .tilting import bind_link, grad_second_moment

__all__ = ["SgdConfig", "TraceRow", "search_tilt", "write_trace_csv"]


@dataclass
class TraceRow:
    iteration: int
    g_estimate: float
    g_se: float
    grad_norm: float
    step_size: float
    batch_size: int
    skipped: bool = False


@dataclass
class SgdConfig:
    """Hyperparameters of the stage-1 search (all overridable; none are from
    the source method, which leaves them unspecified)."""

    initial_theta: Optional[np.ndarray] = None
    initial_eta: Optional[np.ndarray] = None
    iterations: int = 500
    batch_size: int = 1024
    step_a0: float = 0.1
    step_kappa: float = 100.0
    step_gamma: float = 1.0
    projection_margin: float = 1e-6
    early_stop_checks: int = 3     # 0 disables early stopping
    early_stop_se_mult: float = 2.0
    # a gradient-norm-vs-SE comparison only counts as a convergence signal
    # when the batch carried at least this many event hits
    early_stop_min_hits: int = 64
    max_batch: int = 2**20
    # cap on the per-iteration parameter change (norm, parameter units);
    # guards against gradient spikes on models with large state scales
    step_clip: Optional[float] = None
    # fixed diagonal preconditioner: per-coordinate step multipliers, i.e. a
    # choice of parameter units (squared scale).  Balances wildly different
    # coordinate stiffness (e.g. rate offsets of very different magnitudes).
    step_scale_theta: Optional[np.ndarray] = None
    step_scale_eta: Optional[np.ndarray] = None
    # fixed matrix preconditioner for eta (a linear change of coordinates,
    # applied to the normalized gradient).  None means: use the model's
    # "eta_curvature" hint when it provides one, else the identity.
    step_transform_eta: Optional[np.ndarray] = None
    allow_nonconvex: bool = False
    # optional reparameterization theta = tb/sqrt(n), eta = tb/sqrt(n) + eb/n
    # (search stays free by default)
    constrain_lan: bool = False
    lan_horizon: Optional[int] = None

    def __post_init__(self):
        if not (0.5 < self.step_gamma <= 1.0):
            raise ValidationError("step_gamma must lie in (0.5, 1]")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be at least 2")

    def step_size(self, k: int) -> float:
        return self.step_a0 / (1.0 + k / self.step_kappa) ** self.step_gamma


def _project(v: np.ndarray, box, margin: float) -> np.ndarray:
    lo, hi = box
    out = np.array(v, dtype=float, copy=True)
    if lo is not None:
        lo = np.asarray(lo, dtype=float)
        adj = np.where(np.isfinite(lo), lo + margin * np.maximum(1.0, np.abs(lo)), -np.inf)
        out = np.maximum(out, adj)
    if hi is not None:
        hi = np.asarray(hi, dtype=float)
        adj = np.where(np.isfinite(hi), hi - margin * np.maximum(1.0, np.abs(hi)), np.inf)
        out = np.minimum(out, adj)
    return out


def search_tilt(
    model: MarkovRandomWalkModel,
    link,
    event,
    config: SgdConfig,
    rng,
):
    """Minimize G(theta, eta); returns (TiltParams, trace).

    The returned tilt is the last iterate after projection.  The trace records
    one row per iteration (including skipped ones) and can be exported with
    :func:`write_trace_csv`.
    """
    bound = bind_link(model, link)
    if not bound.link.convex_in_eta and not config.allow_nonconvex:
        raise ContractError(
            "link is not linear in eta; pass allow_nonconvex=True to search anyway"
        )
    theta = (
        np.zeros(bound.theta_dim)
        if config.initial_theta is None
        else np.asarray(config.initial_theta, dtype=float).copy()
    )
    eta = (
        np.zeros(bound.eta_dim)
        if config.initial_eta is None
        else np.asarray(config.initial_eta, dtype=float).copy()
    )
    theta = _project(theta, bound.theta_box, config.projection_margin)
    eta = _project(eta, bound.eta_box, config.projection_margin)

    lan = config.constrain_lan
    if lan:
        if bound.theta_dim != bound.eta_dim:
            raise ContractError("constrained LAN search needs theta and eta of equal dim")
        from .core.events import event_horizon

        n_h = float(config.lan_horizon or event_horizon(event))
        sqrt_n = np.sqrt(n_h)

    # a model may publish a fixed curvature-based coordinate change for eta
    # (the log-weight penalty Hessian at eta = 0); without it, models whose
    # coordinates have wildly different stiffness are unsearchable at any
    # scalar step size
    transform_eta = config.step_transform_eta
    if transform_eta is None and "eta_curvature_fn" in bound.extras:
        curv = bound.extras["eta_curvature_fn"](
            bound, event, as_stream(rng, 6999) if not isinstance(rng, np.random.Generator) else rng
        )
        lam = 1e-3 * np.trace(curv) / curv.shape[0]
        transform_eta = np.linalg.inv(curv + lam * np.eye(curv.shape[0]))

    g_running = None
    consecutive_small = 0
    batch = config.batch_size
    made_step = False
    trace: list[TraceRow] = []

    for it in range(config.iterations):
        gen = as_stream(rng, 7001, it) if not isinstance(rng, np.random.Generator) else rng
        tilt = TiltParams(theta, eta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroHitWarning)
            sample = grad_second_moment(bound, None, tilt, event, batch, gen)
        step = config.step_size(it)
        if sample.n_hits == 0:
            trace.append(TraceRow(it, 0.0, 0.0, 0.0, step, batch, skipped=True))
            batch = min(batch * 2, config.max_batch)
            continue
        made_step = True
        g_running = (
            sample.value if g_running is None else 0.9 * g_running + 0.1 * sample.value
        )
        scale = max(g_running, 1e-300)
        g_theta = sample.grad_theta / scale
        g_eta = sample.grad_eta / scale
        if config.step_scale_theta is not None:
            g_theta = g_theta * np.asarray(config.step_scale_theta, dtype=float)
        if config.step_scale_eta is not None:
            g_eta = g_eta * np.asarray(config.step_scale_eta, dtype=float)
        if transform_eta is not None:
            g_eta = transform_eta @ g_eta
        grad_norm = float(np.sqrt(np.sum(sample.grad_theta**2) + np.sum(sample.grad_eta**2)))
        se_norm = float(
            np.sqrt(np.sum(sample.grad_theta_se**2) + np.sum(sample.grad_eta_se**2))
        )
        clip = 1.0
        if config.step_clip is not None:
            move = step * float(np.sqrt(np.sum(g_theta**2) + np.sum(g_eta**2)))
            if move > config.step_clip:
                clip = config.step_clip / move
        if lan:
            tb = sqrt_n * theta
            eb = n_h * (eta - theta)
            tb = tb - clip * step * (g_theta + g_eta) / sqrt_n
            eb = eb - clip * step * g_eta / n_h
            theta = tb / sqrt_n
            eta = tb / sqrt_n + eb / n_h
        else:
            theta = theta - clip * step * g_theta
            eta = eta - clip * step * g_eta
        theta = _project(theta, bound.theta_box, config.projection_margin)
        eta = _project(eta, bound.eta_box, config.projection_margin)
        trace.append(TraceRow(it, sample.value, sample.se, grad_norm, step, batch))
        if config.early_stop_checks > 0 and sample.n_hits >= config.early_stop_min_hits:
            if grad_norm < config.early_stop_se_mult * se_norm:
                consecutive_small += 1
                if consecutive_small >= config.early_stop_checks:
                    break
            else:
                consecutive_small = 0

    if not made_step:
        raise SearchFailedError(
            "every stage-1 iteration was skipped (no event hits even at the batch cap); "
            "supply a pilot tilt via initial_theta/initial_eta"
        )
    return TiltParams(theta, eta), trace


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration", "g_estimate", "g_se", "grad_norm", "step_size", "batch_size", "skipped"]
        )
        for row in trace:
            writer.writerow(
                [
                    row.iteration,
                    repr(row.g_estimate),
                    repr(row.g_se),
                    repr(row.grad_norm),
                    repr(row.step_size),
                    row.batch_size,
                    int(row.skipped),
                ]
            )
