"""Link functions and the second-moment objective of the tilted estimator.

The variance of the importance-sampling estimator is controlled by the
second moment

    G(theta, eta) = E[ F^2(S_tau) exp{ -theta'S_tau
                       + sum_i -k(X_{i-1},X_i,eta) + psi(X_{i-1},X_i,theta)
                       + phi(X_{i-1},eta) } ],

an expectation under the *original* measure.  Both the value and its
gradients (obtained by differentiating inside the expectation) are estimated
here from a single batch of untilted paths; when the link is linear in eta
the objective is convex with a unique global minimum, which is what the
stage-1 search exploits.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core.model import BatchPaths, MarkovRandomWalkModel, TiltParams, simulate_batch
from .core.rng import BLOCK_SIZE, as_stream
from .errors import ContractError, ZeroHitWarning

__all__ = [
    "LinkFunction",
    "indicator_link",
    "linear_state_link",
    "linear_link",
    "make_lan_link",
    "make_classical_link",
    "make_classical_embedding_link",
    "ObjectiveSample",
    "second_moment_estimate",
    "grad_second_moment",
]

LINEAR_IN_STATE = "linear_in_state"
LINEAR_GENERAL = "linear_general"
CLASSICAL_EMBEDDING = "classical_embedding"
DIFFUSION_BASIS = "diffusion_basis"


@dataclass(frozen=True)
class LinkFunction:
    """Scalar link k(x, x', eta) selecting the transition exponential family.

    ``k`` and ``dk_deta`` take batched states; ``k_tilde`` is set for links
    linear in eta (k = eta' k_tilde(x, x')).  Links with nonlinear eta
    dependence (the classical embedding) are supported for evaluation but are
    not convex-safe for the stage-1 search.
    """

    eta_dim: int
    kind: str
    k: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dk_deta: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    k_tilde: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    classical_eta: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def convex_in_eta(self) -> bool:
        return self.kind in (LINEAR_IN_STATE, LINEAR_GENERAL, DIFFUSION_BASIS)


def linear_link(k_tilde, eta_dim: int, kind: str = LINEAR_GENERAL) -> LinkFunction:
    """Link linear in eta: k(x, x', eta) = eta' k_tilde(x, x')."""

    def k(X, X2, eta):
        if not np.any(eta):
            return np.zeros(len(X))
        return k_tilde(X, X2) @ eta

    def dk(X, X2, eta):
        return k_tilde(X, X2)

    return LinkFunction(eta_dim=eta_dim, kind=kind, k=k, dk_deta=dk, k_tilde=k_tilde)


def indicator_link(n_states: int) -> LinkFunction:
    """k(x, x', eta) = eta[x']: one coordinate per arrival state (finite chains)."""

    def k_tilde(X, X2):
        j = X2[:, 0].astype(np.intp)
        out = np.zeros((len(j), n_states))
        out[np.arange(len(j)), j] = 1.0
        return out

    return linear_link(k_tilde, n_states, kind=LINEAR_IN_STATE)


def linear_state_link(indices, eta_dim: int, classical_eta=None) -> LinkFunction:
    """k(x, x', eta) = eta' x'[indices]: linear in the arrival state."""
    idx = np.asarray(indices, dtype=np.intp)

    def k_tilde(X, X2):
        return X2[:, idx]

    lk = linear_link(k_tilde, eta_dim, kind=LINEAR_IN_STATE)
    if classical_eta is not None:
        lk = LinkFunction(
            eta_dim=lk.eta_dim,
            kind=lk.kind,
            k=lk.k,
            dk_deta=lk.dk_deta,
            k_tilde=lk.k_tilde,
            classical_eta=classical_eta,
        )
    return lk


def make_lan_link(dpsi_dtheta_at_zero, poisson_solution_g, eta_dim: int) -> LinkFunction:
    """Asymptotically optimal link: k_tilde(x, x') = dpsi/dtheta(x, x', 0) + g(x').

    ``poisson_solution_g`` must solve (I - P_0) g = E_x[Y_1] - E_pi[Y_1] for
    the model this link is attached to; validity is checked by the Poisson
    residual property tests, not here.
    """

    def k_tilde(X, X2):
        base = np.atleast_2d(dpsi_dtheta_at_zero(X, X2))
        g = np.atleast_2d(poisson_solution_g(X2))
        return base + g

    return linear_link(k_tilde, eta_dim)


def make_classical_link(affine_spec) -> LinkFunction:
    """Linear-in-state link whose eta = A(theta) + D0(theta) slice reproduces
    the classical one-parameter exponential tilt for affine models."""
    from .models.affine import solve_affine_eigen

    def classical_eta(theta):
        A, _ = solve_affine_eigen(affine_spec, theta)
        return A + affine_spec.d0(np.atleast_1d(theta))

    return linear_state_link(
        np.arange(affine_spec.state_dim), affine_spec.state_dim, classical_eta=classical_eta
    )


def make_classical_embedding_link(chain_spec) -> LinkFunction:
    """Exact classical-tilting link for finite chains.

    k(x, x', eta) = psi(x, x', eta) + log r(x', eta) with (Lambda, r) the
    Perron pair of the psi-tilted kernel.  Nonlinear in eta, so flagged
    non-convex; at matched parameters theta = eta the induced duo measure and
    weights coincide with the classical estimator.
    """
    from .core.chain import _psi_grid, chain_perron

    cache: dict = {}

    def solve(eta_scalar: float):
        if eta_scalar not in cache:
            lam, r = chain_perron(chain_spec, eta_scalar)
            cache[eta_scalar] = (lam, np.log(r))
        return cache[eta_scalar]

    def k(X, X2, eta):
        e = float(eta[0])
        if e == 0.0:
            return np.zeros(len(X))
        _, logr = solve(e)
        i = X[:, 0].astype(np.intp)
        j = X2[:, 0].astype(np.intp)
        return _psi_grid(chain_spec, e)[i, j] + logr[j]

    def dk(X, X2, eta, h: float = 1e-6):
        e = float(eta[0])
        up = k(X, X2, np.array([e + h]))
        dn = k(X, X2, np.array([e - h]))
        return ((up - dn) / (2.0 * h))[:, None]

    return LinkFunction(eta_dim=1, kind=CLASSICAL_EMBEDDING, k=k, dk_deta=dk)


# ---------------------------------------------------------------------------
# objective estimation
# ---------------------------------------------------------------------------

@dataclass
class ObjectiveSample:
    """Monte-Carlo aggregate of the objective value and its gradients."""

    value: float
    se: float
    grad_theta: np.ndarray
    grad_eta: np.ndarray
    grad_theta_se: np.ndarray
    grad_eta_se: np.ndarray
    n: int
    n_hits: int


def bind_link(model: MarkovRandomWalkModel, link) -> MarkovRandomWalkModel:
    """Return the model operating under ``link`` (None keeps the attached one)."""
    if link is None or link is model.link:
        return model
    if model.rebind_link is None:
        raise ContractError(f"{model.name} cannot be re-equipped with a different link")
    return model.rebind_link(link)


def collect_paths(
    model: MarkovRandomWalkModel,
    event,
    sim_tilt: TiltParams,
    eval_tilt: TiltParams,
    n: int,
    rng,
    want_grad: bool = False,
    key: tuple = (),
) -> BatchPaths:
    """Simulate n paths in fixed-size blocks; int seeds give keyed block streams."""
    pieces = []
    start = 0
    block_idx = 0
    while start < n:
        size = min(BLOCK_SIZE, n - start)
        gen = as_stream(rng, *key, block_idx) if not isinstance(rng, np.random.Generator) else rng
        pieces.append(simulate_batch(model, event, sim_tilt, eval_tilt, size, gen, want_grad))
        start += size
        block_idx += 1
    if len(pieces) == 1:
        return pieces[0]
    return BatchPaths(
        f=np.concatenate([p.f for p in pieces]),
        log_weight=np.concatenate([p.log_weight for p in pieces]),
        terminal_sum=np.concatenate([p.terminal_sum for p in pieces]),
        stop_step=np.concatenate([p.stop_step for p in pieces]),
        sum_y=np.concatenate([p.sum_y for p in pieces]),
        grad_theta=(
            np.concatenate([p.grad_theta for p in pieces]) if want_grad else None
        ),
        grad_eta=(np.concatenate([p.grad_eta for p in pieces]) if want_grad else None),
    )


def weighted_values(f: np.ndarray, log_weight: np.ndarray):
    """Per-path F * exp(log weight), exponentiated stably around the max log.

    Returns (values, scale) with values = F exp(log_weight - scale); callers
    aggregate values and multiply by exp(scale) at the end.
    """
    hits = f > 0
    if not np.any(hits):
        return np.zeros_like(f), 0.0
    scale = float(np.max(log_weight[hits]))
    vals = np.where(hits, np.exp(np.clip(log_weight - scale, -745.0, 0.0)), 0.0)
    return vals, scale


def _mean_se(vals: np.ndarray, scale: float):
    n = len(vals)
    mean = float(np.mean(vals))
    var = float(np.var(vals, ddof=1)) if n > 1 else 0.0
    return np.exp(scale) * mean, np.exp(scale) * np.sqrt(var / n)


def second_moment_estimate(model, link, tilt: TiltParams, event, batch_size: int, rng):
    """Estimate G(theta, eta) and its standard error from untilted paths.

    A batch with no event hits returns (0, 0) and raises ZeroHitWarning: the
    value carries no gradient information at this tilt.
    """
    if batch_size < 2:
        raise ContractError("batch_size must be at least 2")
    bound = bind_link(model, link)
    bound.require_in_domain(tilt)
    paths = collect_paths(bound, event, bound.zero_tilt(), tilt, batch_size, rng)
    if not np.any(paths.f > 0):
        warnings.warn("no event hits in objective batch", ZeroHitWarning, stacklevel=2)
        return 0.0, 0.0
    vals, scale = weighted_values(paths.f, paths.log_weight)
    return _mean_se(vals, scale)


def grad_second_moment(model, link, tilt: TiltParams, event, batch_size: int, rng):
    """Unbiased value-and-gradient sample of G at ``tilt`` (single path pass).

    The gradient multiplies the same integrand by {-S_tau + sum dpsi/dtheta}
    for theta and by sum {-dk/deta + dphi/deta} for eta.
    """
    if batch_size < 2:
        raise ContractError("batch_size must be at least 2")
    bound = bind_link(model, link)
    bound.require_in_domain(tilt)
    paths = collect_paths(
        bound, event, bound.zero_tilt(), tilt, batch_size, rng, want_grad=True
    )
    n = batch_size
    n_hits = int(np.sum(paths.f > 0))
    if n_hits == 0:
        warnings.warn("no event hits in gradient batch", ZeroHitWarning, stacklevel=2)
        return ObjectiveSample(
            0.0,
            0.0,
            np.zeros(bound.theta_dim),
            np.zeros(bound.eta_dim),
            np.zeros(bound.theta_dim),
            np.zeros(bound.eta_dim),
            n,
            0,
        )
    vals, scale = weighted_values(paths.f, paths.log_weight)
    value, se = _mean_se(vals, scale)

    def moments(mult):
        prod = vals[:, None] * mult
        mean = prod.mean(axis=0)
        var = prod.var(axis=0, ddof=1) if n > 1 else np.zeros(mult.shape[1])
        return np.exp(scale) * mean, np.exp(scale) * np.sqrt(var / n)

    if bound.theta_dim > 0:
        g_theta, g_theta_se = moments(paths.grad_theta)
    else:
        g_theta = np.zeros(0)
        g_theta_se = np.zeros(0)
    if bound.eta_dim > 0:
        g_eta, g_eta_se = moments(paths.grad_eta)
    else:
        g_eta = np.zeros(0)
        g_eta_se = np.zeros(0)
    return ObjectiveSample(value, se, g_theta, g_eta, g_theta_se, g_eta_se, n, n_hits)
