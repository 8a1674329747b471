"""Finite-state chains: exact cumulants, tilted samplers, and brute-force oracles.

Finite chains are the test bed for everything else: all cumulants have closed
forms (finite log-sum-exp), the event probability is computable exactly by
dynamic programming over (step, state, running-sum lattice), and the
second-moment objective admits the same DP with per-edge weight factors.

Increments are scalar (d = 1).  The lattice oracle requires all support
values to lie on a rational lattice (denominators up to 1e6 after snapping);
Gaussian-increment chains are supported by the oracle only for K = 1 and
fixed-time events, via the normal CDF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Optional, Union

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from ..errors import NoEigenSolutionError, UnsupportedOracleError, ValidationError
from .events import (
    EventSpec,
    FirstPassageBeforeT,
    FixedTimeThreshold,
    JointPassageAndTerminal,
)
from .model import MarkovRandomWalkModel

__all__ = [
    "LatticeIncrements",
    "GaussianIncrements",
    "FiniteChainSpec",
    "build_finite_chain",
    "exact_probability",
    "dp_weighted_probability",
    "dp_second_moment",
    "chain_perron",
    "build_regime_switching_ar1",
    "RegimeSwitchingAr1",
]

MAX_LATTICE_POINTS = 10_000_000


@dataclass(frozen=True)
class LatticeIncrements:
    """Per-edge finite-support increments: values[i,j,s] with probs[i,j,s].

    Rows are padded with zero-probability entries so the support arrays are
    rectangular.
    """

    values: np.ndarray  # (K, K, S)
    probs: np.ndarray   # (K, K, S)


@dataclass(frozen=True)
class GaussianIncrements:
    """Per-edge Gaussian increments with mean[i,j] and var[i,j]."""

    mean: np.ndarray  # (K, K)
    var: np.ndarray   # (K, K)


@dataclass(frozen=True)
class FiniteChainSpec:
    """K-state chain with transition matrix P and per-edge increment laws."""

    transition: np.ndarray
    increments: Union[LatticeIncrements, GaussianIncrements]
    initial_dist: Optional[np.ndarray] = None  # default: point mass at state 0

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        object.__setattr__(self, "transition", P)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValidationError("transition matrix must be square")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("transition rows must be nonnegative and sum to 1 within 1e-12")
        inc = self.increments
        if isinstance(inc, LatticeIncrements):
            v = np.asarray(inc.values, dtype=float)
            w = np.asarray(inc.probs, dtype=float)
            if v.shape != w.shape or v.shape[:2] != P.shape:
                raise ValidationError("increment arrays must be (K, K, S)")
            if np.any(w < 0) or np.any(np.abs(w.sum(axis=-1) - 1.0) > 1e-12):
                raise ValidationError("support probabilities must sum to 1 within 1e-12")
            object.__setattr__(self, "increments", LatticeIncrements(v, w))
        elif isinstance(inc, GaussianIncrements):
            m = np.asarray(inc.mean, dtype=float)
            s2 = np.asarray(inc.var, dtype=float)
            if m.shape != P.shape or s2.shape != P.shape:
                raise ValidationError("Gaussian mean/var must be (K, K)")
            if np.any(s2 <= 0):
                raise ValidationError("Gaussian variances must be positive")
            object.__setattr__(self, "increments", GaussianIncrements(m, s2))
        else:
            raise ValidationError(f"unknown increment kind {type(inc).__name__}")
        if self.initial_dist is not None:
            nu = np.asarray(self.initial_dist, dtype=float)
            if nu.shape != (P.shape[0],) or np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-12:
                raise ValidationError("initial distribution must be a probability vector")
            object.__setattr__(self, "initial_dist", nu)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    def stationary_dist(self) -> np.ndarray:
        """Solve pi P = pi with sum(pi) = 1."""
        K = self.n_states
        A = np.vstack([self.transition.T - np.eye(K), np.ones((1, K))])
        b = np.zeros(K + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(A, b, rcond=None)
        return pi

    def mean_increment(self) -> np.ndarray:
        """E[Y | i, j] per edge, shape (K, K)."""
        inc = self.increments
        if isinstance(inc, LatticeIncrements):
            return np.sum(inc.values * inc.probs, axis=-1)
        return inc.mean

    def log_eigenvalue(self, theta: float) -> float:
        return chain_perron(self, theta)[0]


# ---------------------------------------------------------------------------
# edge cumulants
# ---------------------------------------------------------------------------

def _psi_grid(spec: FiniteChainSpec, theta: float) -> np.ndarray:
    """psi(i, j, theta) on the full K x K grid."""
    inc = spec.increments
    if theta == 0.0:
        return np.zeros_like(spec.transition)
    if isinstance(inc, LatticeIncrements):
        with np.errstate(divide="ignore"):
            logw = np.log(inc.probs)
        return logsumexp(theta * inc.values + logw, axis=-1)
    return inc.mean * theta + 0.5 * inc.var * theta * theta


def _dpsi_grid(spec: FiniteChainSpec, theta: float) -> np.ndarray:
    """d psi / d theta on the grid: the tilted conditional mean increment."""
    inc = spec.increments
    if isinstance(inc, LatticeIncrements):
        w = inc.probs * np.exp(theta * inc.values)
        return np.sum(w * inc.values, axis=-1) / np.sum(w, axis=-1)
    return inc.mean + inc.var * theta


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------

def _categorical_rows(prob_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one category per row of a (n, K) probability array."""
    cum = np.cumsum(prob_rows, axis=1)
    u = rng.random(prob_rows.shape[0])
    idx = np.sum(u[:, None] > cum, axis=1)
    return np.minimum(idx, prob_rows.shape[1] - 1)


def build_finite_chain(spec: FiniteChainSpec, link=None) -> MarkovRandomWalkModel:
    """Construct the walk model for a finite chain with exact cumulants.

    The default link is linear in the arrival state indicator,
    k(x, x', eta) = eta[x'], so eta has one coordinate per state.  Any other
    link can be attached: phi is recomputed by log-sum-exp over arrival
    states and the tilted transition law follows from it exactly.
    """
    from ..tilting import indicator_link  # local import; tilting depends on core

    P = spec.transition
    K = spec.n_states
    if link is None:
        link = indicator_link(K)
    with np.errstate(divide="ignore"):
        logP = np.log(P)

    def k_grid(eta: np.ndarray) -> np.ndarray:
        ii, jj = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
        Xi = ii.reshape(-1, 1).astype(float)
        Xj = jj.reshape(-1, 1).astype(float)
        return link.k(Xi, Xj, eta).reshape(K, K)

    def dk_grid(eta: np.ndarray) -> np.ndarray:
        ii, jj = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
        Xi = ii.reshape(-1, 1).astype(float)
        Xj = jj.reshape(-1, 1).astype(float)
        return link.dk_deta(Xi, Xj, eta).reshape(K, K, link.eta_dim)

    def phi_vec(eta: np.ndarray) -> np.ndarray:
        if not np.any(eta):
            return np.zeros(K)
        return logsumexp(logP + k_grid(eta), axis=1)

    def tilted_rows(eta: np.ndarray) -> np.ndarray:
        if not np.any(eta):
            return P
        logq = logP + k_grid(eta) - phi_vec(eta)[:, None]
        return np.exp(logq)

    def initial_sampler(n, rng):
        if spec.initial_dist is None:
            return np.zeros((n, 1))
        rows = np.broadcast_to(spec.initial_dist, (n, K))
        return _categorical_rows(rows, rng).astype(float)[:, None]

    def transition_sampler(X, eta, rng):
        i = X[:, 0].astype(np.intp)
        rows = tilted_rows(eta)[i]
        return _categorical_rows(rows, rng).astype(float)[:, None]

    inc = spec.increments

    def increment_sampler(X, X2, theta, rng):
        i = X[:, 0].astype(np.intp)
        j = X2[:, 0].astype(np.intp)
        th = float(theta[0]) if theta.size else 0.0
        if isinstance(inc, LatticeIncrements):
            w = inc.probs[i, j] * np.exp(th * inc.values[i, j])
            w = w / w.sum(axis=1, keepdims=True)
            pick = _categorical_rows(w, rng)
            return inc.values[i, j, pick][:, None]
        mean = inc.mean[i, j] + inc.var[i, j] * th
        return (mean + np.sqrt(inc.var[i, j]) * rng.standard_normal(len(i)))[:, None]

    def psi(X, X2, theta):
        th = float(theta[0]) if theta.size else 0.0
        i = X[:, 0].astype(np.intp)
        j = X2[:, 0].astype(np.intp)
        return _psi_grid(spec, th)[i, j]

    def dpsi_dtheta(X, X2, theta):
        th = float(theta[0]) if theta.size else 0.0
        i = X[:, 0].astype(np.intp)
        j = X2[:, 0].astype(np.intp)
        return _dpsi_grid(spec, th)[i, j][:, None]

    def phi(X, eta):
        i = X[:, 0].astype(np.intp)
        return phi_vec(eta)[i]

    def dphi_deta(X, eta):
        i = X[:, 0].astype(np.intp)
        w = tilted_rows(eta)  # (K, K)
        grid = dk_grid(eta)   # (K, K, m)
        dphi = np.einsum("kj,kjm->km", w, grid)
        return dphi[i]

    def increment_logpdf(X, X2, Y):
        if not isinstance(inc, GaussianIncrements):
            raise UnsupportedOracleError("log-density available for Gaussian edges only")
        i = X[:, 0].astype(np.intp)
        j = X2[:, 0].astype(np.intp)
        return norm.logpdf(Y[:, 0], loc=inc.mean[i, j], scale=np.sqrt(inc.var[i, j]))

    model = MarkovRandomWalkModel(
        name=f"finite-chain-{K}",
        state_dim=1,
        incr_dim=1,
        eta_dim=link.eta_dim,
        initial_sampler=initial_sampler,
        transition_sampler=transition_sampler,
        increment_sampler=increment_sampler,
        psi=psi,
        phi=phi,
        link=link,
        dpsi_dtheta=dpsi_dtheta,
        dphi_deta=dphi_deta,
        domain_check=lambda theta, eta: bool(np.all(np.isfinite(theta)) and np.all(np.isfinite(eta))),
        chain=spec,
        rebind_link=lambda lk: build_finite_chain(spec, lk),
    )
    return model


# ---------------------------------------------------------------------------
# lattice DP oracle
# ---------------------------------------------------------------------------

def _snap_fraction(x: float) -> Fraction:
    f = Fraction(x).limit_denominator(10**6)
    if abs(float(f) - x) > 1e-9:
        raise UnsupportedOracleError(f"increment value {x} is not on a rational lattice")
    return f


def _lattice_ints(inc: LatticeIncrements):
    """Snap support values to a common lattice; return (int values, step h)."""
    flat = inc.values.reshape(-1)
    mask = inc.probs.reshape(-1) > 0
    fracs = [_snap_fraction(float(v)) for v in flat[mask]]
    nonzero = [f for f in fracs if f != 0]
    if not nonzero:
        return np.zeros_like(inc.values, dtype=np.int64), Fraction(1)
    num = reduce(math.gcd, [abs(f.numerator) for f in nonzero])
    den = reduce(math.lcm, [f.denominator for f in nonzero])
    h = Fraction(num, den)
    ints = np.zeros(flat.shape, dtype=np.int64)
    idx = np.nonzero(mask)[0]
    for pos, f in zip(idx, fracs):
        q = f / h
        ints[pos] = int(q)
    return ints.reshape(inc.values.shape), h


def _int_level(level: float, h: Fraction, direction: str) -> int:
    """Integer lattice threshold equivalent to a float comparison with level."""
    q = Fraction(level).limit_denominator(10**9) / h
    return math.ceil(q) if direction == "above" else math.floor(q)


def dp_weighted_probability(
    spec: FiniteChainSpec, event: EventSpec, edge_factor: Optional[np.ndarray] = None
) -> float:
    """E[F * prod factor(edge, value)] by dynamic programming, exactly.

    ``edge_factor`` has the same (K, K, S) shape as the lattice support and
    multiplies the path measure on every step; ``None`` means 1 everywhere,
    which makes this ``exact_probability``.  Continuous increments are
    supported only for K = 1 Gaussian chains with fixed-time events (normal
    CDF), and only unweighted.
    """
    inc = spec.increments
    if isinstance(inc, GaussianIncrements):
        if edge_factor is not None:
            raise UnsupportedOracleError("weighted oracle requires lattice increments")
        if spec.n_states == 1 and isinstance(event, FixedTimeThreshold):
            n = event.n
            m = n * inc.mean[0, 0]
            sd = math.sqrt(n * inc.var[0, 0])
            z = (event.threshold - m) / sd
            return float(norm.sf(z)) if event.direction == "above" else float(norm.cdf(z))
        raise UnsupportedOracleError(
            "Gaussian chains: oracle supports only K=1 fixed-time events"
        )

    K = spec.n_states
    P = spec.transition
    ints, h = _lattice_ints(inc)
    horizon = event.n if isinstance(event, FixedTimeThreshold) else (
        event.horizon if isinstance(event, FirstPassageBeforeT) else event.passage.horizon
    )
    vmin = int(ints.min())
    vmax = int(ints.max())
    lo = min(0, horizon * vmin)
    hi = max(0, horizon * vmax)
    width = hi - lo + 1
    if horizon * K * width > MAX_LATTICE_POINTS:
        raise UnsupportedOracleError(
            f"lattice too large: {horizon * K * width} > {MAX_LATTICE_POINTS} points"
        )
    origin = -lo

    weights = P[:, :, None] * inc.probs
    if edge_factor is not None:
        weights = weights * edge_factor

    if isinstance(event, FixedTimeThreshold):
        passage = None
        terminal = (event.threshold, event.direction)
    elif isinstance(event, FirstPassageBeforeT):
        passage = (event.barrier, event.direction)
        terminal = None
    else:
        passage = (event.passage.barrier, event.passage.direction)
        terminal = (event.terminal_threshold, event.terminal_direction)

    def crossing_mask(direction: str, level_int: int) -> np.ndarray:
        z = np.arange(lo, hi + 1)
        return z >= level_int if direction == "above" else z <= level_int

    mass = np.zeros((K, width))
    if spec.initial_dist is None:
        mass[0, origin] = 1.0
    else:
        mass[:, origin] = spec.initial_dist

    joint = isinstance(event, JointPassageAndTerminal)
    post = np.zeros_like(mass) if joint else None
    hit_mass = 0.0

    if passage is not None:
        b_int = _int_level(passage[0], h, passage[1])
        cross0 = crossing_mask(passage[1], b_int)
        moved = mass[:, cross0].sum(axis=1)
        if np.any(moved > 0):
            if joint:
                post[:, cross0] += mass[:, cross0]
            else:
                hit_mass += moved.sum()
            mass[:, cross0] = 0.0

    def step_table(table: np.ndarray) -> np.ndarray:
        new = np.zeros_like(table)
        for i in range(K):
            row = table[i]
            if not row.any():
                continue
            nz = np.nonzero(row)[0]
            a, b = nz[0], nz[-1] + 1
            for j in range(K):
                for s in range(ints.shape[2]):
                    w = weights[i, j, s]
                    if w == 0.0:
                        continue
                    shift = ints[i, j, s]
                    new[j, a + shift : b + shift] += w * row[a:b]
        return new

    for _t in range(1, horizon + 1):
        mass = step_table(mass)
        if joint:
            post = step_table(post)
        if passage is not None:
            cross = crossing_mask(passage[1], b_int)
            if joint:
                post[:, cross] += mass[:, cross]
            else:
                hit_mass += mass[:, cross].sum()
            mass[:, cross] = 0.0

    if isinstance(event, FirstPassageBeforeT):
        return float(hit_mass)
    c_int = _int_level(terminal[0], h, terminal[1])
    term_mask = crossing_mask(terminal[1], c_int)
    table = post if joint else mass
    return float(table[:, term_mask].sum())


def exact_probability(spec: FiniteChainSpec, event: EventSpec) -> float:
    """Exact P(F = 1), the ground-truth oracle for estimator tests."""
    return dp_weighted_probability(spec, event, None)


def dp_second_moment(model: MarkovRandomWalkModel, tilt, event: EventSpec) -> float:
    """Exact second moment G(theta, eta) of the tilted estimator, by DP.

    Needs a finite-chain model with lattice increments; the per-edge factor
    is exp(-theta*v + psi - k + phi) evaluated from the model's closed forms.
    """
    spec = model.chain
    if spec is None or not isinstance(spec.increments, LatticeIncrements):
        raise UnsupportedOracleError("DP second moment needs a lattice finite chain")
    K = spec.n_states
    th = float(tilt.theta[0]) if tilt.theta.size else 0.0
    psi = _psi_grid(spec, th)

    ii, jj = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    Xi = ii.reshape(-1, 1).astype(float)
    Xj = jj.reshape(-1, 1).astype(float)
    kg = model.link.k(Xi, Xj, tilt.eta).reshape(K, K)
    phig = model.phi(np.arange(K, dtype=float)[:, None], tilt.eta)

    factor = np.exp(-th * spec.increments.values + (psi - kg + phig[:, None])[:, :, None])
    return dp_weighted_probability(spec, event, factor)


# ---------------------------------------------------------------------------
# Perron eigen tools (classical tilting on finite chains)
# ---------------------------------------------------------------------------

def chain_perron(spec: FiniteChainSpec, theta: float):
    """Perron root and positive right eigenvector of P_hat(theta).

    P_hat[i, j] = P[i, j] exp(psi(i, j, theta)); returns (Lambda, r) with
    Lambda = log of the root and r normalized to mean 1 (so r == 1 at
    theta = 0).
    """
    P_hat = spec.transition * np.exp(_psi_grid(spec, theta))
    vals, vecs = np.linalg.eig(P_hat)
    k = int(np.argmax(vals.real))
    lam = vals[k].real
    r = vecs[:, k].real
    if abs(vals[k].imag) > 1e-10 or lam <= 0:
        raise NoEigenSolutionError(f"no real positive Perron root at theta={theta}")
    if np.all(r <= 0):
        r = -r
    if np.any(r <= 0):
        raise NoEigenSolutionError(f"Perron eigenvector not positive at theta={theta}")
    r = r / r.mean()
    return float(np.log(lam)), r


# ---------------------------------------------------------------------------
# regime-switching AR(1) test model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegimeSwitchingAr1:
    """Y' = mu(x') + beta(x') Y + sigma(x') eps with a finite latent regime."""

    transition: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        object.__setattr__(self, "transition", P)
        for name in ("mu", "beta", "sigma"):
            v = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, v)
            if v.shape != (P.shape[0],):
                raise ValidationError(f"{name} must have one entry per regime")
        if np.any(self.sigma <= 0):
            raise ValidationError("sigma must be positive")


def build_regime_switching_ar1(
    params: RegimeSwitchingAr1, slopes=None, intercepts=None
) -> MarkovRandomWalkModel:
    """Walk model for the regime-switching AR(1), with a linear link family.

    The link is k(x, x', eta) = sum_m eta_m (slopes[m, j'] y' + intercepts[m, j'])
    where j' is the arrival regime; the default (slope 1, intercept 0) is the
    plain linear-in-increment link.  State is (regime index, y); the additive
    part is degenerate, Y = y'.
    """
    from ..tilting import LinkFunction

    P = params.transition
    K = P.shape[0]
    if slopes is None:
        slopes = np.ones((1, K))
        intercepts = np.zeros((1, K))
    slopes = np.asarray(slopes, dtype=float)
    intercepts = np.asarray(intercepts, dtype=float)
    m = slopes.shape[0]
    with np.errstate(divide="ignore"):
        logP = np.log(P)

    def k_fun(X, X2, eta):
        if not np.any(eta):
            return np.zeros(len(X))
        j = X2[:, 0].astype(np.intp)
        a = eta @ slopes
        b = eta @ intercepts
        return a[j] * X2[:, 1] + b[j]

    def dk_fun(X, X2, eta):
        j = X2[:, 0].astype(np.intp)
        return (slopes.T[j] * X2[:, 1][:, None]) + intercepts.T[j]

    def _log_terms(X, eta):
        """log weights per arrival regime: (n, K)."""
        i = X[:, 0].astype(np.intp)
        y = X[:, 1]
        a = eta @ slopes    # (K,)
        b = eta @ intercepts
        cond_mean = params.mu[None, :] + params.beta[None, :] * y[:, None]
        return (
            logP[i]
            + a[None, :] * cond_mean
            + b[None, :]
            + 0.5 * (params.sigma[None, :] * a[None, :]) ** 2
        )

    def phi(X, eta):
        if not np.any(eta):
            return np.zeros(len(X))
        return logsumexp(_log_terms(X, eta), axis=1)

    def dphi_deta(X, eta):
        y = X[:, 1]
        a = eta @ slopes
        terms = _log_terms(X, eta)
        w = np.exp(terms - logsumexp(terms, axis=1, keepdims=True))
        cond_mean = params.mu[None, :] + params.beta[None, :] * y[:, None]
        # d/d eta_m of the per-regime exponent
        per = (
            slopes[:, None, :] * cond_mean[None, :, :]
            + intercepts[:, None, :]
            + (params.sigma[None, None, :] ** 2) * a[None, None, :] * slopes[:, None, :]
        )  # (m, n, K)
        return np.einsum("nk,mnk->nm", w, per)

    def transition_sampler(X, eta, rng):
        y = X[:, 1]
        if np.any(eta):
            terms = _log_terms(X, eta)
            rows = np.exp(terms - logsumexp(terms, axis=1, keepdims=True))
        else:
            i = X[:, 0].astype(np.intp)
            rows = P[i]
        j = _categorical_rows(rows, rng)
        a = eta @ slopes if np.any(eta) else np.zeros(K)
        mean = params.mu[j] + params.beta[j] * y + (params.sigma[j] ** 2) * a[j]
        y2 = mean + params.sigma[j] * rng.standard_normal(len(y))
        return np.column_stack([j.astype(float), y2])

    def increment_sampler(X, X2, theta, rng):
        return X2[:, 1][:, None]

    def psi(X, X2, theta):
        th = float(theta[0]) if theta.size else 0.0
        return th * X2[:, 1]

    def dpsi_dtheta(X, X2, theta):
        return X2[:, 1][:, None]

    return MarkovRandomWalkModel(
        name="regime-switching-ar1",
        state_dim=2,
        incr_dim=1,
        eta_dim=m,
        initial_sampler=lambda n, rng: np.zeros((n, 2)),
        transition_sampler=transition_sampler,
        increment_sampler=increment_sampler,
        psi=psi,
        phi=phi,
        link=LinkFunction(eta_dim=m, kind="linear_general", k=k_fun, dk_deta=dk_fun),
        dpsi_dtheta=dpsi_dtheta,
        dphi_deta=dphi_deta,
        domain_check=lambda theta, eta: bool(
            np.all(np.isfinite(theta)) and np.all(np.isfinite(eta))
        ),
        extras={"regime_params": params},
    )
