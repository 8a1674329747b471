"""Stochastic SIRD epidemic model with drift-shift tilting.

Euler scheme on X = (S, I, R, D) with three independent Brownian drivers;
the deceased coordinate reuses the third driver with opposite sign, so
S + I + R + D is conserved exactly along raw Euler paths.  I = 0 absorbs.

The tilt is the diffusion drift-shift family of the basis-function
construction: with B(x) = (Sigma Sigma')^{-1} M(x) the tilted drift is
b + Sigma Sigma' B eta = b + M eta, i.e. the same SIRD dynamics with the
five rates (alpha-, alpha+, beta-, gamma-, beta+) offset by

    eta = (alpha- - alpha, alpha+ - alpha, beta- - beta,
           gamma- - gamma, beta+ - beta).

Per-step log likelihood ratio:
    eta'B'x' - eta'B'(x + b dt) - (dt/2) eta'B' Sigma Sigma' B eta,
whose negative is the estimator's weight contribution (k = eta'B'(x)x',
phi = eta'B'(x)(x + b(x) dt) + (dt/2) eta'B' Sigma Sigma' B eta).

Boundary policy: the kernel sanitizes its *inputs* (S, I, R clamped at 0)
before evaluating drift, noise, and B, and returns the raw Euler update, so
barrier crossings and conservation are checked on unclamped values.  The
Sigma solve is Tikhonov-regularized (lambda = 1e-12 trace) where the
condition proxy (trace/3)^3 / det exceeds 1e12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.events import FirstPassageBeforeT
from ..core.model import MarkovRandomWalkModel
from ..errors import ValidationError
from ..tilting import DIFFUSION_BASIS, LinkFunction

__all__ = ["SirdParams", "DiffusionBasis", "build_sird", "sird_overflow_event"]


@dataclass(frozen=True)
class SirdParams:
    """Daily rates, population counts, overflow barrier and horizon."""

    alpha: float
    beta: float
    gamma: float
    n0: float
    i0: float
    dt: float = 1.0
    barrier: float = None  # overflow level c on the infected count
    horizon: int = 100

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise ValidationError("alpha, beta, gamma must be positive")
        # i0 = 0 is allowed: the walk starts absorbed (useful for testing)
        if not (0 <= self.i0 < self.n0):
            raise ValidationError("need 0 <= I0 < N0")
        if self.barrier is None:
            object.__setattr__(self, "barrier", 0.3325 * self.n0)


@dataclass(frozen=True)
class DiffusionBasis:
    """Drift, diffusion factor and basis matrix of a drift-shift tilt family."""

    drift: callable          # (n, d_x) -> (n, d_x)
    diffusion_factor: callable
    basis: callable          # B(x): (n, d_x, L)
    dt: float


def _rates(p: SirdParams, x3: np.ndarray):
    """(a, b, g) = (alpha S I / N, beta I, gamma I) on sanitized states."""
    s = np.maximum(x3[:, 0], 0.0)
    i = np.maximum(x3[:, 1], 0.0)
    r = np.maximum(x3[:, 2], 0.0)
    n = np.maximum(s + i + r, 1e-300)
    a = p.alpha * s * i / n
    return a, p.beta * i, p.gamma * i, s, i, n


def _drift3(p: SirdParams, a, b, g):
    return np.stack([-a, a - b - g, b], axis=1)


def _sigma_sq(a, b, g):
    """Sigma Sigma' as an (n, 3, 3) stack."""
    n = len(a)
    out = np.zeros((n, 3, 3))
    out[:, 0, 0] = a
    out[:, 0, 1] = out[:, 1, 0] = -a
    out[:, 1, 1] = a + b + g
    out[:, 1, 2] = out[:, 2, 1] = -b
    out[:, 2, 2] = b
    return out


def _pattern(p: SirdParams, s, i, n):
    """M(x) with Sigma Sigma' B = M: (n, 3, 5)."""
    out = np.zeros((len(s), 3, 5))
    si_n = s * i / n
    out[:, 0, 0] = -si_n
    out[:, 1, 1] = si_n
    out[:, 1, 2] = -i
    out[:, 1, 3] = -i
    out[:, 2, 4] = i
    return out


def _solve_sigma(p: SirdParams, x3: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (Sigma Sigma') u = rhs per row, regularizing near-singular rows.

    ``rhs`` is (n, 3) for one right-hand side or (n, 3, k) for several.
    Rows with I <= 0 (absorbed) return zero: no basis evaluation there.
    """
    a, b, g, s, i, n = _rates(p, x3)
    live = i > 0.0
    sig = _sigma_sq(a, b, g)
    det = a * b * g
    trace = 2.0 * a + 2.0 * b + g
    lam = 1e-12 * trace
    # condition proxy (trace/3)^3 / det; regularize beyond 1e12 (AM-GM >= 1)
    bad = live & ((det <= 0.0) | ((trace / 3.0) ** 3 > 1e12 * det))
    if np.any(bad):
        idx = np.nonzero(bad)[0]
        sig[idx] += lam[idx, None, None] * np.eye(3)
    sig[~live] = np.eye(3)
    squeeze = rhs.ndim == 2
    if squeeze:
        rhs = rhs[..., None]
    u = np.linalg.solve(sig, rhs)
    u[~live] = 0.0
    return u[..., 0] if squeeze else u


def sird_overflow_event(p: SirdParams) -> FirstPassageBeforeT:
    """tau_c <= T with tau_c the first day the infected count reaches c."""
    return FirstPassageBeforeT(component=1, barrier=p.barrier, horizon=p.horizon, direction="above")


def eta_curvature(model, event, rng, n_paths: int = 256):
    """Log-weight penalty Hessian at eta = 0: E[ sum_steps dt M' Sigma^-1 M ].

    The expected log weight of the drift-shift tilt grows like
    (1/2) eta' H eta with this H, so H^-1 is the natural coordinate change
    for the stage-1 search: rate offsets of very different stiffness (gamma
    is ~200x smaller than alpha here) become comparable.  Estimated from a
    short pilot of untilted paths.
    """
    from ..core.events import event_horizon

    p: SirdParams = model.extras["params"]
    horizon = event_horizon(event)
    X = model.initial_sampler(n_paths, rng)
    H = np.zeros((5, 5))
    active = np.ones(n_paths, dtype=bool)
    for _ in range(horizon):
        active = active & (X[:, 1] > 0.0)
        if not np.any(active):
            break
        x3 = X[:, :3]
        a, b, g, s, i, n = _rates(p, x3)
        m = _pattern(p, s, i, n)
        u = _solve_sigma(p, x3, m)  # Sigma^-1 M, (n, 3, 5)
        contrib = p.dt * np.einsum("nij,nik->njk", m, u)
        H += contrib[active].sum(axis=0)
        X = model.transition_sampler(X, np.zeros(5), rng)
    return H / n_paths


def build_sird(p: SirdParams) -> MarkovRandomWalkModel:
    dt = p.dt
    sqdt = np.sqrt(dt)

    def initial_sampler(n, rng):
        out = np.zeros((n, 4))
        out[:, 0] = p.n0 - p.i0
        out[:, 1] = p.i0
        return out

    def is_absorbing(X):
        return X[:, 1] <= 0.0

    def transition_sampler(X, eta, rng):
        x3 = X[:, :3]
        a, b, g, s, i, n = _rates(p, x3)
        drift = _drift3(p, a, b, g)
        if eta.size and np.any(eta):
            m = _pattern(p, s, i, n)
            drift = drift + np.einsum("nij,j->ni", m, eta)
        eps = rng.standard_normal((len(X), 3))
        ra, rb, rg = np.sqrt(a), np.sqrt(b), np.sqrt(g)
        noise = np.stack(
            [
                -ra * eps[:, 0],
                ra * eps[:, 0] - rb * eps[:, 1] - rg * eps[:, 2],
                rb * eps[:, 1],
            ],
            axis=1,
        )
        out = np.empty_like(X)
        out[:, :3] = np.maximum(x3, 0.0) + drift * dt + noise * sqdt
        out[:, 3] = X[:, 3] + g * dt + rg * sqdt * eps[:, 2]
        return out

    def increment_sampler(X, X2, theta, rng):
        return X2 - X

    def psi(X, X2, theta):
        return np.zeros(len(X))

    def dpsi_dtheta(X, X2, theta):
        return np.zeros((len(X), 0))

    def k_fun(X, X2, eta):
        if not np.any(eta):
            return np.zeros(len(X))
        x3 = X[:, :3]
        a, b, g, s, i, n = _rates(p, x3)
        m_eta = np.einsum("nij,j->ni", _pattern(p, s, i, n), eta)
        u = _solve_sigma(p, x3, m_eta)
        return np.einsum("ni,ni->n", u, X2[:, :3])

    def dk_deta(X, X2, eta):
        x3 = X[:, :3]
        a, b, g, s, i, n = _rates(p, x3)
        m = _pattern(p, s, i, n)
        w = _solve_sigma(p, x3, X2[:, :3])
        return np.einsum("nij,ni->nj", m, w)

    def phi(X, eta):
        if not np.any(eta):
            return np.zeros(len(X))
        x3 = X[:, :3]
        a, b, g, s, i, n = _rates(p, x3)
        m = _pattern(p, s, i, n)
        m_eta = np.einsum("nij,j->ni", m, eta)
        u = _solve_sigma(p, x3, m_eta)
        center = np.maximum(x3, 0.0) + _drift3(p, a, b, g) * dt
        return np.einsum("ni,ni->n", u, center) + 0.5 * dt * np.einsum("ni,ni->n", u, m_eta)

    def dphi_deta(X, eta):
        x3 = X[:, :3]
        a, b, g, s, i, n = _rates(p, x3)
        m = _pattern(p, s, i, n)
        center = np.maximum(x3, 0.0) + _drift3(p, a, b, g) * dt
        w = _solve_sigma(p, x3, center)
        base = np.einsum("nij,ni->nj", m, w)
        if np.any(eta):
            m_eta = np.einsum("nij,j->ni", m, eta)
            u = _solve_sigma(p, x3, m_eta)
            base = base + dt * np.einsum("nij,ni->nj", m, u)
        return base

    def step_terms(X, X2, theta, eta, want_grad):
        """One-pass psi - k + phi and gradient pieces; shares the Sigma solves."""
        n_rows = len(X)
        tilted = bool(np.any(eta))
        if not tilted and not want_grad:
            return np.zeros(n_rows), None, None
        x3 = X[:, :3]
        a, b, g, s, i, n = _rates(p, x3)
        m = _pattern(p, s, i, n)
        center = np.maximum(x3, 0.0) + _drift3(p, a, b, g) * dt
        diff = center - X2[:, :3]
        rhs = []
        if tilted:
            m_eta = np.einsum("nij,j->ni", m, eta)
            rhs.append(m_eta)
        if want_grad:
            rhs.append(diff)
        sol = _solve_sigma(p, x3, np.stack(rhs, axis=2))
        col = 0
        term = np.zeros(n_rows)
        u = None
        if tilted:
            u = sol[:, :, col]
            col += 1
            # -k + phi = u'(center - x') + (dt/2) u' M eta
            term = np.einsum("ni,ni->n", u, diff) + 0.5 * dt * np.einsum(
                "ni,ni->n", u, m_eta
            )
        deta = None
        if want_grad:
            v = sol[:, :, col]
            deta = np.einsum("nij,ni->nj", m, v)
            if tilted:
                deta = deta + dt * np.einsum("nij,ni->nj", m, u)
        return term, None, deta

    link = LinkFunction(eta_dim=5, kind=DIFFUSION_BASIS, k=k_fun, dk_deta=dk_deta)

    return MarkovRandomWalkModel(
        name="sird",
        state_dim=4,
        incr_dim=4,
        eta_dim=5,
        theta_dim=0,
        initial_sampler=initial_sampler,
        transition_sampler=transition_sampler,
        increment_sampler=increment_sampler,
        psi=psi,
        phi=phi,
        link=link,
        dpsi_dtheta=dpsi_dtheta,
        dphi_deta=dphi_deta,
        domain_check=lambda theta, eta: bool(np.all(np.isfinite(eta))),
        is_absorbing=is_absorbing,
        initial_sum=lambda X0: X0.copy(),
        step_terms=step_terms,
        extras={
            "params": p,
            "eta_curvature_fn": lambda mdl, event, rng: eta_curvature(mdl, event, rng),
        },
    )
