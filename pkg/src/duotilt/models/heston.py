"""Discretized Heston stochastic-volatility model as a Markov random walk.

The latent variance follows the exact CIR transition

    X' | x  ~  C * chisq2_d(c x),   C = sigma^2 (1 - e^{-kappa dt}) / (4 kappa),
                                    c = 4 kappa e^{-kappa dt} / (sigma^2 (1 - e^{-kappa dt})),
                                    d = 4 kappa alpha / sigma^2,

and the log-return increment is conditionally Gaussian,

    Y = [mu - x/2 - (rho/sigma) kappa (alpha - x)] dt
        + (rho/sigma)(x' - x) + sqrt((1 - rho^2) x dt) eps.

Tilting the transition by eta (linear link k = eta x') turns the noncentral
chi-square into a noncentral Gamma: X' ~ C Gamma(d/2 + N, rate 1/2 - eta C)
with N ~ Poisson(c x / (2 (1 - 2 eta C))), valid for eta < 1/(2C).  Tilting
the increment by theta shifts the Gaussian mean by theta x (1 - rho^2) dt.
The model is affine, so the classical one-parameter tilt is the eta =
A(theta) + D0(theta) slice of this two-parameter family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..core.model import MarkovRandomWalkModel
from ..errors import ValidationError
from ..tilting import linear_state_link
from .affine import AffineSpec, solve_affine_eigen

__all__ = ["HestonParams", "build_heston", "heston_affine_spec"]


@dataclass(frozen=True)
class HestonParams:
    """Annualized Heston parameters with step size dt (years)."""

    mu: float
    kappa: float
    alpha: float
    sigma: float
    rho: float
    dt: float
    x0: float = None  # initial variance; defaults to the long-run level alpha

    def __post_init__(self):
        if not (-1.0 < self.rho < 1.0):
            raise ValidationError("rho must lie in (-1, 1)")
        if 2.0 * self.kappa * self.alpha < self.sigma**2:
            raise ValidationError("Feller condition 2*kappa*alpha >= sigma^2 violated")
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.x0 is None:
            object.__setattr__(self, "x0", self.alpha)

    @property
    def big_c(self) -> float:
        return self.sigma**2 * (1.0 - math.exp(-self.kappa * self.dt)) / (4.0 * self.kappa)

    @property
    def small_c(self) -> float:
        return 4.0 * self.kappa * math.exp(-self.kappa * self.dt) / (
            self.sigma**2 * (1.0 - math.exp(-self.kappa * self.dt))
        )

    @property
    def dof(self) -> float:
        return 4.0 * self.kappa * self.alpha / self.sigma**2

    @property
    def eta_max(self) -> float:
        return 1.0 / (2.0 * self.big_c)


def _drift_leg(p: HestonParams, x: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Conditional mean of the log-return given (x, x') at theta = 0."""
    rs = p.rho / p.sigma
    return (p.mu - 0.5 * x - rs * p.kappa * (p.alpha - x)) * p.dt + rs * (x2 - x)


def heston_affine_spec(p: HestonParams) -> AffineSpec:
    C, c, d = p.big_c, p.small_c, p.dof
    rs = p.rho / p.sigma
    lin1 = -0.5 * p.dt + rs * p.kappa * p.dt - rs
    quad = 0.5 * (1.0 - p.rho**2) * p.dt

    return AffineSpec(
        state_dim=1,
        incr_dim=1,
        c1=lambda eta: np.array([c * C * eta[0] / (1.0 - 2.0 * eta[0] * C)]),
        c2=lambda eta: -0.5 * d * math.log(1.0 - 2.0 * eta[0] * C),
        d0=lambda th: np.array([rs * th[0]]),
        d1=lambda th: np.array([lin1 * th[0] + quad * th[0] ** 2]),
        d2=lambda th: (p.mu * p.dt - rs * p.kappa * p.alpha * p.dt) * th[0],
        dc1=lambda eta: np.array([[c * C / (1.0 - 2.0 * eta[0] * C) ** 2]]),
        dc2=lambda eta: np.array([d * C / (1.0 - 2.0 * eta[0] * C)]),
        dd0=lambda th: np.array([[rs]]),
        dd1=lambda th: np.array([[lin1 + 2.0 * quad * th[0]]]),
        dd2=lambda th: np.array([p.mu * p.dt - rs * p.kappa * p.alpha * p.dt]),
        eta_in_domain=lambda eta: bool(eta[0] < 1.0 / (2.0 * C)),
    )


def build_heston(p: HestonParams) -> MarkovRandomWalkModel:
    C, c, d = p.big_c, p.small_c, p.dof
    var_coef = (1.0 - p.rho**2) * p.dt
    affine = heston_affine_spec(p)

    def classical_eta(theta):
        A, _ = solve_affine_eigen(affine, theta)
        return A + affine.d0(np.atleast_1d(theta))

    def initial_sampler(n, rng):
        return np.full((n, 1), p.x0)

    def transition_sampler(X, eta, rng):
        e = float(eta[0]) if eta.size else 0.0
        x = X[:, 0]
        shrink = 1.0 - 2.0 * e * C
        lam = c * x / (2.0 * shrink)
        n_mix = rng.poisson(lam)
        g = rng.standard_gamma(0.5 * d + n_mix)
        return (C * g * (2.0 / shrink))[:, None]

    def increment_sampler(X, X2, theta, rng):
        th = float(theta[0]) if theta.size else 0.0
        x = X[:, 0]
        mean = _drift_leg(p, x, X2[:, 0]) + th * x * var_coef
        return (mean + np.sqrt(x * var_coef) * rng.standard_normal(len(x)))[:, None]

    def psi(X, X2, theta):
        th = float(theta[0]) if theta.size else 0.0
        x = X[:, 0]
        return _drift_leg(p, x, X2[:, 0]) * th + 0.5 * x * var_coef * th * th

    def dpsi_dtheta(X, X2, theta):
        th = float(theta[0]) if theta.size else 0.0
        x = X[:, 0]
        return (_drift_leg(p, x, X2[:, 0]) + x * var_coef * th)[:, None]

    def phi(X, eta):
        e = float(eta[0]) if eta.size else 0.0
        if e == 0.0:
            return np.zeros(len(X))
        x = X[:, 0]
        shrink = 1.0 - 2.0 * e * C
        return c * C * e * x / shrink - 0.5 * d * math.log(shrink)

    def dphi_deta(X, eta):
        e = float(eta[0]) if eta.size else 0.0
        x = X[:, 0]
        shrink = 1.0 - 2.0 * e * C
        return (c * C * x / shrink**2 + d * C / shrink)[:, None]

    def increment_logpdf(X, X2, Y):
        x = X[:, 0]
        mean = _drift_leg(p, x, X2[:, 0])
        return norm.logpdf(Y[:, 0], loc=mean, scale=np.sqrt(x * var_coef))

    def domain_check(theta, eta):
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(eta))):
            return False
        return bool(eta.size == 0 or eta[0] < p.eta_max)

    return MarkovRandomWalkModel(
        name="heston",
        state_dim=1,
        incr_dim=1,
        eta_dim=1,
        initial_sampler=initial_sampler,
        transition_sampler=transition_sampler,
        increment_sampler=increment_sampler,
        psi=psi,
        phi=phi,
        link=linear_state_link([0], 1, classical_eta=classical_eta),
        dpsi_dtheta=dpsi_dtheta,
        dphi_deta=dphi_deta,
        domain_check=domain_check,
        eta_box=(None, np.array([p.eta_max])),
        increment_logpdf=increment_logpdf,
        affine=affine,
        classical_eta=classical_eta,
        extras={"params": p},
    )
