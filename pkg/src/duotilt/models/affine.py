"""Affine model toolkit: eigen fixed point and Poisson-equation solutions.

For models whose transition log-MGF is affine in the state,
log E_x[exp(eta'X_1)] = C1(eta)'x + C2(eta), and whose increment cumulant is
affine, psi(x, x', theta) = D0(theta)'x' + D1(theta)'x + D2(theta), the
eigen problem of the tilted kernel has the semi-explicit solution
r(x, theta) = exp(A(theta)'x) with

    A(theta) = C1(A(theta) + D0(theta)) + D1(theta),
    Lambda(theta) = C2(A(theta) + D0(theta)) + D2(theta).

The branch connected to A(0) = 0 (eigenfunction normalized to r(x, 0) = 1)
is the one used throughout.  Differentiating the fixed point at theta = 0
yields the solution of the Poisson equation (I - P_0) g = E_x[Y] - E_pi[Y]
as the linear function g(x) = Abar' x, which is all the optimal link needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..core.chain import FiniteChainSpec, RegimeSwitchingAr1
from ..errors import NoEigenSolutionError, ValidationError

__all__ = ["AffineSpec", "solve_affine_eigen", "solve_poisson", "eigen_derivative_at_zero"]


@dataclass(frozen=True)
class AffineSpec:
    """Affine coefficient functions with their derivative evaluators.

    Shapes: c1(eta) -> (state_dim,), c2(eta) -> scalar, d0/d1(theta) ->
    (state_dim,), d2(theta) -> scalar.  Derivatives: dc1(eta) -> Jacobian
    (state_dim, state_dim), dc2(eta) -> (state_dim,), dd0/dd1(theta) ->
    (state_dim, incr_dim), dd2(theta) -> (incr_dim,).
    """

    state_dim: int
    incr_dim: int
    c1: Callable[[np.ndarray], np.ndarray]
    c2: Callable[[np.ndarray], float]
    d0: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], float]
    dc1: Callable[[np.ndarray], np.ndarray]
    dc2: Callable[[np.ndarray], np.ndarray]
    dd0: Callable[[np.ndarray], np.ndarray]
    dd1: Callable[[np.ndarray], np.ndarray]
    dd2: Callable[[np.ndarray], np.ndarray]
    # eta values where c1/c2 are finite: predicate, identically True by default
    eta_in_domain: Callable[[np.ndarray], bool] = lambda eta: True


def solve_affine_eigen(spec: AffineSpec, theta, tol: float = 1e-12, max_iter: int = 10_000):
    """Solve the fixed point A = C1(A + D0(theta)) + D1(theta) from A = 0.

    Damped fixed-point iteration with adaptive damping, following the branch
    path-connected to A(0) = 0.  Returns (A, Lambda).  Scalar specs fall back
    to safeguarded 1-D root-finding when the iteration stalls.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d0 = np.asarray(spec.d0(theta), dtype=float)
    d1 = np.asarray(spec.d1(theta), dtype=float)

    def iterate(A, omega):
        eta = A + d0
        if not spec.eta_in_domain(eta):
            return None
        nxt = np.asarray(spec.c1(eta), dtype=float) + d1
        if not np.all(np.isfinite(nxt)):
            return None
        return (1.0 - omega) * A + omega * nxt

    A = np.zeros(spec.state_dim)
    omega = 1.0
    residual = np.inf
    for _ in range(max_iter):
        nxt = iterate(A, omega)
        if nxt is None:
            omega *= 0.5
            if omega < 1e-8:
                break
            continue
        new_res = float(np.max(np.abs(nxt - A)))
        if new_res > residual * 1.000001 and omega > 1e-8:
            omega *= 0.5
            continue
        A = nxt
        residual = new_res
        if residual <= tol:
            lam = float(spec.c2(A + d0)) + float(spec.d2(theta))
            return A, lam

    if spec.state_dim == 1:
        A = _scalar_root(spec, theta, d0, d1, tol)
        lam = float(spec.c2(A + d0)) + float(spec.d2(theta))
        return A, lam
    raise NoEigenSolutionError(
        f"affine eigen fixed point did not converge at theta={theta} (residual {residual:.3e})"
    )


def _scalar_root(spec: AffineSpec, theta, d0, d1, tol):
    """Continuation in theta with bracketed root-finding, scalar state only."""
    from scipy.optimize import brentq

    def solve_at(th, guess):
        dd0 = np.asarray(spec.d0(th), dtype=float)
        dd1 = np.asarray(spec.d1(th), dtype=float)

        def res(a):
            eta = np.array([a]) + dd0
            if not spec.eta_in_domain(eta):
                return np.nan
            return float(spec.c1(eta)[0]) + float(dd1[0]) - a

        for half_width in (1e-3, 1e-2, 1e-1, 1.0, 10.0):
            lo, hi = guess - half_width, guess + half_width
            flo, fhi = res(lo), res(hi)
            if np.isnan(flo) or np.isnan(fhi):
                continue
            if flo == 0.0:
                return lo
            if flo * fhi < 0:
                return brentq(res, lo, hi, xtol=tol)
        raise NoEigenSolutionError(f"no bracketed eigen root near A={guess} at theta={th}")

    guess = 0.0
    for frac in np.linspace(0.0, 1.0, 21)[1:]:
        guess = solve_at(theta * frac, guess)
    return np.array([guess])


def eigen_derivative_at_zero(spec: AffineSpec) -> np.ndarray:
    """dA/dtheta(0) as a (state_dim, incr_dim) matrix, from the fixed point.

    Differentiating A = C1(A + D0) + D1 at theta = 0 (where A = 0, D0 = 0)
    gives (I - J) A' = J D0'(0) + D1'(0) with J the Jacobian of C1 at 0.
    """
    zero_eta = np.zeros(spec.state_dim)
    zero_theta = np.zeros(spec.incr_dim)
    J = np.atleast_2d(np.asarray(spec.dc1(zero_eta), dtype=float))
    dd0 = np.asarray(spec.dd0(zero_theta), dtype=float).reshape(spec.state_dim, spec.incr_dim)
    dd1 = np.asarray(spec.dd1(zero_theta), dtype=float).reshape(spec.state_dim, spec.incr_dim)
    lhs = np.eye(spec.state_dim) - J
    return np.linalg.solve(lhs, J @ dd0 + dd1)


def solve_poisson(spec):
    """Solve (I - P_0) g = E_x[Y_1] - E_pi[Y_1] for the supported model kinds.

    * AffineSpec -> Abar, the (state_dim, incr_dim) matrix with g(x) = Abar'x
      (from the eigen derivative at 0).
    * VarGarchParams -> the matrix C with g(y, H) = C y, C = rho (I - rho)^-1.
    * FiniteChainSpec -> the (K,) vector g with the stationary mean pinned to
      zero (sum_i pi_i g_i = 0).
    * RegimeSwitchingAr1 -> (A, gbar) with g(x, y) = gbar[x] + A[x] y.
    """
    if isinstance(spec, AffineSpec):
        return eigen_derivative_at_zero(spec)
    if isinstance(spec, FiniteChainSpec):
        return _finite_chain_poisson(spec)
    if isinstance(spec, RegimeSwitchingAr1):
        return _regime_ar1_poisson(spec)
    # VAR-GARCH parameters are detected structurally to avoid a circular import
    if hasattr(spec, "rho") and hasattr(spec, "w"):
        rho = np.asarray(spec.rho, dtype=float)
        eye = np.eye(rho.shape[0])
        if np.min(np.abs(np.linalg.eigvals(eye - rho))) < 1e-12:
            raise ValidationError("I - rho is singular: spectral radius of rho reaches 1")
        return rho @ np.linalg.inv(eye - rho)
    raise ValidationError(f"no Poisson solution rule for {type(spec).__name__}")


def _finite_chain_poisson(spec: FiniteChainSpec) -> np.ndarray:
    P = spec.transition
    K = spec.n_states
    pi = spec.stationary_dist()
    cond_mean = np.sum(P * spec.mean_increment(), axis=1)  # E_i[Y_1]
    h = cond_mean - float(pi @ cond_mean)
    A = np.vstack([np.eye(K) - P, pi[None, :]])
    b = np.concatenate([h, [0.0]])
    g, residuals, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    check = (np.eye(K) - P) @ g - h
    if np.max(np.abs(check)) > 1e-9:
        raise ValidationError(
            "finite-chain Poisson system is rank-deficient beyond the known nullspace"
        )
    return g


def _regime_ar1_poisson(params: RegimeSwitchingAr1):
    """g(x, y) = gbar[x] + A[x] y with A - P diag(beta) A = P beta."""
    P = params.transition
    K = P.shape[0]
    pi = FiniteChainSpec(
        P, _unit_lattice(K)
    ).stationary_dist()
    beta = params.beta
    mu = params.mu
    A = np.linalg.solve(np.eye(K) - P @ np.diag(beta), P @ beta)
    mean_y = float(pi @ mu) / (1.0 - float(pi @ beta))
    rhs = P @ mu + P @ (mu * A) - mean_y
    M = np.vstack([np.eye(K) - P, pi[None, :]])
    b = np.concatenate([rhs, [0.0]])
    gbar, *_ = np.linalg.lstsq(M, b, rcond=None)
    if np.max(np.abs((np.eye(K) - P) @ gbar - rhs)) > 1e-9:
        raise ValidationError("regime AR(1) Poisson system inconsistent")
    return A, gbar


def _unit_lattice(K: int):
    """Dummy increment block used when only the chain structure matters."""
    from ..core.chain import LatticeIncrements

    return LatticeIncrements(np.zeros((K, K, 1)), np.ones((K, K, 1)))
