"""Three-institution VAR-GARCH model for conditional tail-risk estimation.

    y_t = mu + rho y_{t-1} + z_t,   z_t = H_t^{1/2} eps_t,
    H_{t+1} = W + A o z_t z_t' + B o H_t          (o = Hadamard product)

with y_0 = 0, H_1 = W.  The latent state is (y_t, H_{t+1}); the walk is the
accumulated return S_n = sum y_i, so the increment is degenerate (Y = y').

Tilting: the link k((y,H), (y',H'), eta) = eta'y' shifts the innovation to
z ~ N(H eta, H) (the natural Gaussian exponential family); the realized
tilted z drives the H recursion.  phi((y,H), eta) = eta'(mu + rho y)
+ eta'H eta / 2.  The increment cumulant is degenerate, psi = theta'y', so
theta contributes nothing to weights or gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core.model import MarkovRandomWalkModel
from ..errors import NumericOverflowError, ValidationError
from ..tilting import linear_state_link

__all__ = ["VarGarchParams", "build_var_garch"]


@dataclass(frozen=True)
class VarGarchParams:
    mu: np.ndarray        # (3,)
    rho: np.ndarray       # (3, 3)
    w: np.ndarray         # (3, 3) positive definite
    a: np.ndarray         # (3, 3) symmetric
    b: np.ndarray         # (3, 3) symmetric
    horizon: int = 5

    def __post_init__(self):
        for name in ("mu", "rho", "w", "a", "b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.mu.shape != (3,) or self.rho.shape != (3, 3):
            raise ValidationError("mu must be (3,), rho must be (3, 3)")
        for name in ("w", "a", "b"):
            m = getattr(self, name)
            if m.shape != (3, 3) or not np.allclose(m, m.T, atol=1e-12):
                raise ValidationError(f"{name} must be a symmetric 3x3 matrix")
        if np.min(np.linalg.eigvalsh(self.w)) <= 0:
            raise ValidationError("w must be positive definite")


PSD_TOL = 1e-10


def _split_state(X: np.ndarray):
    return X[:, :3], X[:, 3:].reshape(-1, 3, 3)


def build_var_garch(p: VarGarchParams) -> MarkovRandomWalkModel:
    def initial_sampler(n, rng):
        out = np.zeros((n, 12))
        out[:, 3:] = p.w.reshape(-1)
        return out

    def _chol(H: np.ndarray) -> np.ndarray:
        try:
            return np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            min_eig = float(np.min(np.linalg.eigvalsh(H)))
            if min_eig < -PSD_TOL:
                raise NumericOverflowError(
                    f"H lost positive semidefiniteness (min eigenvalue {min_eig:.3e})"
                )
            jitter = (PSD_TOL - min_eig) * np.eye(3)
            return np.linalg.cholesky(H + jitter)

    def transition_sampler(X, eta, rng):
        y, H = _split_state(X)
        L = _chol(H)
        eps = rng.standard_normal((len(X), 3))
        z = np.einsum("nij,nj->ni", L, eps)
        if eta.size and np.any(eta):
            z = z + H @ eta
        y2 = p.mu + y @ p.rho.T + z
        H2 = p.w + p.a * np.einsum("ni,nj->nij", z, z) + p.b * H
        out = np.empty_like(X)
        out[:, :3] = y2
        out[:, 3:] = H2.reshape(len(X), -1)
        return out

    def increment_sampler(X, X2, theta, rng):
        return X2[:, :3].copy()

    def psi(X, X2, theta):
        return X2[:, :3] @ theta

    def dpsi_dtheta(X, X2, theta):
        return X2[:, :3].copy()

    def phi(X, eta):
        y, H = _split_state(X)
        lin = (p.mu + y @ p.rho.T) @ eta
        quad = 0.5 * np.einsum("i,nij,j->n", eta, H, eta)
        return lin + quad

    def dphi_deta(X, eta):
        y, H = _split_state(X)
        return p.mu + y @ p.rho.T + H @ eta

    return MarkovRandomWalkModel(
        name="var-garch",
        state_dim=12,
        incr_dim=3,
        eta_dim=3,
        initial_sampler=initial_sampler,
        transition_sampler=transition_sampler,
        increment_sampler=increment_sampler,
        psi=psi,
        phi=phi,
        link=linear_state_link([0, 1, 2], 3),
        dpsi_dtheta=dpsi_dtheta,
        dphi_deta=dphi_deta,
        domain_check=lambda theta, eta: bool(
            np.all(np.isfinite(theta)) and np.all(np.isfinite(eta))
        ),
        extras={"params": p},
    )
