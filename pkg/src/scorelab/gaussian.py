"""Closed-form objects for Gaussian data N(mu, I_d): the true score, the
affine approximating family, its regularity constants and exact Gaussian W2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ou import OuSchedule, mean_coeff, tau_expectation, var_coeff

__all__ = [
    "GaussianProblem",
    "AffineScoreConstants",
    "AffineScore",
    "true_score",
    "approx_score",
    "affine_constants",
    "w2_gaussian",
    "exact_objective",
    "sqrtm_psd",
]

# Any positive value satisfies the second-derivative condition for the affine
# family (its x-Jacobian is constant); keep it tiny so downstream constants stay tight.
AFFINE_K4 = 1e-12


@dataclass(frozen=True)
class GaussianProblem:
    """Data distribution N(mu, I_d) with unknown mean ``mu``."""

    mu: np.ndarray

    def __init__(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float)).copy()
        if mu.ndim != 1 or mu.size == 0:
            raise ValueError("mu must be a nonempty vector")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def d(self) -> int:
        return self.mu.size

    def theta_star(self) -> np.ndarray:
        return self.mu.copy()

    @property
    def ex0sq(self) -> float:
        """E|X_0|^2 = d + |mu|^2."""
        return float(self.d + self.mu @ self.mu)

    @property
    def theta_star_norm_sq(self) -> float:
        return float(self.mu @ self.mu)


@dataclass(frozen=True)
class AffineScoreConstants:
    K1: float
    K2: float
    K3: float
    K4: float
    K_total: float
    alpha: float
    L_mo: float


def _check_dims(a, b):
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def true_score(t, x, problem: GaussianProblem):
    """grad log p_t(x) = -x + m_t mu."""
    x = np.asarray(x, dtype=float)
    _check_dims(x, problem.mu)
    m = np.asarray(mean_coeff(t))[..., None] if np.ndim(t) else mean_coeff(t)
    return -x + m * problem.mu


def approx_score(t, theta, x):
    """s(t, theta, x) = -x + m_t theta."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    _check_dims(x, theta)
    m = np.asarray(mean_coeff(t))[..., None] if np.ndim(t) else mean_coeff(t)
    return -x + m * theta


class AffineScore:
    """The family s(t, theta, x) = -x + exp(-t) theta, with M = d."""

    is_affine = True

    def __init__(self, d: int):
        self.d = int(d)

    def __call__(self, t, theta, x):
        return approx_score(t, theta, x)

    def jacobian_theta(self, t, theta, x):
        """d s^(i) / d theta_j = m_t delta_ij, shape ``(..., d, d)``."""
        x = np.asarray(x, dtype=float)
        m = np.broadcast_to(np.asarray(mean_coeff(t)), x.shape[:-1])
        return m[..., None, None] * np.eye(self.d)

    def jacobian_x(self, t, theta, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-np.eye(self.d), x.shape[:-1] + (self.d, self.d))


def affine_constants(problem: GaussianProblem) -> AffineScoreConstants:
    """Regularity constants of the affine family.

    |s(t,th,x) - s(t',th',x')| <= |th||t - t'| + |th - th'| + |x - x'| gives
    K1 = K2 = K3 = 1 with alpha = 1; s(0, 0, 0) = 0 so K_total = 3.  The true
    score is strongly monotone with constant 1.
    """
    s000 = float(np.linalg.norm(approx_score(0.0, np.zeros(problem.d), np.zeros(problem.d))))
    k1 = k2 = k3 = 1.0
    return AffineScoreConstants(
        K1=k1, K2=k2, K3=k3, K4=AFFINE_K4, K_total=k1 + k2 + k3 + s000, alpha=1.0, L_mo=1.0
    )


def sqrtm_psd(a: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Symmetric square root with eigenvalues clipped at zero.

    Raises ``ValueError`` for non-symmetric input or eigenvalues below
    ``-tol * max|eig|``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if not np.allclose(a, a.T, atol=1e-10 * scale, rtol=0):
        raise ValueError("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    if w.size and w.min() < -tol * max(1.0, np.abs(w).max()):
        raise ValueError("matrix is not positive semi-definite")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def w2_gaussian(mu1, cov1, mu2, cov2) -> float:
    """Exact W2 between N(mu1, cov1) and N(mu2, cov2)."""
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=float))
    c1 = np.atleast_2d(np.asarray(cov1, dtype=float))
    c2 = np.atleast_2d(np.asarray(cov2, dtype=float))
    if not (mu1.shape == mu2.shape and c1.shape == c2.shape == (mu1.size, mu1.size)):
        raise ValueError("shape mismatch between means and covariances")
    s2 = sqrtm_psd(c2)
    sqrtm_psd(c1)  # validates cov1
    cross = sqrtm_psd(s2 @ c1 @ s2)
    diff = mu1 - mu2
    val = float(diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * np.trace(cross))
    return float(np.sqrt(max(val, 0.0)))


def exact_objective(theta, schedule: OuSchedule, problem: GaussianProblem, kappa=None) -> float:
    """U(theta) - U(mu) = E[kappa(tau) m_tau^2] |theta - mu|^2, with kappa = sigma^2 by default."""
    theta = np.asarray(theta, dtype=float)
    _check_dims(theta, problem.mu)
    if kappa is None:
        kappa = var_coeff
    weight = tau_expectation(lambda t: kappa(t) * mean_coeff(t) ** 2, schedule)
    diff = theta - problem.mu
    return float(weight * (diff @ diff))
