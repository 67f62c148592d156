"""Forward Ornstein-Uhlenbeck noising: schedules, marginal coefficients and
quadrature over the uniformly distributed training time."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _rng

__all__ = [
    "OuSchedule",
    "TimeGrid",
    "Quadrature",
    "mean_coeff",
    "std_coeff",
    "var_coeff",
    "forward_marginal_sample",
    "tau_expectation",
    "gauss_legendre",
]


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("time must be nonnegative")
    return t


def mean_coeff(t):
    """m_t = exp(-t)."""
    t = _check_time(t)
    out = np.exp(-t)
    return float(out) if out.ndim == 0 else out


def var_coeff(t):
    """sigma_t^2 = 1 - exp(-2t), computed with expm1 to keep small-t accuracy."""
    t = _check_time(t)
    out = -np.expm1(-2.0 * t)
    return float(out) if out.ndim == 0 else out


def std_coeff(t):
    """sigma_t = sqrt(1 - exp(-2t))."""
    out = np.sqrt(var_coeff(t))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class OuSchedule:
    """Time horizon ``T`` and early-stopping time ``epsilon`` of the forward process."""

    T: float
    epsilon: float = 0.0

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive and finite, got {self.T}")
        if not (0.0 <= self.epsilon < min(1.0, self.T)):
            raise ValueError(f"epsilon must lie in [0, min(1, T)), got {self.epsilon}")

    def m(self, t):
        return mean_coeff(t)

    def sigma(self, t):
        return std_coeff(t)

    @property
    def length(self) -> float:
        return self.T - self.epsilon


@dataclass(frozen=True)
class TimeGrid:
    """Uniform backward-time grid ``t_k = k * gamma`` with ``n_steps`` updates.

    ``to_horizon`` builds the grid whose last point is ``T`` (K + 1 steps);
    ``to_early_stop`` stops at ``T - epsilon`` (K steps).
    """

    gamma: float
    n_steps: int

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")

    @property
    def times(self) -> np.ndarray:
        return self.gamma * np.arange(self.n_steps + 1)

    @property
    def end(self) -> float:
        return self.gamma * self.n_steps

    @classmethod
    def to_horizon(cls, schedule: OuSchedule, gamma: float) -> "TimeGrid":
        n = max(1, int(round(schedule.T / gamma)))
        return cls(schedule.T / n, n)

    @classmethod
    def to_early_stop(cls, schedule: OuSchedule, gamma: float) -> "TimeGrid":
        n = max(1, int(round(schedule.length / gamma)))
        return cls(schedule.length / n, n)


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


@dataclass(frozen=True)
class Quadrature:
    """Gauss-Legendre rule on ``[a, b]``; exact for polynomials of degree ``2n - 1``."""

    a: float
    b: float
    n: int = 64
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1 or not self.b > self.a:
            raise ValueError("need n >= 1 and b > a")
        x, w = gauss_legendre(self.n, self.a, self.b)
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "weights", w)

    @property
    def degree(self) -> int:
        return 2 * self.n - 1

    @classmethod
    def for_schedule(cls, schedule: OuSchedule, n: int = 64) -> "Quadrature":
        return cls(schedule.epsilon, schedule.T, n)

    def integrate(self, f: Callable) -> float:
        vals = np.asarray(f(self.nodes), dtype=float)
        if vals.shape != self.nodes.shape:
            vals = np.broadcast_to(vals, self.nodes.shape)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("integrand is not finite at a quadrature node")
        return float(np.dot(self.weights, vals))


def tau_expectation(
    integrand: Callable, schedule: OuSchedule, rule: Quadrature | None = None
) -> float:
    """E[f(tau)] for tau ~ Uniform([epsilon, T]).

    ``integrand`` receives an array of times and must return an array of the
    same shape.
    """
    if rule is None:
        rule = Quadrature.for_schedule(schedule)
    elif not (np.isclose(rule.a, schedule.epsilon) and np.isclose(rule.b, schedule.T)):
        raise ValueError("quadrature interval does not match the schedule")
    return rule.integrate(integrand) / schedule.length


def forward_marginal_sample(x0, t: float, seed: int, lanes=None, tag: str = "forward"):
    """Draw X_t = m_t x0 + sigma_t Z for each row of ``x0``.

    ``x0`` is ``(n, d)`` (or ``(d,)``); row ``i`` uses lane ``lanes[i]``
    (default ``i``) of the stream ``(seed, tag)``.
    """
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    x = np.atleast_2d(x0)
    n, d = x.shape
    if lanes is None:
        lanes = np.arange(n)
    lanes = np.asarray(lanes)
    if lanes.shape != (n,):
        raise ValueError("lanes must have one entry per row of x0")
    z = _rng.normals(_rng.stream_key(seed, tag), lanes, 0, d)
    out = mean_coeff(t) * x + std_coeff(t) * z
    return out[0] if single else out
