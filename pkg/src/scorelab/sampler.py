"""Backward-time generation: Euler-Maruyama runs, exact moment oracles for
the linear backward dynamics, auxiliary-process simulation and the
score-approximation error estimate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend, _rng
from .gaussian import GaussianProblem, approx_score, true_score
from .mc import McEstimate
from .ou import OuSchedule, TimeGrid, mean_coeff

__all__ = [
    "EmRunConfig",
    "EmResult",
    "LinearSdeMoments",
    "em_backward_run",
    "em_law_moments",
    "ideal_backward_moments",
    "auxiliary_moments",
    "simulate_auxiliary",
    "auxiliary_exact_step",
    "estimate_epsilon_sn",
    "path_integral_epsilon_sn",
    "iter_interpolation",
    "interpolation_moments",
    "write_samples_csv",
]


@dataclass(frozen=True)
class EmRunConfig:
    """Euler-Maruyama run description.

    ``theta_hat`` is either one vector shared by every path or an
    ``(n_paths, d)`` array (one trained parameter per path).  Path ``i`` uses
    lane ``first_path + i`` of the ``(seed, "em.init")`` and
    ``(seed, "em.step")`` streams.
    """

    schedule: OuSchedule
    grid: TimeGrid
    theta_hat: np.ndarray
    n_paths: int
    seed: int
    first_path: int = 0
    strict_gamma: bool = False

    def __post_init__(self):
        th = np.asarray(self.theta_hat, dtype=float)
        if th.ndim == 0:
            th = th[None]
        if th.ndim == 2 and th.shape[0] != self.n_paths:
            raise ValueError("theta_hat rows must match n_paths")
        if th.ndim not in (1, 2):
            raise ValueError("theta_hat must be a vector or an (n_paths, d) array")
        object.__setattr__(self, "theta_hat", th)
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")
        if self.strict_gamma and self.grid.gamma > 0.5:
            raise ValueError("gamma must be at most 1/2 for the moment lemmas")
        if self.grid.end > self.schedule.T * (1 + 1e-12):
            raise ValueError("grid runs past the time horizon")

    @property
    def d(self) -> int:
        return self.theta_hat.shape[-1]

    def theta_rows(self) -> np.ndarray:
        return np.ascontiguousarray(np.broadcast_to(self.theta_hat, (self.n_paths, self.d)))

    @classmethod
    def to_horizon(cls, schedule, gamma, theta_hat, n_paths, seed, **kw):
        """Grid ending at T (the unstopped setting, K + 1 updates)."""
        return cls(schedule, TimeGrid.to_horizon(schedule, gamma), theta_hat, n_paths, seed, **kw)

    @classmethod
    def to_early_stop(cls, schedule, gamma, theta_hat, n_paths, seed, **kw):
        """Grid ending at T - epsilon (K updates)."""
        return cls(schedule, TimeGrid.to_early_stop(schedule, gamma), theta_hat, n_paths, seed, **kw)


@dataclass
class EmResult:
    samples: np.ndarray
    records: dict = field(default_factory=dict)
    nonfinite: int = 0


def _keys(seed):
    return _rng.stream_key(seed, "em.init"), _rng.stream_key(seed, "em.step")


def em_backward_run(config: EmRunConfig, family=None, record=None, backend=None) -> EmResult:
    """Run the scheme Y <- Y + gamma (Y + 2 s(T - k gamma, theta_hat, Y)) + sqrt(2 gamma) Z.

    Paths start from independent N(0, I) draws.  ``record`` lists step
    indices (0 = start) whose states are returned in ``records``.  Paths that
    become non-finite are dropped from the output and counted.
    """
    n, d = config.n_paths, config.d
    g = config.grid
    record = sorted({int(r) for r in (record or [])})
    if record and (record[0] < 0 or record[-1] > g.n_steps):
        raise ValueError("record indices outside the grid")
    rec_idx = np.asarray(record, dtype=np.int64)
    theta = config.theta_rows()
    lanes = np.arange(config.first_path, config.first_path + n, dtype=np.int64)
    key_init, key_step = _keys(config.seed)
    T = config.schedule.T
    out = np.empty((n, d))
    rec = np.empty((len(record), n, d))

    if family is None or getattr(family, "is_affine", False):
        def work(lo, hi, k):
            o = np.empty((hi - lo, d))
            r = np.empty((len(record), hi - lo, d))
            b = k.em_affine(key_init, key_step, lanes[lo:hi], theta[lo:hi], T, g.gamma,
                            g.n_steps, rec_idx, o, r)
            out[lo:hi] = o
            rec[:, lo:hi] = r
            return b

        _backend.run_lanes(work, n, backend)
    else:
        _em_general(family, key_init, key_step, lanes, theta, T, g, record, out, rec)

    ok = np.all(np.isfinite(out), axis=1)
    bad = int(n - np.count_nonzero(ok))
    records = {r: rec[i][ok] for i, r in enumerate(record)}
    return EmResult(samples=out[ok], records=records, nonfinite=bad)


def _em_general(family, key_init, key_step, lanes, theta, T, g, record, out, rec):
    d = theta.shape[1]
    nb = (d + 1) // 2
    noise = math.sqrt(2.0 * g.gamma)
    y = _rng.normals(key_init, lanes, 0, d)
    ri = 0
    if record and record[0] == 0:
        rec[0] = y
        ri = 1
    with np.errstate(all="ignore"):
        for k in range(g.n_steps):
            t = T - k * g.gamma
            s = family(np.full(len(lanes), t), theta, y)
            y = y + g.gamma * (y + 2.0 * s) + noise * _rng.normals(key_step, lanes, k * nb, d)
            if ri < len(record) and record[ri] == k + 1:
                rec[ri] = y
                ri += 1
    out[:] = y


# -- moment oracles ---------------------------------------------------------


@dataclass(frozen=True)
class LinearSdeMoments:
    """Mean vector and isotropic variance of a Gaussian marginal."""

    mean: np.ndarray
    variance: float

    @property
    def cov(self) -> np.ndarray:
        return self.variance * np.eye(self.mean.size)


def _check_t(t, schedule):
    if not (0.0 <= t <= schedule.T):
        raise ValueError(f"t must lie in [0, {schedule.T}], got {t}")


def auxiliary_moments(t: float, schedule: OuSchedule, theta_hat) -> LinearSdeMoments:
    """Marginal of dY = (Y + 2 s(T - t, theta_hat, Y)) dt + sqrt(2) dB from N(0, I).

    The drift is -Y + 2 exp(-(T - t)) theta_hat, so the mean solves
    v' = -v + 2 exp(t - T) theta_hat, v(0) = 0, and the variance stays at 1.
    """
    _check_t(t, schedule)
    th = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    T = schedule.T
    return LinearSdeMoments(th * (math.exp(-(T - t)) - math.exp(-(T + t))), 1.0)


def ideal_backward_moments(t: float, schedule: OuSchedule, problem: GaussianProblem) -> LinearSdeMoments:
    """Marginal of the backward dynamics driven by the true score, from N(0, I)."""
    return auxiliary_moments(t, schedule, problem.mu)


def em_law_moments(theta_hat, grid: TimeGrid, schedule: OuSchedule):
    """Exact means ``(K + 1, d)`` and variances ``(K + 1,)`` of the EM chain.

    For the affine family one step is Y' = (1 - gamma) Y + 2 gamma m_{T - k gamma}
    theta_hat + sqrt(2 gamma) Z.
    """
    th = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    g = grid.gamma
    means = np.zeros((grid.n_steps + 1, th.size))
    var = np.ones(grid.n_steps + 1)
    for k in range(grid.n_steps):
        m = mean_coeff(schedule.T - k * g)
        means[k + 1] = (1.0 - g) * means[k] + 2.0 * g * m * th
        var[k + 1] = (1.0 - g) ** 2 * var[k] + 2.0 * g
    return means, var


# -- auxiliary process ------------------------------------------------------


def auxiliary_exact_step(y, t: float, h: float, schedule: OuSchedule, theta_hat, z):
    """Exact transition of the affine auxiliary process from time t to t + h."""
    T = schedule.T
    th = np.asarray(theta_hat, dtype=float)
    shift = math.exp(-T) * (math.exp(t + h) - math.exp(t - h))
    return math.exp(-h) * y + shift * th + math.sqrt(-math.expm1(-2.0 * h)) * z


def simulate_auxiliary(schedule: OuSchedule, theta_hat, n_paths: int, seed: int, times,
                       gamma_fine: float = 1e-3, method: str = "fine", backend=None):
    """Samples of the auxiliary process at ``times`` (sorted, within [0, T]).

    ``method="fine"`` runs the Euler-Maruyama scheme with step ``gamma_fine``
    (times are rounded to the fine grid); ``method="exact"`` chains exact
    Gaussian transitions of the affine dynamics.  Returns ``(len(times), n, d)``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > schedule.T:
        raise ValueError("times must be sorted within [0, T]")
    th = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    d = th.shape[-1]
    if method == "fine":
        n_steps = int(math.ceil(times[-1] / gamma_fine - 1e-9))
        grid = TimeGrid(gamma_fine, max(n_steps, 1))
        idx = np.rint(times / gamma_fine).astype(np.int64)
        cfg = EmRunConfig(schedule, grid, th, n_paths, seed)
        res = em_backward_run(cfg, record=idx.tolist(), backend=backend)
        return np.stack([res.records[int(i)] for i in idx])
    if method != "exact":
        raise ValueError("method must be 'fine' or 'exact'")
    lanes = np.arange(n_paths)
    key = _rng.stream_key(seed, "aux.exact")
    nb = (d + 1) // 2
    y = _rng.normals(_rng.stream_key(seed, "aux.init"), lanes, 0, d)
    out = np.empty((times.size, n_paths, d))
    t = 0.0
    for i, ti in enumerate(times):
        if ti > t:
            y = auxiliary_exact_step(y, t, ti - t, schedule, th, _rng.normals(key, lanes, i * nb, d))
            t = ti
        out[i] = y
    return out


# -- score approximation error ----------------------------------------------


def estimate_epsilon_sn(schedule: OuSchedule, problem: GaussianProblem, theta_hat_samples) -> McEstimate:
    """(e^{-2 eps} - e^{-2T}) E|theta_hat - mu|^2 with a 95% interval.

    For the affine family the score error along the auxiliary process is
    m_{T-r}^2 |mu - theta_hat|^2 whatever the state, so its time integral is
    (e^{-2 eps} - e^{-2T}) |mu - theta_hat|^2 / 2.  The value returned keeps
    the factor 2 of the triangle-inequality split, so it is a valid
    eps_SN and exactly twice ``path_integral_epsilon_sn`` in expectation.
    """
    th = np.atleast_2d(np.asarray(theta_hat_samples, dtype=float))
    if th.shape[0] == 0 or th.size == 0:
        raise ValueError("no theta_hat samples")
    if th.shape[1] != problem.d:
        raise ValueError("dimension mismatch")
    factor = math.exp(-2.0 * schedule.epsilon) - math.exp(-2.0 * schedule.T)
    err = np.sum((th - problem.mu) ** 2, axis=1)
    if err.size == 1:
        return McEstimate(float(factor * err[0]), 1, 0.0)
    est = McEstimate.from_samples(err)
    return McEstimate(factor * est.mean, est.n, factor * est.half_width)


def path_integral_epsilon_sn(schedule: OuSchedule, problem: GaussianProblem, theta_hat_samples,
                             seed: int, gamma_fine: float = 1e-3, paths_per_theta: int = 1) -> McEstimate:
    """Direct estimate of int_0^{T-eps} E|grad log p_{T-r}(Y_r) - s(T-r, theta_hat, Y_r)|^2 dr.

    Simulates the auxiliary process on the fine grid for each theta_hat and
    integrates the squared score error with the trapezoidal rule.
    """
    th = np.atleast_2d(np.asarray(theta_hat_samples, dtype=float))
    if th.size == 0:
        raise ValueError("no theta_hat samples")
    T, eps = schedule.T, schedule.epsilon
    n_steps = max(1, int(round((T - eps) / gamma_fine)))
    h = (T - eps) / n_steps
    rows = np.repeat(th, paths_per_theta, axis=0)
    grid = TimeGrid(h, n_steps)
    cfg = EmRunConfig(schedule, grid, rows, rows.shape[0], seed)
    res = em_backward_run(cfg, record=list(range(n_steps + 1)))
    w = np.full(n_steps + 1, h)
    w[[0, -1]] = 0.5 * h
    total = np.zeros(rows.shape[0])
    for k in range(n_steps + 1):
        y = res.records[k]
        t = T - k * h
        diff = true_score(t, y, problem) - approx_score(t, rows, y)
        total += w[k] * np.sum(diff * diff, axis=1)
    per_theta = total.reshape(th.shape[0], paths_per_theta).mean(axis=1)
    if per_theta.size == 1:
        return McEstimate(float(per_theta[0]), 1, 0.0, seed)
    return McEstimate.from_samples(per_theta, seed)


# -- continuous interpolation -----------------------------------------------


def iter_interpolation(config: EmRunConfig, times, backend=None):
    """Yield ``(t, Y_hat_t, Y_hat_t - Y_{t_k})`` for each of ``times``, samples ``(n_paths, d)``.

    With t_k = floor(t / gamma) gamma and the grid state Y_k,
    Y_hat_t = Y_k + (t - t_k)(Y_k + 2 s(T - t_k, theta_hat, Y_k)) + sqrt(2) (B_t - B_{t_k}),
    so each time needs one fresh Gaussian per path.
    """
    g = config.grid
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > g.end * (1 + 1e-12)):
        raise ValueError("times outside the grid")
    ks = np.minimum(np.floor(times / g.gamma + 1e-12).astype(int), g.n_steps)
    res = em_backward_run(config, record=sorted(set(ks.tolist())), backend=backend)
    if res.nonfinite:
        raise FloatingPointError(f"{res.nonfinite} EM paths became non-finite")
    theta = config.theta_rows()
    d = config.d
    nb = (d + 1) // 2
    key = _rng.stream_key(config.seed, "em.interp")
    lanes = np.arange(config.first_path, config.first_path + config.n_paths)
    T = config.schedule.T
    for i, (t, k) in enumerate(zip(times, ks)):
        y = res.records[int(k)]
        dt = max(t - k * g.gamma, 0.0)
        drift = y + 2.0 * approx_score(T - k * g.gamma, theta, y)
        gap = dt * drift + math.sqrt(2.0 * dt) * _rng.normals(key, lanes, i * nb, d)
        yield float(t), y + gap, gap


def interpolation_moments(config: EmRunConfig, times, backend=None):
    """E|Y_hat_t|^2 and E|Y_hat_t - Y_hat_{t_k}|^2 at each time, as two lists of McEstimate."""
    second, gap2 = [], []
    for _, y, gap in iter_interpolation(config, times, backend):
        second.append(McEstimate.from_samples(np.sum(y * y, axis=1), config.seed))
        gap2.append(McEstimate.from_samples(np.sum(gap * gap, axis=1), config.seed))
    return second, gap2


# -- export -----------------------------------------------------------------


def write_samples_csv(path, samples) -> None:
    """One row per path, header ``y_0,...,y_{d-1}``; repr-exact decimal output."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"y_{j}" for j in range(samples.shape[1])])
        for row in samples:
            w.writerow([repr(float(v)) for v in row])
