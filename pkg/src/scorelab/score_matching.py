"""Score-matching objectives, stochastic gradients and SGLD for the affine
Gaussian example."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _backend, _rng
from .gaussian import AffineScore, GaussianProblem, exact_objective
from .mc import McEstimate
from .ou import OuSchedule, Quadrature, mean_coeff, std_coeff, tau_expectation, var_coeff

__all__ = [
    "TrainingSample",
    "SgldConfig",
    "SgldConstants",
    "SgldResult",
    "draw_training_samples",
    "chi_mean",
    "noncentral_chi_mean",
    "sgld_constants",
    "stochastic_gradient_general",
    "stochastic_gradient_gaussian",
    "exact_gradient",
    "denoising_loss",
    "sgld_run",
    "sgld_error_bound",
    "sgld_second_moment_bound",
    "explicit_vs_denoising_check",
    "PairDifference",
    "ConstancyReport",
]


@dataclass(frozen=True)
class TrainingSample:
    """One or many draws ``(tau, x0, z)``; arrays carry a leading batch axis."""

    tau: np.ndarray
    x0: np.ndarray
    z: np.ndarray

    @property
    def x(self):
        """The noised point m_tau x0 + sigma_tau z."""
        m, s = _coeffs(self.tau)
        return m * self.x0 + s * self.z


def _coeffs(tau, with_var=False):
    tau = np.asarray(tau, dtype=float)
    out = [np.asarray(mean_coeff(tau)), np.asarray(std_coeff(tau))]
    if with_var:
        out.append(np.asarray(var_coeff(tau)))
    if tau.ndim:
        out = [a[..., None] for a in out]
    return tuple(out)


def draw_training_samples(schedule: OuSchedule, problem: GaussianProblem, n: int, seed: int,
                          tag: str = "train", first_lane: int = 0) -> TrainingSample:
    """Draw ``n`` i.i.d. samples with tau ~ U[eps, T], x0 ~ N(mu, I), z ~ N(0, I)."""
    lanes = np.arange(first_lane, first_lane + n)
    u = _rng.uniforms(_rng.stream_key(seed, tag + ".tau"), lanes, 0)
    tau = schedule.epsilon + schedule.length * u
    x0 = problem.mu + _rng.normals(_rng.stream_key(seed, tag + ".x0"), lanes, 0, problem.d)
    z = _rng.normals(_rng.stream_key(seed, tag + ".z"), lanes, 0, problem.d)
    return TrainingSample(tau, x0, z)


def stochastic_gradient_gaussian(theta, sample: TrainingSample, problem: GaussianProblem | None = None):
    """H(theta, x) for the affine family with kappa = sigma^2.

    Uses 2 m (sigma z + sigma^2 (-(m x0 + sigma z) + m theta)), which needs no
    division and stays finite at tau = 0.
    """
    theta = np.asarray(theta, dtype=float)
    if problem is not None and theta.shape[-1] != problem.d:
        raise ValueError("dimension mismatch")
    m, s, s2 = _coeffs(sample.tau, with_var=True)
    z = np.asarray(sample.z, dtype=float)
    x = m * np.asarray(sample.x0, dtype=float) + s * z
    return 2.0 * m * (s * z + s2 * (-x + m * theta))


def stochastic_gradient_general(theta, sample: TrainingSample, family, kappa=var_coeff):
    """H(theta, x) = 2 kappa(t) J_theta(s)^T (z / sigma_t + s(t, theta, m_t x0 + sigma_t z)).

    ``family`` is callable as ``family(t, theta, x)`` and provides
    ``jacobian_theta`` returning ``(..., M, d)``.  The product is evaluated as
    2 (kappa / sigma^2) J^T (sigma z + sigma^2 s) so that kappa = sigma^2
    reproduces the Gaussian expression exactly.  A zero-variance time with a
    nonzero ``z`` is rejected.
    """
    theta = np.asarray(theta, dtype=float)
    tau = np.asarray(sample.tau, dtype=float)
    m, s, s2 = _coeffs(tau, with_var=True)
    z = np.asarray(sample.z, dtype=float)
    x = m * np.asarray(sample.x0, dtype=float) + s * z
    zero = np.broadcast_to(s == 0.0, z.shape[:-1] + (1,))
    if np.any(zero & np.any(z != 0.0, axis=-1, keepdims=True)):
        raise ZeroDivisionError("sigma_t = 0 with nonzero z: the denoising target is undefined")
    sc = family(tau, theta, x)
    jac = family.jacobian_theta(tau, theta, x)
    k = np.asarray(kappa(tau), dtype=float)
    if tau.ndim:
        k = k[..., None]
    safe = np.where(s2 > 0.0, s2, 1.0)
    weight = np.where(s2 > 0.0, k / safe, 0.0)
    inner = np.where(s2 > 0.0, s * z + s2 * sc, 0.0)
    out = 2.0 * weight * np.einsum("...ij,...i->...j", jac, inner)
    # sigma_t = 0 and z = 0: H = 2 kappa J^T s
    if np.any(zero):
        at_zero = 2.0 * k * np.einsum("...ij,...i->...j", jac, sc)
        out = np.where(zero, at_zero, out)
    return out


def exact_gradient(theta, schedule: OuSchedule, problem: GaussianProblem, e1: float | None = None):
    """h(theta) = 2 E[sigma^2 m^2] (theta - mu)."""
    if e1 is None:
        e1 = tau_expectation(lambda t: var_coeff(t) * mean_coeff(t) ** 2, schedule)
    return 2.0 * e1 * (np.asarray(theta, dtype=float) - problem.mu)


def denoising_loss(theta, sample: TrainingSample, family=None, kappa=var_coeff):
    """Per-sample kappa(t) |z / sigma_t + s(t, theta, x)|^2, evaluated division-free."""
    if family is None:
        family = AffineScore(np.shape(sample.x0)[-1])
    tau = np.asarray(sample.tau, dtype=float)
    m, s = _coeffs(tau)
    z = np.asarray(sample.z, dtype=float)
    x = m * np.asarray(sample.x0, dtype=float) + s * z
    r = z + s * family(tau, theta, x)
    k = np.asarray(kappa(tau), dtype=float)
    s2 = np.asarray(var_coeff(tau), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(s2 > 0.0, k / np.where(s2 > 0.0, s2, 1.0), np.inf)
    return ratio * np.sum(r * r, axis=-1)


# -- SGLD constants ---------------------------------------------------------


def chi_mean(d: int) -> float:
    """E|Z| for Z ~ N(0, I_d)."""
    return float(math.sqrt(2.0) * math.exp(special.gammaln((d + 1) / 2) - special.gammaln(d / 2)))


def noncentral_chi_mean(d: int, mu_norm_sq: float) -> float:
    """E|X| for X ~ N(mu, I_d), via the confluent hypergeometric closed form."""
    return float(chi_mean(d) * special.hyp1f1(-0.5, d / 2.0, -0.5 * mu_norm_sq))


@dataclass(frozen=True)
class SgldConstants:
    """Schedule expectations and the two SGLD bound constants.

    ``q`` is E[sigma^4 m^2 (|Z|/sigma + m|X0| + sigma|Z| + m|theta*|)^2].
    """

    e1: float
    e2: float
    q: float
    c1: float
    c2: float

    @property
    def lambda_max(self) -> float:
        return min(self.e1 / (4.0 * self.e2), 1.0 / (2.0 * self.e1))


def _q_integrand(t, d, mu_sq, ez, ex0, tstar):
    m = np.exp(-t)
    s2 = -np.expm1(-2.0 * t)
    s = np.sqrt(s2)
    g = 1.0 + s2
    return (
        m * m * s2 * g * g * d
        + s2 * s2 * m**4 * (d + mu_sq)
        + s2 * s2 * m**4 * tstar**2
        + 2.0 * s2 * s * m**3 * g * ez * ex0
        + 2.0 * s2 * s * m**3 * g * tstar * ez
        + 2.0 * s2 * s2 * m**4 * tstar * ex0
    )


def sgld_constants(schedule: OuSchedule, problem: GaussianProblem) -> SgldConstants:
    """E[sigma^2 m^2], E[sigma^4 m^4], C_SGLD,1 and C_SGLD,2.

    The squared sum inside C_SGLD,2 is expanded; cross terms factor because
    tau, X0 and Z are independent, leaving E|Z| (chi mean) and E|X0|
    (noncentral chi mean) as the only non-polynomial moments.
    """
    e1 = tau_expectation(lambda t: var_coeff(t) * mean_coeff(t) ** 2, schedule)
    e2 = tau_expectation(lambda t: var_coeff(t) ** 2 * mean_coeff(t) ** 4, schedule)
    d = problem.d
    mu_sq = problem.theta_star_norm_sq
    ez = chi_mean(d)
    ex0 = noncentral_chi_mean(d, mu_sq)
    tstar = math.sqrt(mu_sq)
    # odd powers of sigma ~ sqrt(2t) spoil Gauss-Legendre near t = 0; with t = u^2
    # the integrand is smooth in u
    rule = Quadrature(math.sqrt(schedule.epsilon), math.sqrt(schedule.T), 64)
    q = rule.integrate(lambda u: 2.0 * u * _q_integrand(u * u, d, mu_sq, ez, ex0, tstar)) / schedule.length
    return SgldConstants(e1=e1, e2=e2, q=q, c1=1.0 / e1, c2=4.0 * q / e1)


# -- SGLD -------------------------------------------------------------------


@dataclass(frozen=True)
class SgldConfig:
    """SGLD hyper-parameters; ``beta = inf`` switches the Langevin noise off."""

    lam: float
    beta: float
    n_iters: int
    theta0: np.ndarray
    schedule: OuSchedule
    problem: GaussianProblem
    constants: SgldConstants = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float)).copy()
        if theta0.shape != (self.problem.d,):
            raise ValueError("theta0 has the wrong dimension")
        theta0.setflags(write=False)
        object.__setattr__(self, "theta0", theta0)
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.n_iters < 0:
            raise ValueError("n_iters must be nonnegative")
        c = sgld_constants(self.schedule, self.problem)
        object.__setattr__(self, "constants", c)
        # tiny slack so a step size computed as exactly the maximum is accepted
        if not (0.0 < self.lam <= c.lambda_max * (1.0 + 1e-12)):
            raise ValueError(f"lambda must lie in (0, {c.lambda_max:.6g}], got {self.lam}")

    @property
    def e0(self) -> float:
        """|theta0 - theta*|^2 for the deterministic start."""
        diff = self.theta0 - self.problem.mu
        return float(diff @ diff)

    @property
    def noise_scale(self) -> float:
        return 0.0 if math.isinf(self.beta) else math.sqrt(2.0 * self.lam / self.beta)


@dataclass
class SgldResult:
    theta: np.ndarray
    checkpoints: dict
    mode: str
    seed: int
    nonfinite: int = 0


_MODES = ("faithful", "collapsed", "exact-gradient")


def sgld_run(config: SgldConfig, seed: int, n_replicas: int = 1, checkpoints=None,
             mode: str = "faithful", first_replica: int = 0, backend=None) -> SgldResult:
    """Run independent SGLD replicas and record iterates at ``checkpoints``.

    Modes:

    * ``faithful``: one fresh (tau, x0, z) per step, gradient from the
      stochastic-gradient formula.
    * ``collapsed``: same law, sampled from the tau sequence alone; the
      (x0, z) contribution is Gaussian given tau and is merged with the
      Langevin noise.  Much cheaper per step, used for very long runs.
    * ``exact-gradient``: the expected gradient h replaces H.

    Replica ``i`` uses lane ``first_replica + i`` of every stream, so any
    replica can be reproduced on its own.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    if n_replicas < 1:
        raise ValueError("n_replicas must be positive")
    n = int(config.n_iters)
    cps = sorted({int(c) for c in (checkpoints or [])} | {n})
    if cps[0] < 0 or cps[-1] > n:
        raise ValueError("checkpoints must lie in [0, n_iters]")
    d = config.problem.d
    lanes = np.arange(first_replica, first_replica + n_replicas, dtype=np.int64)
    theta0 = np.ascontiguousarray(np.broadcast_to(config.theta0, (n_replicas, d)))
    mu = np.ascontiguousarray(config.problem.mu)
    sch = config.schedule
    out = np.empty((n_replicas, d))

    if mode == "exact-gradient":
        rec, bad = _exact_gradient_run(config, seed, lanes, theta0, cps)
        out[:] = rec[-1]
    elif mode == "faithful":
        record = np.asarray(cps, dtype=np.int64)
        rec = np.empty((len(cps), n_replicas, d))
        keys = [_rng.stream_key(seed, "sgld." + t) for t in ("tau", "x0", "z", "xi")]

        def work(lo, hi, k):
            r = np.empty((len(cps), hi - lo, d))
            o = np.empty((hi - lo, d))
            b = k.sgld_faithful(*keys, lanes[lo:hi], theta0[lo:hi], mu, sch.T, sch.epsilon,
                                config.lam, config.noise_scale, n, record, o, r)
            out[lo:hi] = o
            rec[:, lo:hi] = r
            return b

        bad = _backend.run_lanes(work, n_replicas, backend)
    else:
        stops = np.asarray([c for c in cps if c > 0], dtype=np.int64)
        rec = np.empty((len(stops), n_replicas, d))
        beta_term = 0.0 if math.isinf(config.beta) else 2.0 * config.lam / config.beta
        key_tau = _rng.stream_key(seed, "sgld.tau")
        key_seg = _rng.stream_key(seed, "sgld.segment")

        def work(lo, hi, k):
            r = np.empty((len(stops), hi - lo, d))
            o = np.empty((hi - lo, d))
            b = k.sgld_collapsed(key_tau, key_seg, lanes[lo:hi], theta0[lo:hi], mu, sch.T,
                                 sch.epsilon, config.lam, beta_term, n, stops, o, r)
            out[lo:hi] = o
            rec[:, lo:hi] = r
            return b

        if len(stops):
            bad = _backend.run_lanes(work, n_replicas, backend)
        else:
            out[:] = theta0
            bad = 0
        if cps[0] == 0:
            rec = np.concatenate([theta0[None], rec])

    if bad:
        raise FloatingPointError(
            f"SGLD diverged: {bad} of {n_replicas} replicas left the finite range "
            f"(lambda={config.lam}, beta={config.beta})"
        )
    return SgldResult(theta=out, checkpoints={c: rec[i] for i, c in enumerate(cps)},
                      mode=mode, seed=seed)


def _exact_gradient_run(config, seed, lanes, theta0, cps):
    c = config.constants
    a = 1.0 - 2.0 * config.lam * c.e1
    noise = config.noise_scale
    key = _rng.stream_key(seed, "sgld.xi")
    mu = config.problem.mu
    d = mu.size
    nb = (d + 1) // 2
    th = theta0.copy()
    rec = np.empty((len(cps),) + th.shape)
    ci = 0
    for it in range(config.n_iters + 1):
        while ci < len(cps) and cps[ci] == it:
            rec[ci] = th
            ci += 1
        if it == config.n_iters:
            break
        # theta - lam * 2 e1 (theta - mu), written as a contraction toward mu
        th = mu + a * (th - mu)
        if noise:
            th = th + noise * _rng.normals(key, lanes, it * nb, d)
    bad = int(np.count_nonzero(~np.all(np.isfinite(th), axis=1)))
    return rec, bad


# -- bounds -----------------------------------------------------------------


def sgld_error_bound(config: SgldConfig, n: int, e0: float | None = None) -> float:
    """Bound on E|theta_n - theta*|^2: geometric decay plus the noise floors."""
    c = config.constants
    e0 = config.e0 if e0 is None else e0
    floor = 0.0 if math.isinf(config.beta) else config.problem.d * c.c1 / config.beta
    return float((1.0 - 2.0 * config.lam * c.e1) ** n * e0 + floor + config.lam * c.c2)


def sgld_second_moment_bound(config: SgldConfig, n: int, e0: float | None = None) -> float:
    """Bound on E|theta_n|^2 (exponential decay form, doubled, plus 2|theta*|^2)."""
    c = config.constants
    e0 = config.e0 if e0 is None else e0
    floor = 0.0 if math.isinf(config.beta) else config.problem.d * c.c1 / config.beta
    return float(
        2.0 * math.exp(-2.0 * n * config.lam * c.e1) * e0
        + 2.0 * floor
        + 2.0 * config.lam * c.c2
        + 2.0 * config.problem.theta_star_norm_sq
    )


# -- objective constancy ----------------------------------------------------


@dataclass(frozen=True)
class PairDifference:
    i: int
    j: int
    exact: float
    estimate: McEstimate | None
    status: str  # "pass", "fail" or "inconclusive"

    def to_dict(self):
        return {
            "i": self.i,
            "j": self.j,
            "exact": self.exact,
            "estimate": None if self.estimate is None else self.estimate.to_dict(),
            "status": self.status,
        }


@dataclass(frozen=True)
class ConstancyReport:
    thetas: list
    pairs: list

    @property
    def status(self) -> str:
        states = {p.status for p in self.pairs}
        if "fail" in states:
            return "fail"
        if "inconclusive" in states:
            return "inconclusive"
        return "pass"

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def explicit_vs_denoising_check(theta_list, schedule: OuSchedule, problem: GaussianProblem,
                                mc_n: int, seed: int, kappa=var_coeff,
                                family=None) -> ConstancyReport:
    """Compare objective differences of the denoising form against the exact form.

    For each pair (theta_i, theta_j) the per-sample difference of denoising
    losses (common random numbers) is averaged and the exact difference
    E[kappa m^2](|theta_i - mu|^2 - |theta_j - mu|^2) subtracted; the pair
    passes when the 95% interval contains 0.  Non-finite per-sample terms make
    the pair inconclusive.
    """
    thetas = [np.atleast_1d(np.asarray(t, dtype=float)) for t in theta_list]
    if len(thetas) < 2:
        raise ValueError("need at least two parameters")
    sample = draw_training_samples(schedule, problem, mc_n, seed, tag="constancy")
    with np.errstate(all="ignore"):
        losses = [denoising_loss(t, sample, family, kappa) for t in thetas]
    exact = [exact_objective(t, schedule, problem, kappa) for t in thetas]
    pairs = []
    for i in range(len(thetas)):
        for j in range(i + 1, len(thetas)):
            ex = exact[i] - exact[j]
            if np.array_equal(thetas[i], thetas[j]):
                pairs.append(PairDifference(i, j, ex, McEstimate(0.0, mc_n, 0.0, seed), "pass"))
                continue
            with np.errstate(all="ignore"):
                diff = losses[i] - losses[j]
            if not np.all(np.isfinite(diff)):
                pairs.append(PairDifference(i, j, ex, None, "inconclusive"))
                continue
            est = McEstimate.from_samples(diff - ex, seed)
            pairs.append(PairDifference(i, j, ex, est, "pass" if est.contains(0.0) else "fail"))
    return ConstancyReport(thetas=[t.tolist() for t in thetas], pairs=pairs)
