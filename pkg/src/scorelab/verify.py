"""Monte Carlo harness for the moment lemmas, exact identities and theorems.

Every check returns a ``LemmaCheck``: an estimated or exact left side, a
formula right side and a verdict.  Inequalities pass when the upper end of
the 95% interval is below the right side and fail when the lower end is
above it; anything in between is inconclusive.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from . import _rng
from .bounds import (
    Theorem1Params,
    Theorem2Params,
    c_em_p,
    c_emose_p,
    lemma_constants,
    theorem1_bound,
    theorem2_bound,
    to_jsonable,
)
from .gaussian import AffineScore, AffineScoreConstants, GaussianProblem, affine_constants
from .mc import McEstimate
from .metrics import w2_fit_estimate
from .ou import OuSchedule, TimeGrid, mean_coeff, var_coeff
from .sampler import EmRunConfig, em_backward_run, iter_interpolation, simulate_auxiliary
from .score_matching import (
    SgldConfig,
    TrainingSample,
    explicit_vs_denoising_check,
    sgld_error_bound,
    sgld_run,
    sgld_second_moment_bound,
    stochastic_gradient_gaussian,
)

__all__ = [
    "LEMMA_IDS",
    "LemmaCheck",
    "LemmaSetup",
    "check_prop_b1",
    "check_identity_a",
    "check_sgld_lemma",
    "check_moment_lemma",
    "check_appendix_c",
    "check_theorem",
    "gap_rate",
    "run_checks",
    "verdict_report",
    "format_table",
]

LEMMA_IDS = ("B1", "B2", "B3", "B4", "B5", "B6", "B7", "C1", "C2", "C3cor", "C4", "A-identity")
THEOREM_IDS = ("T1", "T2")

IDENTITY_RTOL = 1e-12
N_SUP_TIMES = 200
# SGLD runs longer than this use the collapsed sampler
FAITHFUL_MAX_ITERS = 100_000


@dataclass(frozen=True)
class LemmaCheck:
    lemma_id: str
    lhs: object  # McEstimate or float
    rhs: object
    verdict: str
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        lhs = self.lhs.to_dict() if isinstance(self.lhs, McEstimate) else self.lhs
        return to_jsonable({"lemma_id": self.lemma_id, "lhs": lhs, "rhs": self.rhs,
                            "verdict": self.verdict, "detail": self.detail})


def _interval_verdict(lower, upper, rhs) -> str:
    if upper <= rhs:
        return "pass"
    if lower > rhs:
        return "fail"
    return "inconclusive"


def _sup_check(lemma_id, estimates, rhs_values, times, **detail) -> LemmaCheck:
    """Combine per-time estimates against per-time right sides.

    The reported left side is the estimate with the largest upper end relative
    to its right side.
    """
    verdicts = [_interval_verdict(e.lower, e.upper, r) for e, r in zip(estimates, rhs_values)]
    ratios = [float(e.upper / r) if r > 0 else math.inf for e, r in zip(estimates, rhs_values)]
    worst = int(np.argmax(ratios))
    if "fail" in verdicts:
        verdict = "fail"
    elif "inconclusive" in verdicts:
        verdict = "inconclusive"
    else:
        verdict = "pass"
    detail.update(t_worst=float(times[worst]), worst_ratio=ratios[worst], n_times=len(times))
    return LemmaCheck(lemma_id, estimates[worst], rhs_values[worst], verdict, detail)


# -- configuration ----------------------------------------------------------


@dataclass
class LemmaSetup:
    """Gaussian-example parameters shared by the lemma and theorem checks.

    ``thetas`` runs the optimizer once per schedule and caches the replicas;
    sampler path ``i`` uses replica ``i % n_replicas``.
    """

    problem: GaussianProblem
    T: float
    lam: float
    beta: float
    n_iters: int
    gamma: float
    n_paths: int
    n_replicas: int
    seed: int
    epsilon: float = 0.0
    mc_samples: int = 100_000
    zeta: float = 0.5
    e_theta4: float | None = None
    constants: AffineScoreConstants | None = None
    theta0: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.theta0 is None:
            self.theta0 = np.zeros(self.problem.d)
        if self.constants is None:
            self.constants = affine_constants(self.problem)

    @property
    def d(self) -> int:
        return self.problem.d

    def schedule(self, early_stop: bool = False) -> OuSchedule:
        return OuSchedule(self.T, self.epsilon if early_stop else 0.0)

    def sgld_config(self, early_stop: bool = False) -> SgldConfig:
        return SgldConfig(self.lam, self.beta, self.n_iters, self.theta0,
                          self.schedule(early_stop), self.problem)

    def thetas(self, early_stop: bool = False) -> np.ndarray:
        if early_stop not in self._cache:
            cfg = self.sgld_config(early_stop)
            mode = "faithful" if self.n_iters <= FAITHFUL_MAX_ITERS else "collapsed"
            res = sgld_run(cfg, self.seed, n_replicas=self.n_replicas, mode=mode)
            self._cache[early_stop] = res.theta
        return self._cache[early_stop]

    def theta_rows(self, early_stop: bool = False) -> np.ndarray:
        th = self.thetas(early_stop)
        return th[np.arange(self.n_paths) % th.shape[0]]

    def e0(self) -> float:
        diff = np.asarray(self.theta0) - self.problem.mu
        return float(diff @ diff)

    def theorem1_params(self, gamma: float | None = None) -> Theorem1Params:
        cfg = self.sgld_config()
        return Theorem1Params.from_problem(
            self.problem, self.T, self.beta, self.lam, self.n_iters,
            self.gamma if gamma is None else gamma, self.e0(), constants=cfg.constants,
        )

    def eps_al(self) -> float:
        """Optimizer error bound E|theta_hat - theta*|^2 at ``n_iters``."""
        return sgld_error_bound(self.sgld_config(True), self.n_iters)

    def theorem2_params(self, gamma: float | None = None, eps_sn: float | None = None) -> Theorem2Params:
        sch = self.schedule(True)
        al = self.eps_al()
        if eps_sn is None:
            eps_sn = (math.exp(-2 * sch.epsilon) - math.exp(-2 * sch.T)) * al
        if self.e_theta4 is None:
            raise ValueError("e_theta4 (the fourth moment of theta_hat) is required")
        return Theorem2Params.for_affine(
            self.problem, self.T, self.epsilon, self.gamma if gamma is None else gamma,
            eps_al=al, eps_sn=eps_sn, e_theta4=self.e_theta4, constants=self.constants, zeta=self.zeta,
        )

    def echo(self) -> dict:
        return {
            "d": self.d, "mu": self.problem.mu.tolist(), "T": self.T, "epsilon": self.epsilon,
            "lambda": self.lam, "beta": self.beta, "n_iters": self.n_iters, "gamma": self.gamma,
            "n_paths": self.n_paths, "n_replicas": self.n_replicas, "mc_samples": self.mc_samples,
            "seed": self.seed, "zeta": self.zeta, "e_theta4": self.e_theta4,
        }


def _sup_times(end: float, grid: TimeGrid) -> np.ndarray:
    ts = np.concatenate([np.linspace(0.0, end, N_SUP_TIMES), grid.times])
    return np.unique(np.clip(ts, 0.0, end))


def _norms_pow(y, p):
    r2 = np.sum(y * y, axis=1)
    return r2 if p == 2 else r2 ** (p / 2)


# -- exact identities -------------------------------------------------------


def check_prop_b1(seed: int, n_trials: int = 100_000, d: int = 3, T: float = 1.0) -> LemmaCheck:
    """Lipschitz and monotonicity identities of the Gaussian stochastic gradient.

    Random (tau, theta, theta_bar, x0, z) with tau ~ U[0, T]; trial 0 uses
    theta_bar = theta and trial 1 uses tau = 0.  A difference of two computed
    gradients carries rounding error proportional to their size, so the
    error is measured against |H| + |H_bar| (and |theta - theta_bar| for the
    inner product); plain relative errors are reported alongside.
    """
    lanes = np.arange(n_trials)
    key = lambda tag: _rng.stream_key(seed, "b1." + tag)
    tau = T * _rng.uniforms(key("tau"), lanes, 0)
    theta = 3.0 * _rng.normals(key("theta"), lanes, 0, d)
    theta_bar = 3.0 * _rng.normals(key("theta_bar"), lanes, 0, d)
    mu = 2.0 * _rng.normals(key("mu"), [0], 0, d)[0]
    x0 = mu + _rng.normals(key("x0"), lanes, 0, d)
    z = _rng.normals(key("z"), lanes, 0, d)
    theta_bar[0] = theta[0]
    if n_trials > 1:
        tau[1] = 0.0
    sample = TrainingSample(tau, x0, z)
    h = stochastic_gradient_gaussian(theta, sample)
    hb = stochastic_gradient_gaussian(theta_bar, sample)
    diff = h - hb
    dth = theta - theta_bar
    c = 2.0 * var_coeff(tau) * mean_coeff(tau) ** 2
    ndth = np.linalg.norm(dth, axis=1)
    scale = np.linalg.norm(h, axis=1) + np.linalg.norm(hb, axis=1)

    lhs_norm = np.linalg.norm(diff, axis=1)
    rhs_norm = c * ndth
    lhs_inner = np.sum(diff * dth, axis=1)
    rhs_inner = c * ndth**2

    def scaled(err, s):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(err == 0.0, 0.0, err / s)

    def plain(err, r):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(err == 0.0, 0.0, err / np.abs(r))

    e_norm = np.abs(lhs_norm - rhs_norm)
    e_inner = np.abs(lhs_inner - rhs_inner)
    worst = max(float(np.max(scaled(e_norm, scale))), float(np.max(scaled(e_inner, scale * ndth))))
    verdict = "pass" if worst <= IDENTITY_RTOL else "fail"
    detail = {
        "n_trials": n_trials, "d": d, "T": T, "seed": seed,
        "max_scaled_error_norm": float(np.max(scaled(e_norm, scale))),
        "max_scaled_error_inner": float(np.max(scaled(e_inner, scale * ndth))),
        "max_relative_error_norm": float(np.max(plain(e_norm, rhs_norm))),
        "max_relative_error_inner": float(np.max(plain(e_inner, rhs_inner))),
        "tolerance": IDENTITY_RTOL,
    }
    return LemmaCheck("B1", worst, 0.0, verdict, detail)


def check_identity_a(setup: LemmaSetup, thetas=None) -> LemmaCheck:
    """Denoising and explicit objectives differ by a parameter-free constant.

    Runs at epsilon = 0 for the Gaussian example; ``thetas`` defaults to
    {0, mu, 2 mu}.  The left side is the pair difference farthest from 0.
    """
    mu = setup.problem.mu
    if thetas is None:
        thetas = [np.zeros_like(mu), mu, 2.0 * mu]
    rep = explicit_vs_denoising_check(thetas, OuSchedule(setup.T), setup.problem,
                                      setup.mc_samples, setup.seed)
    ests = [p.estimate for p in rep.pairs if p.estimate is not None]
    lhs = max(ests, key=lambda e: abs(e.mean) / e.half_width if e.half_width else 0.0) if ests else None
    detail = {"pairs": [p.to_dict() for p in rep.pairs], "thetas": rep.thetas}
    return LemmaCheck("A-identity", lhs, 0.0, rep.status, detail)


# -- optimizer lemmas -------------------------------------------------------


def check_sgld_lemma(lemma_id: str, setup: LemmaSetup, checkpoints=(10, 50, 100, 500)) -> LemmaCheck:
    """Error (B2) or second-moment (B3) bound of faithful SGLD at each checkpoint."""
    if lemma_id not in ("B2", "B3"):
        raise ValueError("lemma_id must be B2 or B3")
    cfg = setup.sgld_config()
    cps = sorted(c for c in set(checkpoints) if c <= setup.n_iters) or [setup.n_iters]
    res = sgld_run(cfg, setup.seed, n_replicas=setup.n_replicas, checkpoints=cps, mode="faithful")
    ests, rhs = [], []
    for c in cps:
        th = res.checkpoints[c]
        if lemma_id == "B2":
            vals = np.sum((th - setup.problem.mu) ** 2, axis=1)
            rhs.append(sgld_error_bound(cfg, c))
        else:
            vals = np.sum(th * th, axis=1)
            rhs.append(sgld_second_moment_bound(cfg, c))
        ests.append(McEstimate.from_samples(vals, setup.seed))
    chk = _sup_check(lemma_id, ests, rhs, cps, checkpoints=cps)
    per = [{"n": c, "lhs": e.to_dict(), "rhs": r} for c, e, r in zip(cps, ests, rhs)]
    chk.detail["per_checkpoint"] = per
    chk.detail["t_worst"] = int(chk.detail["t_worst"])
    return chk


# -- sampler moment lemmas --------------------------------------------------


def check_moment_lemma(lemma_id: str, setup: LemmaSetup, gamma: float | None = None) -> LemmaCheck:
    """Second-moment and one-step bounds of the auxiliary and EM processes.

    B4: sup_t E|Y_aux_t|^2 <= C_aux; B5: sup_k E|Y_k|^2 <= C_EM;
    B6: sup_t E|Y_hat_t - Y_hat_{t_k}|^2 <= gamma C_EMose;
    B7: sup_t E|Y_hat_t|^2 <= C_EM_hat.  Times are 200 points of [0, T]
    together with the grid points.
    """
    if lemma_id not in ("B4", "B5", "B6", "B7"):
        raise ValueError("lemma_id must be one of B4..B7")
    g = setup.gamma if gamma is None else gamma
    if not 0.0 < g <= 0.5:
        raise ValueError("the moment lemmas need gamma in (0, 1/2]")
    sch = setup.schedule()
    prm = setup.theorem1_params(g)
    consts = lemma_constants(prm)
    thetas = setup.theta_rows()
    cfg = EmRunConfig.to_horizon(sch, g, thetas, setup.n_paths, setup.seed, strict_gamma=True)
    times = _sup_times(setup.T, cfg.grid)
    base = {"gamma": cfg.grid.gamma, "constants": consts}

    if lemma_id == "B4":
        ys = simulate_auxiliary(sch, thetas, setup.n_paths, setup.seed, times, method="exact")
        ests = [McEstimate.from_samples(_norms_pow(y, 2), setup.seed) for y in ys]
        return _sup_check("B4", ests, [consts["C_aux"]] * len(ests), times, **base)
    if lemma_id == "B5":
        steps = list(range(cfg.grid.n_steps + 1))
        res = em_backward_run(cfg, record=steps)
        if res.nonfinite:
            raise FloatingPointError("EM paths became non-finite")
        ests = [McEstimate.from_samples(_norms_pow(res.records[k], 2), setup.seed) for k in steps]
        return _sup_check("B5", ests, [consts["C_EM"]] * len(ests), cfg.grid.times, **base)
    ests = []
    for _, y, gap in iter_interpolation(cfg, times):
        v = gap if lemma_id == "B6" else y
        ests.append(McEstimate.from_samples(_norms_pow(v, 2), setup.seed))
    if lemma_id == "B6":
        rhs = cfg.grid.gamma * consts["C_EMose"]
    else:
        rhs = consts["C_EM_hat"]
    return _sup_check(lemma_id, ests, [rhs] * len(ests), times, **base)


def gap_rate(setup: LemmaSetup, gammas=(0.5, 0.1, 0.02)) -> dict:
    """Least-squares slope of log sup_t E|Y_hat_t - Y_hat_{t_k}|^2 against log gamma."""
    checks = [check_moment_lemma("B6", setup, g) for g in gammas]
    used = [c.detail["gamma"] for c in checks]
    lhs = [c.lhs.mean for c in checks]
    slope = float(np.polyfit(np.log(used), np.log(lhs), 1)[0])
    return {"gammas": used, "lhs": lhs, "slope": slope, "checks": checks}


# -- general-setting constants ----------------------------------------------


def check_appendix_c(lemma_id: str, setup: LemmaSetup, p: int = 2, n_points: int = 10_000,
                     family=None) -> LemmaCheck:
    """General-setting moment and regularity bounds for the affine family.

    C1 and C2 compare EM p-th moments (interpolated, on the early-stopped
    grid) with C_EM,p(t) and gamma^{p/2} C_EMose,p.  C3cor bounds the
    x-gradient of each score component by central differences on random
    points; C4 bounds the first-order Taylor remainder in x.
    """
    if lemma_id not in ("C1", "C2", "C3cor", "C4"):
        raise ValueError("lemma_id must be one of C1, C2, C3cor, C4")
    family = family or AffineScore(setup.d)
    k = setup.constants
    if lemma_id in ("C3cor", "C4"):
        return _check_score_regularity(lemma_id, setup, family, k, n_points)

    prm = setup.theorem2_params()
    sch = setup.schedule(True)
    cfg = EmRunConfig.to_early_stop(sch, setup.gamma, setup.theta_rows(True), setup.n_paths, setup.seed)
    times = _sup_times(cfg.grid.end, cfg.grid)
    ests = []
    for t, y, gap in iter_interpolation(cfg, times):
        if lemma_id == "C1" and t == 0.0:
            # the start is drawn from N(0, I): its moment is known exactly and the
            # bound holds with equality there, which sampling cannot resolve
            ests.append(McEstimate(prm.em0[p], setup.n_paths, 0.0, setup.seed))
            continue
        ests.append(McEstimate.from_samples(_norms_pow(y if lemma_id == "C1" else gap, p), setup.seed))
    if lemma_id == "C1":
        rhs = [c_em_p(float(t), p, prm) for t in times]
    else:
        r = cfg.grid.gamma ** (p / 2) * c_emose_p(p, prm)
        rhs = [r] * len(times)
    return _sup_check(lemma_id, ests, rhs, times, p=p, gamma=cfg.grid.gamma)


def _check_score_regularity(lemma_id, setup, family, k, n_points):
    d = setup.d
    lanes = np.arange(n_points)
    key = lambda tag: _rng.stream_key(setup.seed, "c." + tag)
    t = setup.T * _rng.uniforms(key("t"), lanes, 0)
    theta = 3.0 * _rng.normals(key("theta"), lanes, 0, d)
    x = 3.0 * _rng.normals(key("x"), lanes, 0, d)
    growth = 1.0 + 2.0 * t ** k.alpha
    if lemma_id == "C3cor":
        h = 1e-5
        grads = np.empty((n_points, d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            grads[:, :, j] = (family(t, theta, x + e) - family(t, theta, x - e)) / (2 * h)
        # worst component: operator norm of each row of the Jacobian
        lhs = np.max(np.linalg.norm(grads, axis=2), axis=1)
        rhs = k.K3 * growth
        ratio = lhs / rhs
        w = int(np.argmax(ratio))
        verdict = "pass" if np.all(lhs <= rhs * (1 + 1e-6)) else "fail"
        return LemmaCheck("C3cor", float(lhs[w]), float(rhs[w]), verdict,
                          {"n_points": n_points, "fd_step": h, "t_worst": float(t[w]),
                           "worst_ratio": float(ratio[w])})
    xb = x + _rng.normals(key("dx"), lanes, 0, d)
    dx = xb - x
    jac = family.jacobian_x(t, theta, x)
    rem = family(t, theta, xb) - family(t, theta, x) - np.einsum("nij,nj->ni", jac, dx)
    numeric = np.max(np.abs(rem), axis=1)
    rhs = k.K4 * growth * np.sum(dx * dx, axis=1)
    if getattr(family, "is_affine", False):
        # the x-Hessian vanishes identically; the computed remainder is pure rounding
        lhs = np.zeros(n_points)
    else:
        lhs = numeric
    w = int(np.argmin(rhs - lhs))
    verdict = "pass" if np.all(lhs <= rhs) else "fail"
    return LemmaCheck("C4", float(lhs[w]), float(rhs[w]), verdict,
                      {"n_points": n_points, "max_rounding_remainder": float(np.max(numeric)),
                       "K4": k.K4})


# -- theorems ----------------------------------------------------------------


def check_theorem(theorem_id: str, setup: LemmaSetup, n_batches: int = 20) -> LemmaCheck:
    """End-to-end W2 of the sampler output against N(mu, I) versus the theorem bound.

    T1 runs to the horizon T; T2 stops at T - epsilon.  Path ``i`` samples
    with optimizer replica ``i % n_replicas``.
    """
    if theorem_id not in THEOREM_IDS:
        raise ValueError("theorem_id must be T1 or T2")
    early = theorem_id == "T2"
    sch = setup.schedule(early)
    thetas = setup.theta_rows(early)
    make = EmRunConfig.to_early_stop if early else EmRunConfig.to_horizon
    cfg = make(sch, setup.gamma, thetas, setup.n_paths, setup.seed)
    res = em_backward_run(cfg)
    if res.nonfinite:
        raise FloatingPointError(f"{res.nonfinite} EM paths became non-finite")
    d = setup.d
    w2 = w2_fit_estimate(res.samples, setup.problem.mu, np.eye(d), n_batches, setup.seed)
    gamma_used = cfg.grid.gamma
    if early:
        report = theorem2_bound(setup.theorem2_params(gamma_used))
    else:
        report = theorem1_bound(setup.theorem1_params(gamma_used))
    verdict = _interval_verdict(w2.lower, w2.upper, report.total)
    th = setup.thetas(early)
    detail = {
        "gamma": gamma_used,
        "n_steps": cfg.grid.n_steps,
        "bound": report.to_dict(),
        "theta_hat_error": McEstimate.from_samples(
            np.sum((th - setup.problem.mu) ** 2, axis=1), setup.seed).to_dict(),
    }
    return LemmaCheck(theorem_id, w2, report.total, verdict, detail)


# -- harness ----------------------------------------------------------------


def run_checks(ids, setup: LemmaSetup, gammas=(0.5, 0.1, 0.02), powers=(2, 4)) -> list:
    """Run the named checks; moment lemmas run once per gamma, C1/C2 once per power."""
    out = []
    for lid in ids:
        if lid == "B1":
            for d in sorted({1, 3, 10, setup.d}):
                out.append(check_prop_b1(setup.seed, 100_000, d=d, T=setup.T or 1.0))
        elif lid in ("B2", "B3"):
            out.append(check_sgld_lemma(lid, setup))
        elif lid in ("B4", "B5", "B6", "B7"):
            for g in gammas:
                out.append(check_moment_lemma(lid, setup, g))
        elif lid in ("C1", "C2"):
            for p in powers:
                out.append(check_appendix_c(lid, setup, p))
        elif lid in ("C3cor", "C4"):
            out.append(check_appendix_c(lid, setup))
        elif lid == "A-identity":
            out.append(check_identity_a(setup))
        elif lid in THEOREM_IDS:
            out.append(check_theorem(lid, setup))
        else:
            raise ValueError(f"unknown check {lid!r}")
    return out


def overall_status(checks) -> str:
    verdicts = {c.verdict for c in checks}
    if "fail" in verdicts:
        return "fail"
    if "inconclusive" in verdicts:
        return "inconclusive"
    return "pass"


def verdict_report(checks, config: dict, seed: int) -> str:
    """JSON text of the verdict report (sorted keys, stable float formatting)."""
    body = {
        "config": config,
        "seed": seed,
        "status": overall_status(checks),
        "checks": [c.to_dict() for c in checks],
    }
    return json.dumps(to_jsonable(body), indent=2, sort_keys=True) + "\n"


def _fmt(x) -> str:
    if isinstance(x, McEstimate):
        return f"{x.mean:.6g} +- {x.half_width:.2g}"
    if x is None:
        return "-"
    if isinstance(x, mpmath.mpf):
        return mpmath.nstr(x, 6)
    try:
        return f"{float(x):.6g}"
    except (OverflowError, TypeError):
        return str(to_jsonable(x))


def format_table(checks) -> str:
    """Fixed-width text table: id, parameter, left side, right side, verdict."""
    rows = [("check", "where", "lhs", "rhs", "verdict")]
    for c in checks:
        where = ""
        for key in ("d", "gamma", "p"):
            if key in c.detail:
                where += f"{key}={c.detail[key]:.4g} "
        rows.append((c.lemma_id, where.strip(), _fmt(c.lhs), _fmt(c.rhs), c.verdict))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
