"""Experiment drivers shared by the command line and the acceptance tests."""

from __future__ import annotations

import csv
import math

import numpy as np

from .bounds import (
    Table2Budget,
    Theorem1Params,
    Theorem2Params,
    table1_budget,
    table2_budget,
    t1_T_delta,
    theorem1_bound,
    theorem2_bound,
    to_jsonable,
)
from .config import Config
from .gaussian import AffineScoreConstants, GaussianProblem, affine_constants
from .mc import McEstimate
from .metrics import fit_gaussian, w2_fit_estimate
from .ou import OuSchedule, TimeGrid
from .sampler import EmRunConfig, em_backward_run
from .score_matching import SgldConfig, sgld_error_bound, sgld_run
from .verify import FAITHFUL_MAX_ITERS, LemmaSetup

__all__ = [
    "problem_from_config",
    "constants_from_config",
    "setup_from_config",
    "run_optimize",
    "write_trajectory_csv",
    "read_final_thetas",
    "run_sample",
    "bound_report",
    "budget_report",
    "e2e_run",
    "BETA_CAP",
]

# inverse-temperature ceiling for the end-to-end run
BETA_CAP = 1e6


def problem_from_config(cfg: Config) -> GaussianProblem:
    return GaussianProblem(cfg.mu)


def constants_from_config(cfg: Config, problem: GaussianProblem) -> AffineScoreConstants:
    base = affine_constants(problem)
    k1, k2, k3 = cfg.get("k1"), cfg.get("k2"), cfg.get("k3")
    s000 = base.K_total - base.K1 - base.K2 - base.K3
    return AffineScoreConstants(K1=k1, K2=k2, K3=k3, K4=cfg.get("k4"), K_total=k1 + k2 + k3 + s000,
                                alpha=cfg.get("alpha"), L_mo=base.L_mo)


def setup_from_config(cfg: Config) -> LemmaSetup:
    """Lemma-check setup; keys a check does not use may be unset."""
    problem = problem_from_config(cfg)
    return LemmaSetup(
        problem=problem, T=cfg.get("T"), lam=cfg.get("lambda"), beta=cfg.get("beta"),
        n_iters=cfg.get("n_iters"), gamma=cfg.get("gamma"), n_paths=cfg.get("n_paths"),
        n_replicas=cfg.get("n_replicas"), seed=cfg["seed"],
        epsilon=cfg.get("epsilon"), mc_samples=cfg.get("mc_samples"), zeta=cfg.get("zeta"),
        e_theta4=cfg.get("e_theta4"), constants=constants_from_config(cfg, problem),
    )


def _sgld_mode(n_iters: int) -> str:
    return "faithful" if n_iters <= FAITHFUL_MAX_ITERS else "collapsed"


def _trajectory_checkpoints(n: int, count: int = 50) -> list:
    if n == 0:
        return [0]
    pts = np.unique(np.round(np.geomspace(1, n, count)).astype(int))
    return [0] + pts.tolist()


def run_optimize(cfg: Config):
    """SGLD replicas from theta0 = 0 on tau ~ U[epsilon, T].

    Returns ``(result, report)`` where the report holds per-checkpoint error
    estimates next to the optimizer error bound.
    """
    problem = problem_from_config(cfg)
    sch = OuSchedule(cfg["T"], cfg.get("epsilon"))
    sc = SgldConfig(cfg["lambda"], cfg["beta"], cfg["n_iters"], np.zeros(problem.d), sch, problem)
    cps = _trajectory_checkpoints(sc.n_iters)
    mode = _sgld_mode(sc.n_iters)
    res = sgld_run(sc, cfg["seed"], n_replicas=cfg.get("n_replicas"), checkpoints=cps, mode=mode)
    rows = []
    for c in cps:
        err = np.sum((res.checkpoints[c] - problem.mu) ** 2, axis=1)
        rows.append({"n": c, "error": McEstimate.from_samples(err, cfg["seed"]).to_dict(),
                     "bound": sgld_error_bound(sc, c)})
    report = {
        "command": "optimize",
        "config": cfg.resolved(),
        "seed": cfg["seed"],
        "mode": mode,
        "constants": {"e1": sc.constants.e1, "e2": sc.constants.e2, "c1": sc.constants.c1,
                      "c2": sc.constants.c2, "lambda_max": sc.constants.lambda_max},
        "checkpoints": rows,
        "theta_final_mean": res.theta.mean(axis=0).tolist(),
    }
    return res, report


def write_trajectory_csv(path, result) -> None:
    """Rows ``replica,n,theta_0..theta_{d-1}`` ordered by replica then n."""
    cps = sorted(result.checkpoints)
    d = result.theta.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "n"] + [f"theta_{j}" for j in range(d)])
        for r in range(result.theta.shape[0]):
            for c in cps:
                w.writerow([r, c] + [repr(float(v)) for v in result.checkpoints[c][r]])


def read_final_thetas(path) -> np.ndarray:
    """Last recorded iterate of each replica from a trajectory CSV."""
    last = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:2] != ["replica", "n"]:
            raise ValueError(f"{path} is not a trajectory file")
        for row in rd:
            r, n = int(row[0]), int(row[1])
            if r not in last or n >= last[r][0]:
                last[r] = (n, [float(v) for v in row[2:]])
    return np.array([last[r][1] for r in sorted(last)])


def _w2_summary(samples, problem: GaussianProblem, seed) -> dict:
    mean, cov = fit_gaussian(samples)
    est = w2_fit_estimate(samples, problem.mu, np.eye(problem.d), seed=seed)
    return {"w2": est.to_dict(), "fitted_mean": mean.tolist(), "fitted_cov": cov.tolist()}


def run_sample(cfg: Config, thetas=None):
    """EM paths to the horizon T; ``thetas`` (rows reused cyclically) default to mu."""
    problem = problem_from_config(cfg)
    n = cfg["n_paths"]
    th = problem.mu if thetas is None else np.asarray(thetas, dtype=float)
    if th.ndim == 2:
        th = th[np.arange(n) % th.shape[0]]
    run = EmRunConfig.to_horizon(OuSchedule(cfg["T"]), cfg["gamma"], th, n, cfg["seed"])
    res = em_backward_run(run)
    if res.nonfinite:
        raise FloatingPointError(f"{res.nonfinite} EM paths became non-finite")
    report = {
        "command": "sample",
        "config": cfg.resolved(),
        "seed": cfg["seed"],
        "theta_source": "mu" if thetas is None else "optimizer",
        "gamma": run.grid.gamma,
        "n_steps": run.grid.n_steps,
        "nonfinite_paths": res.nonfinite,
    }
    report.update(_w2_summary(res.samples, problem, cfg["seed"]))
    return res.samples, report


def bound_report(cfg: Config, which: str) -> dict:
    """Theorem bound at the configured parameters (theta0 = 0)."""
    setup = setup_from_config(cfg)
    if which == "t1":
        rep = theorem1_bound(setup.theorem1_params())
    elif which == "t2":
        rep = theorem2_bound(setup.theorem2_params())
    else:
        raise ValueError("which must be t1 or t2")
    out = {"command": f"bound {which}", "config": cfg.resolved(), "seed": cfg["seed"]}
    out.update(rep.to_dict())
    return out


def budget_report(cfg: Config, which: str, delta: float) -> dict:
    problem = problem_from_config(cfg)
    e0 = problem.theta_star_norm_sq  # theta0 = 0
    out = {"command": f"budget {which}", "config": cfg.resolved(), "seed": cfg["seed"], "delta": delta}
    if which == "t1":
        out.update(table1_budget(delta, problem, e0).to_dict())
        return out
    if which != "t2":
        raise ValueError("which must be t1 or t2")
    setup = setup_from_config(cfg)
    prm: Theorem2Params = setup.theorem2_params()
    b: Table2Budget = table2_budget(delta, prm)
    out.update(b.to_dict())
    return out


def e2e_run(cfg: Config, delta: float, beta_cap: float = BETA_CAP) -> dict:
    """Budget, optimize, sample, measure W2 and compare with delta and the bound.

    The horizon is T_delta + 0.01 and the remaining rows are evaluated there;
    lambda = lambda_delta, n = ceil(n_delta), the step size is the largest
    T / K below gamma_delta, and beta is min(beta_delta, beta_cap).  The
    optimizer starts at theta0 = 0 and uses the collapsed sampler when long.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    problem = problem_from_config(cfg)
    seed = cfg["seed"]
    e0 = problem.theta_star_norm_sq
    T = t1_T_delta(delta, problem.d, problem.ex0sq) + 0.01
    budget = table1_budget(delta, problem, e0, T=T)
    lam = budget.lambda_delta
    n_iters = int(math.ceil(budget.n_delta))
    beta = min(budget.beta_delta, beta_cap)
    steps = int(math.floor(T / budget.gamma_delta)) + 1
    grid = TimeGrid(T / steps, steps)
    sch = OuSchedule(T)
    sc = SgldConfig(lam, beta, n_iters, np.zeros(problem.d), sch, problem)
    mode = _sgld_mode(n_iters)
    R = cfg.get("n_replicas")
    sg = sgld_run(sc, seed, n_replicas=R, mode=mode)
    n_paths = cfg["n_paths"]
    rows = sg.theta[np.arange(n_paths) % R]
    res = em_backward_run(EmRunConfig(sch, grid, rows, n_paths, seed))
    w2 = w2_fit_estimate(res.samples, problem.mu, np.eye(problem.d), seed=seed)
    prm = Theorem1Params.from_problem(problem, T, beta, lam, n_iters, grid.gamma, e0,
                                      constants=sc.constants)
    bound = theorem1_bound(prm)
    err = np.sum((sg.theta - problem.mu) ** 2, axis=1)
    below_delta = w2.upper < delta
    below_bound = w2.upper <= bound.total
    report = {
        "command": "e2e",
        "config": cfg.resolved(),
        "seed": seed,
        "delta": delta,
        "budget": budget.to_dict(),
        "used": {"T": T, "lambda": lam, "beta": beta, "beta_capped": beta < budget.beta_delta,
                 "n_iters": n_iters, "gamma": grid.gamma, "n_steps": grid.n_steps,
                 "sgld_mode": mode, "n_replicas": R, "n_paths": n_paths},
        "theta_hat_error": (McEstimate.from_samples(err, seed) if R > 1
                            else McEstimate(float(err[0]), 1, math.inf, seed)).to_dict(),
        "nonfinite_paths": res.nonfinite,
        "total_w2": w2.mean,
        "total_w2_ci": [w2.lower, w2.upper],
        "bound": bound.to_dict(),
        "bound_below_delta": bound.total < delta,
        "w2_below_delta": below_delta,
        "w2_below_bound": below_bound,
        "status": "pass" if (below_delta and below_bound and res.nonfinite == 0) else "fail",
    }
    return to_jsonable(report)
