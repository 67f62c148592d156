"""Explicit W2 bounds, their constants and the delta-budget solvers.

Values are double precision unless an exponent exceeds ``EXP_LIMIT``; those
are promoted to ``mpmath.mpf`` so astronomically large constants never turn
into ``inf``.  Arithmetic mixing floats and mpf values stays in mpf.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import mpmath
import numpy as np

from .gaussian import AffineScoreConstants, GaussianProblem
from .ou import OuSchedule
from .score_matching import SgldConstants, sgld_constants

__all__ = [
    "OPT_CONST",
    "Theorem1Params",
    "Theorem2Params",
    "BoundReport",
    "Table1Budget",
    "Table2Budget",
    "theorem1_bound",
    "table1_budget",
    "t1_T_delta",
    "t1_beta_delta",
    "t1_lambda_delta",
    "t1_n_delta",
    "t1_gamma_delta",
    "c_em_p",
    "c_emose_p",
    "theorem2_constants",
    "theorem2_bound",
    "table2_budget",
    "t2_epsilon_delta",
    "t2_T_delta",
    "t2_eps_sn_delta",
    "t2_gamma_delta",
    "lemma_constants",
    "to_jsonable",
]

EXP_LIMIT = 700.0

# sqrt(4/3) + 2 sqrt(33)
OPT_CONST = math.sqrt(4.0 / 3.0) + 2.0 * math.sqrt(33.0)


def _exp(x):
    if isinstance(x, mpmath.mpf) or abs(x) > EXP_LIMIT:
        return mpmath.exp(x)
    return math.exp(x)


def _sqrt(x):
    if isinstance(x, mpmath.mpf):
        return mpmath.sqrt(x)
    return math.sqrt(x)


def _pow(x, p):
    if isinstance(x, mpmath.mpf):
        return x**p
    try:
        return x**p
    except OverflowError:
        return mpmath.mpf(x) ** p


def _settle(x):
    """Return a float when the value fits comfortably in double precision."""
    if isinstance(x, mpmath.mpf) and mpmath.mpf("1e-300") < abs(x) < mpmath.mpf("1e300"):
        return float(x)
    if isinstance(x, mpmath.mpf) and x == 0:
        return 0.0
    return x


def to_jsonable(x):
    """Floats stay floats; non-finite or out-of-range values become strings."""
    if isinstance(x, dict):
        return {k: to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [to_jsonable(v) for v in x.tolist()]
    if isinstance(x, mpmath.mpf):
        s = _settle(x)
        return s if isinstance(s, float) else mpmath.nstr(x, 17, min_fixed=1, max_fixed=0)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class BoundReport:
    """Per-term breakdown of a bound; ``total`` is the sum of ``terms`` in order."""

    terms: dict
    total: object
    params: dict
    constants: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return to_jsonable(
            {"terms": self.terms, "total": self.total, "constants": self.constants,
             "params": self.params}
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=False, **kw)


def _sum(values):
    total = 0.0
    for v in values:
        total = total + v
    return _settle(total)


# -- unstopped Gaussian setting ----------------------------------------------


@dataclass(frozen=True)
class Theorem1Params:
    """Inputs of the three-term bound for the Gaussian example.

    ``e1``, ``e2``, ``c1``, ``c2`` are the schedule expectations and SGLD
    constants; ``from_problem`` computes them on [0, T].  ``beta`` may be
    ``inf`` and ``n`` may be ``inf`` to take limits.
    """

    d: int
    T: float
    beta: float
    lam: float
    n: float
    gamma: float
    e0: float
    ex0sq: float
    theta_star_norm_sq: float
    e1: float
    e2: float
    c1: float
    c2: float
    strict_gamma: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        lam_max = min(self.e1 / (4.0 * self.e2), 1.0 / (2.0 * self.e1))
        if self.lam > lam_max * (1.0 + 1e-12):
            raise ValueError(f"lambda exceeds the admissible maximum {lam_max:.6g}")
        if self.n < 0:
            raise ValueError("n must be nonnegative")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.strict_gamma and self.gamma > 0.5:
            raise ValueError("gamma must be at most 1/2")
        if min(self.e0, self.ex0sq, self.theta_star_norm_sq) < 0:
            raise ValueError("second moments must be nonnegative")

    @classmethod
    def from_problem(cls, problem: GaussianProblem, T: float, beta: float, lam: float, n: float,
                     gamma: float, e0: float, constants: SgldConstants | None = None, **kw):
        c = constants or sgld_constants(OuSchedule(T), problem)
        return cls(d=problem.d, T=T, beta=beta, lam=lam, n=n, gamma=gamma, e0=e0,
                   ex0sq=problem.ex0sq, theta_star_norm_sq=problem.theta_star_norm_sq,
                   e1=c.e1, e2=c.e2, c1=c.c1, c2=c.c2, **kw)

    def echo(self) -> dict:
        return asdict(self)


def theorem1_bound(p: Theorem1Params) -> BoundReport:
    """Initialization, optimization and discretization terms and their sum."""
    init = 2.0 * math.exp(-p.T) * (math.sqrt(p.ex0sq) + math.sqrt(1.5 * p.d))
    decay = 0.0 if math.isinf(p.n) else math.exp(-p.n * p.lam * p.e1)
    floor = 0.0 if math.isinf(p.beta) else p.d * p.c1 / p.beta
    opt = OPT_CONST * (decay * math.sqrt(p.e0) + math.sqrt(floor) + math.sqrt(p.lam * p.c2))
    disc = p.gamma * (math.sqrt(18.0 * p.d) + math.sqrt(132.0 * p.theta_star_norm_sq))
    terms = {"init": init, "opt": opt, "disc": disc}
    return BoundReport(terms=terms, total=_sum(terms.values()), params=p.echo())


def t1_T_delta(delta, d, ex0sq):
    return math.log(8.0 * (math.sqrt(ex0sq) + math.sqrt(1.5 * d)) / delta)


def t1_beta_delta(delta, d, e1):
    return 144.0 * d * OPT_CONST**2 / (delta**2 * e1)


def t1_lambda_delta(delta, e1, e2, q):
    """``q`` is the squared-sum expectation inside C_SGLD,2 (before the 4 / E1 factor)."""
    return min(e1 / (4.0 * e2), 1.0 / (2.0 * e1), delta**2 * e1 / (576.0 * OPT_CONST**2 * q))


def t1_n_delta(delta, lam, e1, e0):
    """Iterations for the decay term; zero when the start is already close enough."""
    if e0 <= 0:
        return 0.0
    return max(0.0, math.log(12.0 * OPT_CONST * math.sqrt(e0) / delta) / (lam * e1))


def t1_gamma_delta(delta, d, theta_star_norm_sq):
    return min(delta / (4.0 * math.sqrt(18.0 * d + 132.0 * theta_star_norm_sq)), 0.5)


@dataclass(frozen=True)
class Table1Budget:
    delta: float
    T_delta: float
    beta_delta: float
    lambda_delta: float
    n_delta: float
    gamma_delta: float
    T_schedule: float
    e1: float
    e2: float
    q: float

    def to_dict(self):
        return to_jsonable(asdict(self))


def table1_budget(delta: float, problem: GaussianProblem, e0: float, T: float | None = None,
                  lam: float | None = None) -> Table1Budget:
    """Evaluate the five budget rows.

    Schedule expectations are taken on [0, T] (default ``T_delta``); ``n_delta``
    uses the chosen ``lam`` (default ``lambda_delta``).
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    d = problem.d
    T_d = t1_T_delta(delta, d, problem.ex0sq)
    T_sched = T_d if T is None else T
    c = sgld_constants(OuSchedule(T_sched), problem)
    lam_d = t1_lambda_delta(delta, c.e1, c.e2, c.q)
    lam_used = lam_d if lam is None else lam
    return Table1Budget(
        delta=delta,
        T_delta=T_d,
        beta_delta=t1_beta_delta(delta, d, c.e1),
        lambda_delta=lam_d,
        n_delta=t1_n_delta(delta, lam_used, c.e1, e0),
        gamma_delta=t1_gamma_delta(delta, d, problem.theta_star_norm_sq),
        T_schedule=T_sched,
        e1=c.e1,
        e2=c.e2,
        q=c.q,
    )


def lemma_constants(p: Theorem1Params) -> dict:
    """Right-hand sides of the auxiliary, EM, one-step and interpolation moment bounds."""
    floor = 0.0 if math.isinf(p.beta) else p.d * p.c1 / p.beta
    decay = 0.0 if math.isinf(p.n) else math.exp(-2.0 * p.n * p.lam * p.e1)
    S = decay * p.e0 + floor + p.lam * p.c2 + p.theta_star_norm_sq
    return {
        "C_aux": (8.0 / 3.0) * S + 2.0 * p.d,
        "C_EM": 3.0 * p.d + 20.0 * S,
        "C_EMose": 8.0 * p.d + 56.0 * S,
        "C_EM_hat": 18.0 * p.d + 128.0 * S,
    }


# -- general setting ----------------------------------------------------------


@dataclass(frozen=True)
class Theorem2Params:
    """Inputs of the four-term general bound.

    ``em0`` maps p in {2, 4} to E|Y_0|^p (standard Gaussian start by default);
    ``e_theta4`` is E|theta_hat|^4.  ``nu`` is recorded but does not enter any
    constant.
    """

    M: int
    T: float
    epsilon: float
    gamma: float
    K1: float
    K2: float
    K3: float
    K4: float
    K_total: float
    eps_al: float
    eps_sn: float
    theta_star_norm_sq: float
    ex0sq: float
    e_theta4: float
    alpha: float = 1.0
    zeta: float = 0.5
    nu: float = 0.5
    L_mo: float = 1.0
    em0: dict | None = None

    def __post_init__(self):
        if not self.L_mo > 0.5:
            raise ValueError("L_mo must exceed 1/2")
        if not 0.0 < self.zeta < 1.0:
            raise ValueError("zeta must lie in (0, 1)")
        if not 0.0 < self.nu < 1.0:
            raise ValueError("nu must lie in (0, 1)")
        if not 0.5 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [1/2, 1]")
        if not 0.0 <= self.epsilon < 1.0 or not self.epsilon < self.T:
            raise ValueError("epsilon must lie in [0, min(1, T))")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if min(self.K1, self.K2, self.K3, self.K_total) < 0 or not self.K4 > 0:
            raise ValueError("K1..K3, K_total must be nonnegative and K4 positive")
        if min(self.eps_al, self.eps_sn, self.theta_star_norm_sq, self.ex0sq, self.e_theta4) < 0:
            raise ValueError("moment inputs must be nonnegative")
        if self.em0 is None:
            M = self.M
            object.__setattr__(self, "em0", {2: float(M), 4: float(M * (M + 2))})

    @classmethod
    def for_affine(cls, problem: GaussianProblem, T, epsilon, gamma, eps_al, eps_sn, e_theta4,
                   constants: AffineScoreConstants, zeta=0.5, nu=0.5, **kw):
        c = constants
        return cls(M=problem.d, T=T, epsilon=epsilon, gamma=gamma, K1=c.K1, K2=c.K2, K3=c.K3,
                   K4=c.K4, K_total=c.K_total, eps_al=eps_al, eps_sn=eps_sn,
                   theta_star_norm_sq=problem.theta_star_norm_sq, ex0sq=problem.ex0sq,
                   e_theta4=e_theta4, alpha=c.alpha, zeta=zeta, nu=nu, L_mo=c.L_mo, **kw)

    def e_theta(self, p: int) -> float:
        """E|theta_hat|^p: the algorithm-error bound for p = 2, the supplied moment for p = 4."""
        if p == 2:
            return 2.0 * self.eps_al + 2.0 * self.theta_star_norm_sq
        if p == 4:
            return self.e_theta4
        raise ValueError("only p = 2 and p = 4 are available")

    def echo(self) -> dict:
        out = asdict(self)
        out["em0"] = {str(k): v for k, v in self.em0.items()}
        return out


def _check_p(p):
    if p not in (2, 4):
        # the constants are defined for p in [2, 4]; moments are supplied for 2 and 4
        if not 2 <= p <= 4:
            raise ValueError("p must lie in [2, 4]")
        raise ValueError("only p = 2 and p = 4 have moment inputs")


def _big_exp(arg):
    """exp(arg(num)) where ``arg`` builds the exponent from inputs wrapped by ``num``.

    Large exponents are rebuilt with 40 significant digits: a double-precision
    exponent of size x carries an absolute error near x * 1e-16, which would
    otherwise become the relative error of the result.
    """
    x = arg(float)
    if abs(x) <= EXP_LIMIT:
        return math.exp(x)
    with mpmath.workdps(40):
        return mpmath.exp(arg(mpmath.mpf))


def _c_em_rate(p, prm: Theorem2Params, num=float):
    K, T, a, M = num(prm.K_total), num(prm.T), num(prm.alpha), prm.M
    return 3 * (p - 1) + p * (M + p - 2) + 1 + 2 ** (2 * p - 1) * K**p * (1 + T ** (a * p))


def c_em_p(t: float, p: int, prm: Theorem2Params):
    """Moment bound for the interpolated EM process on [0, t]."""
    _check_p(p)
    if not 0.0 <= t <= prm.T:
        raise ValueError("t must lie in [0, T]")
    K, T, a = prm.K_total, prm.T, prm.alpha
    growth = _big_exp(lambda num: num(t) * _c_em_rate(p, prm, num))
    base = prm.em0[p] + 2 ** (3 * p - 2) * K**p * t * (1 + prm.e_theta(p)) * (1 + T ** (a * p))
    return _settle(growth * base)


def c_emose_p(p: int, prm: Theorem2Params):
    """One-step-error constant for the interpolated EM process."""
    _check_p(p)
    K, T, a, M = prm.K_total, prm.T, prm.alpha, prm.M
    cem = c_em_p(T, p, prm)
    inner = 2 ** (3 * p - 2) * cem + 2 ** (4 * p - 3) * (1 + prm.e_theta(p))
    val = 2 ** (p - 1) * (cem + K**p * (1 + T ** (a * p)) * inner) + (M * p * (p - 1)) ** (p / 2)
    return _settle(val)


def _c4_big(prm: Theorem2Params):
    """The bracketed sum shared by C_4 and gamma_delta."""
    M, T, a, z = prm.M, prm.T, prm.alpha, prm.zeta
    K1, K3, K4, Kt = prm.K1, prm.K3, prm.K4, prm.K_total
    al, ts = prm.eps_al, prm.theta_star_norm_sq
    t2a = T ** (2 * a)
    cem2 = c_em_p(T, 2, prm)
    cose2 = c_emose_p(2, prm)
    cose4 = c_emose_p(4, prm)
    a1 = K4**2 / z * (1 + 4 * t2a) * cose4
    a2 = 2 * (M + 2 * K3**2 * (1 + 4 * t2a) * M)
    a3 = 2 / z * K1**2 * (1 + 8 * (al + ts))
    a4 = (2 * M / z * (M + 4 * K3**2 * (1 + 4 * t2a))
          * ((1 + 16 * Kt**2 * (1 + t2a)) * cem2 + 32 * Kt**2 * (1 + t2a) * (1 + 2 * al + 2 * ts)))
    a5 = (2 * (_sqrt(1 + 8 * K3**2 * (1 + 4 * t2a)) * _sqrt(cose2) + 2 * K1 * _sqrt(1 + 8 * al + 8 * ts))
          * (M * math.sqrt(2.0) * _sqrt(M + 8 * K3**2 * (1 + 4 * t2a) * M)))
    return a1 + a2 + a3 + a4 + a5


def _c4_rate(prm: Theorem2Params, num=float):
    T, a, K3 = num(prm.T), num(prm.alpha), num(prm.K3)
    return 1 + num(prm.zeta) + K3 * (1 + 2 * T**a + 4 * K3 * (1 + 4 * T ** (2 * a)))


def _span(prm: Theorem2Params, num=float):
    return num(prm.T) - num(prm.epsilon)


def theorem2_constants(prm: Theorem2Params) -> dict:
    """C_1 .. C_4 together with the moment constants they use."""
    L = prm.T - prm.epsilon
    c1 = 2.0 * (math.sqrt(prm.ex0sq) + math.sqrt(prm.M))
    c2 = 2.0 * (math.sqrt(prm.ex0sq) + math.sqrt(1.5 * prm.M))
    c3 = _settle(math.sqrt(2.0 / prm.zeta) * _exp((1 + prm.zeta - 2 * prm.L_mo) * L))
    big = _c4_big(prm)
    growth = _big_exp(lambda num: 2 * _c4_rate(prm, num) * _span(prm, num))
    c4 = _settle(math.sqrt(2.0) * growth * math.sqrt(L) * _sqrt(big))
    return {
        "C1": c1,
        "C2": c2,
        "C3": c3,
        "C4": c4,
        "C_EM_2": c_em_p(prm.T, 2, prm),
        "C_EMose_2": c_emose_p(2, prm),
        "C_EMose_4": c_emose_p(4, prm),
        "bracket": _settle(big),
    }


def theorem2_bound(prm: Theorem2Params) -> BoundReport:
    """Early-stopping, initialization, score-error and discretization terms."""
    c = theorem2_constants(prm)
    L = prm.T - prm.epsilon
    terms = {
        "early_stop": c["C1"] * math.sqrt(prm.epsilon),
        "init": c["C2"] * math.exp(-(2 * prm.L_mo - 1) * L),
        "score": _settle(c["C3"] * math.sqrt(prm.eps_sn)),
        "disc": _settle(c["C4"] * _pow(prm.gamma, prm.alpha)) if prm.gamma > 0 else 0.0,
    }
    return BoundReport(terms=terms, total=_sum(terms.values()), params=prm.echo(), constants=c)


def t2_epsilon_delta(delta, ex0sq, M):
    return delta**2 / (64.0 * (math.sqrt(ex0sq) + math.sqrt(M)) ** 2)


def t2_T_delta(delta, ex0sq, M, L_mo, epsilon):
    return math.log(8.0 * (math.sqrt(ex0sq) + math.sqrt(1.5 * M)) / delta) / (2 * L_mo - 1) + epsilon


def t2_eps_sn_delta(delta, zeta, L_mo, T, epsilon):
    return _settle(zeta * delta**2 / 32.0 * _exp(-2 * (1 + zeta - 2 * L_mo) * (T - epsilon)))


def t2_gamma_delta(delta, prm: Theorem2Params):
    """Step-size row evaluated at ``prm.T`` and ``prm.epsilon``."""
    a = prm.alpha
    L = prm.T - prm.epsilon
    big = _c4_big(prm)
    val = (
        _pow(delta / (4.0 * math.sqrt(2.0)), 1.0 / a)
        * L ** (-1.0 / (2 * a))
        * _big_exp(lambda num: -(2 / num(a)) * _c4_rate(prm, num) * _span(prm, num))
        * _pow(big, -1.0 / (2 * a))
    )
    if val >= 1:
        return 1.0
    return _settle(val)


@dataclass(frozen=True)
class Table2Budget:
    delta: float
    epsilon_delta: float
    T_delta: float
    eps_sn_delta: object
    gamma_delta: object
    epsilon_used: float
    T_used: float

    def to_dict(self):
        return to_jsonable(asdict(self))


def table2_budget(delta: float, prm: Theorem2Params, epsilon: float | None = None,
                  T: float | None = None) -> Table2Budget:
    """Evaluate the four budget rows.

    ``T_delta`` uses the chosen ``epsilon`` (default ``prm.epsilon``); the
    score-error and step-size rows are evaluated at the chosen ``T`` (default
    ``T_delta``) since both depend on T - epsilon.  The budgeted fields of
    ``prm`` (T, gamma, eps_sn) are otherwise ignored.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    eps = prm.epsilon if epsilon is None else epsilon
    eps_d = t2_epsilon_delta(delta, prm.ex0sq, prm.M)
    T_d = t2_T_delta(delta, prm.ex0sq, prm.M, prm.L_mo, eps)
    T_used = T_d if T is None else T
    at = _replace(prm, T=T_used, epsilon=eps)
    return Table2Budget(
        delta=delta,
        epsilon_delta=eps_d,
        T_delta=T_d,
        eps_sn_delta=t2_eps_sn_delta(delta, prm.zeta, prm.L_mo, T_used, eps),
        gamma_delta=t2_gamma_delta(delta, at),
        epsilon_used=eps,
        T_used=T_used,
    )


def _replace(prm: Theorem2Params, **kw) -> Theorem2Params:
    vals = {k: getattr(prm, k) for k in prm.__dataclass_fields__}
    vals.update(kw)
    return Theorem2Params(**vals)
