import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from scorelab.gaussian import AffineScore, GaussianProblem, exact_objective
from scorelab.ou import OuSchedule, mean_coeff, var_coeff
from scorelab.score_matching import (
    SgldConfig,
    TrainingSample,
    chi_mean,
    denoising_loss,
    draw_training_samples,
    explicit_vs_denoising_check,
    noncentral_chi_mean,
    sgld_constants,
    sgld_error_bound,
    sgld_run,
    sgld_second_moment_bound,
    stochastic_gradient_gaussian,
    stochastic_gradient_general,
)

import oracles

E1_T1 = float(oracles.e_s2m2(1))


def _cfg(mu=(1.0, 1.0), lam=0.05, beta=1e4, n=500, T=1.0, eps=0.0, theta0=None):
    p = GaussianProblem(mu)
    th0 = np.zeros(p.d) if theta0 is None else theta0
    return SgldConfig(lam, beta, n, th0, OuSchedule(T, eps), p)


def test_training_samples_shapes_and_range():
    s = draw_training_samples(OuSchedule(2.0, 0.5), GaussianProblem([1.0, 2.0, 3.0]), 1000, 1)
    assert s.tau.shape == (1000,) and s.x0.shape == s.z.shape == (1000, 3)
    assert s.tau.min() >= 0.5 and s.tau.max() <= 2.0


def test_gradient_zero_at_exact_cancellation():
    mu = np.array([0.5, -1.5])
    s = TrainingSample(np.array([0.3, 2.0]), np.tile(mu, (2, 1)), np.zeros((2, 2)))
    assert np.all(stochastic_gradient_gaussian(mu, s) == 0.0)


def test_general_gradient_matches_gaussian_exactly():
    p = GaussianProblem([0.3, -0.7, 1.1])
    s = draw_training_samples(OuSchedule(3.0), p, 5000, seed=2)
    theta = np.array([1.0, 2.0, -0.5])
    assert np.array_equal(stochastic_gradient_general(theta, s, AffineScore(3)),
                          stochastic_gradient_gaussian(theta, s))


def test_general_gradient_at_zero_time():
    fam = AffineScore(2)
    th = np.array([1.0, 2.0])
    bad = TrainingSample(np.array([0.0]), np.zeros((1, 2)), np.ones((1, 2)))
    with pytest.raises(ZeroDivisionError):
        stochastic_gradient_general(th, bad, fam)
    ok = TrainingSample(np.array([0.0]), np.ones((1, 2)), np.zeros((1, 2)))
    assert np.all(np.isfinite(stochastic_gradient_general(th, ok, fam)))
    # division-free Gaussian form is finite at tau = 0 for any z and vanishes there
    assert np.all(stochastic_gradient_gaussian(th, bad) == 0.0)


@given(
    st.floats(0, 8),
    hnp.arrays(float, 3, elements=st.floats(-5, 5)),
    hnp.arrays(float, 3, elements=st.floats(-5, 5)),
    hnp.arrays(float, 3, elements=st.floats(-5, 5)),
    hnp.arrays(float, 3, elements=st.floats(-5, 5)),
)
def test_lipschitz_and_monotonicity_identities(t, th, thb, x0, z):
    s = TrainingSample(np.array(t), x0, z)
    dh = stochastic_gradient_gaussian(th, s) - stochastic_gradient_gaussian(thb, s)
    w = 2 * var_coeff(t) * mean_coeff(t) ** 2
    dth = th - thb
    hh = np.abs(stochastic_gradient_gaussian(th, s)) + np.abs(stochastic_gradient_gaussian(thb, s))
    # errors come from rounding in H itself, so they scale with |H| + |H_bar|
    tol = 1e-12 * (np.linalg.norm(hh) + 1e-300)
    assert abs(np.linalg.norm(dh) - w * np.linalg.norm(dth)) <= tol
    assert abs(dh @ dth - w * (dth @ dth)) <= tol * np.linalg.norm(dth)


def test_mc_gradient_matches_expected_gradient():
    p = GaussianProblem([0.8, -0.4])
    sch = OuSchedule(1.0)
    s = draw_training_samples(sch, p, 10**6, seed=4)
    rng = np.random.default_rng(9)
    for theta in [p.mu] + [rng.normal(0, 2, 2) for _ in range(10)]:
        h = stochastic_gradient_gaussian(theta, s)
        se = h.std(axis=0, ddof=1) / math.sqrt(h.shape[0])
        assert np.all(np.abs(h.mean(axis=0) - 2 * E1_T1 * (theta - p.mu)) < 4 * se)


def test_chi_means():
    assert chi_mean(1) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-14)
    assert chi_mean(3) == pytest.approx(2 * math.sqrt(2 / math.pi), rel=1e-14)
    assert noncentral_chi_mean(4, 0.0) == pytest.approx(chi_mean(4), rel=1e-14)


def test_noncentral_chi_mean_against_mc():
    d, mu = 3, np.array([1.0, -0.5, 0.8])
    rng = np.random.default_rng(123)
    r = np.linalg.norm(mu + rng.standard_normal((10**7, d)), axis=1)
    se = r.std() / math.sqrt(r.size)
    assert abs(noncentral_chi_mean(d, mu @ mu) - r.mean()) < 4 * se


def test_sgld_constants_t1():
    c = sgld_constants(OuSchedule(1.0), GaussianProblem([0.0]))
    assert c.e1 == pytest.approx(E1_T1, rel=1e-13)
    assert c.c1 == pytest.approx(1 / E1_T1, rel=1e-13)
    # the quoted reference 5.350134 is the reciprocal of e1 truncated to 7 digits
    assert c.c1 == pytest.approx(5.350134, rel=1e-6)


@pytest.mark.parametrize("mu", [[0.0], [1.0, -2.0]])
def test_c_sgld2_against_direct_mc(mu):
    p = GaussianProblem(mu)
    sch = OuSchedule(1.0)
    c = sgld_constants(sch, p)
    rng = np.random.default_rng(77)
    n = 2 * 10**6
    tau = rng.uniform(0, 1, n)
    x0 = p.mu + rng.standard_normal((n, p.d))
    z = np.linalg.norm(rng.standard_normal((n, p.d)), axis=1)
    m, s2 = np.exp(-tau), -np.expm1(-2 * tau)
    s = np.sqrt(s2)
    inner = s * m * z + s2 * m * m * np.linalg.norm(x0, axis=1) + s2 * s * m * z + s2 * m * m * math.sqrt(p.theta_star_norm_sq)
    vals = 4 * inner**2 / c.e1
    se = vals.std(ddof=1) / math.sqrt(n)
    assert abs(vals.mean() - c.c2) < 4 * se


def test_step_size_range_enforced():
    c = sgld_constants(OuSchedule(1.0), GaussianProblem([0.0]))
    _cfg(mu=[0.0], lam=c.lambda_max)
    with pytest.raises(ValueError):
        _cfg(mu=[0.0], lam=c.lambda_max * 1.01)
    with pytest.raises(ValueError):
        _cfg(beta=0.0)


def test_exact_gradient_fixed_point():
    cfg = _cfg(mu=[0.0, 0.0], lam=0.1, beta=math.inf, n=50)
    res = sgld_run(cfg, 1, n_replicas=3, checkpoints=[0, 10], mode="exact-gradient")
    assert np.all(res.theta == 0.0) and np.all(res.checkpoints[10] == 0.0)


def test_exact_gradient_scalar_recursion():
    cfg = _cfg(mu=[1.0], lam=0.1, beta=math.inf, n=40)
    res = sgld_run(cfg, 1, checkpoints=range(41), mode="exact-gradient")
    for n in [1, 5, 40]:
        assert res.checkpoints[n][0, 0] == pytest.approx(1 - (1 - 2 * 0.1 * E1_T1) ** n, rel=1e-13)
    assert res.checkpoints[1][0, 0] == pytest.approx(0.0373822, rel=1e-5)


@pytest.mark.parametrize("mode", ["faithful", "collapsed"])
def test_sgld_mean_follows_contraction(mode):
    # E[theta_n - mu] = (1 - 2 lam e1)^n (theta0 - mu) exactly, for both samplers
    cfg = _cfg(mu=[1.0, -0.5], lam=0.2, beta=50.0, n=40)
    res = sgld_run(cfg, 3, n_replicas=20000, checkpoints=[5, 20], mode=mode)
    for n in (5, 20, 40):
        th = res.checkpoints[n]
        ref = cfg.problem.mu + (1 - 2 * 0.2 * cfg.constants.e1) ** n * (cfg.theta0 - cfg.problem.mu)
        se = th.std(axis=0, ddof=1) / math.sqrt(th.shape[0])
        assert np.all(np.abs(th.mean(axis=0) - ref) < 4 * se)


def test_faithful_and_collapsed_spread_agree():
    cfg = _cfg(mu=[0.5], lam=0.3, beta=20.0, n=60)
    a = sgld_run(cfg, 5, n_replicas=40000, mode="faithful").theta[:, 0]
    b = sgld_run(cfg, 6, n_replicas=40000, mode="collapsed").theta[:, 0]
    va, vb = a.var(ddof=1), b.var(ddof=1)
    # sample variances of near-Gaussian data: se ~ v sqrt(2/n)
    assert abs(va - vb) < 4 * math.sqrt(2 / 40000) * math.hypot(va, vb)


def test_replicas_reproducible_in_isolation():
    cfg = _cfg(n=100)
    full = sgld_run(cfg, 8, n_replicas=6, checkpoints=[10])
    part = sgld_run(cfg, 8, n_replicas=2, first_replica=3, checkpoints=[10])
    assert np.array_equal(full.theta[3:5], part.theta)
    assert np.array_equal(full.checkpoints[10][3:5], part.checkpoints[10])
    again = sgld_run(cfg, 8, n_replicas=6, checkpoints=[10])
    assert np.array_equal(full.theta, again.theta)


def test_sgld_checkpoint_validation():
    with pytest.raises(ValueError):
        sgld_run(_cfg(n=10), 1, checkpoints=[11])
    with pytest.raises(ValueError):
        sgld_run(_cfg(n=10), 1, mode="adam")


def test_sgld_error_bound_holds_mc():
    cfg = _cfg()
    cps = [10, 50, 100, 500]
    res = sgld_run(cfg, 21, n_replicas=200, checkpoints=cps)
    for n in cps:
        err = np.sum((res.checkpoints[n] - cfg.problem.mu) ** 2, axis=1)
        upper = err.mean() + 1.96 * err.std(ddof=1) / math.sqrt(err.size)
        assert upper <= sgld_error_bound(cfg, n)
        sq = np.sum(res.checkpoints[n] ** 2, axis=1)
        assert sq.mean() + 1.96 * sq.std(ddof=1) / math.sqrt(sq.size) <= sgld_second_moment_bound(cfg, n)


def test_sgld_error_bound_structure():
    cfg = _cfg()
    c = cfg.constants
    vals = [sgld_error_bound(cfg, n) for n in range(0, 2000, 50)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    limit = 2 * c.c1 / 1e4 + 0.05 * c.c2
    assert sgld_error_bound(cfg, 10**7) == pytest.approx(limit, rel=1e-12)
    # no progress, no noise: the bound reduces to e0 as lambda -> 0
    tiny = _cfg(lam=1e-12, beta=math.inf)
    assert sgld_error_bound(tiny, 0) == pytest.approx(tiny.e0, rel=1e-9)
    assert sgld_error_bound(cfg, 0, e0=0.0) == pytest.approx(limit, rel=1e-14)


def test_second_moment_bound_structure():
    cfg = _cfg()
    c = cfg.constants
    n = 37
    ref = (2 * math.exp(-2 * n * cfg.lam * c.e1) * cfg.e0 + 2 * 2 * c.c1 / cfg.beta
           + 2 * cfg.lam * c.c2 + 2 * cfg.problem.theta_star_norm_sq)
    assert sgld_second_moment_bound(cfg, n) == pytest.approx(ref, rel=1e-14)
    assert sgld_second_moment_bound(cfg, n) >= 2 * cfg.problem.theta_star_norm_sq
    z = _cfg(mu=[0.0, 0.0], lam=1e-14, beta=math.inf)
    assert sgld_second_moment_bound(z, 5) < 1e-12


def test_denoising_loss_is_finite_division_free():
    p = GaussianProblem([0.0])
    s = TrainingSample(np.array([1e-300, 0.5]), np.zeros((2, 1)), np.ones((2, 1)))
    v = denoising_loss(np.zeros(1), s)
    assert np.all(np.isfinite(v))


def test_constancy_check_d1():
    p = GaussianProblem([0.0])
    sch = OuSchedule(1.0)
    rep = explicit_vs_denoising_check([[0.0], [1.0]], sch, p, 10**5, seed=3)
    assert rep.passed
    pair = rep.pairs[0]
    assert pair.exact == pytest.approx(-E1_T1, rel=1e-13)
    assert exact_objective([1.0], sch, p) == pytest.approx(E1_T1, rel=1e-13)


def test_constancy_identical_thetas_exact_zero():
    rep = explicit_vs_denoising_check([[0.4], [0.4]], OuSchedule(1.0), GaussianProblem([0.0]), 100, 1)
    assert rep.pairs[0].estimate.mean == 0.0 and rep.pairs[0].estimate.half_width == 0.0
    assert rep.passed


def test_constancy_scales_linearly_in_kappa():
    p = GaussianProblem([0.5, -0.5])
    sch = OuSchedule(2.0)
    ths = [[0.0, 0.0], [1.0, 1.0], [2.0, -1.0]]
    a = explicit_vs_denoising_check(ths, sch, p, 20000, 5)
    b = explicit_vs_denoising_check(ths, sch, p, 20000, 5, kappa=lambda t: 3.0 * var_coeff(t))
    for pa, pb in zip(a.pairs, b.pairs):
        assert pb.exact == pytest.approx(3 * pa.exact, rel=1e-13)
        assert pb.estimate.mean == pytest.approx(3 * pa.estimate.mean, rel=1e-9, abs=1e-12)


class _BlowUp(AffineScore):
    def __call__(self, t, theta, x):
        out = super().__call__(t, theta, x)
        return np.where(np.asarray(t)[..., None] < 0.1, np.inf, out)


def test_constancy_nonfinite_is_inconclusive():
    rep = explicit_vs_denoising_check([[0.0], [1.0]], OuSchedule(1.0), GaussianProblem([0.0]), 500, 1,
                                      family=_BlowUp(1))
    assert rep.status == "inconclusive"


def test_constancy_needs_two():
    with pytest.raises(ValueError):
        explicit_vs_denoising_check([[0.0]], OuSchedule(1.0), GaussianProblem([0.0]), 10, 1)
