import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from scorelab.gaussian import (
    AffineScore,
    GaussianProblem,
    affine_constants,
    approx_score,
    exact_objective,
    sqrtm_psd,
    true_score,
    w2_gaussian,
)
from scorelab.ou import OuSchedule

import oracles

finite = st.floats(-5, 5, allow_nan=False)


def vec(d):
    return hnp.arrays(float, d, elements=finite)


def test_true_score_examples():
    x = np.array([0.3, -1.2])
    assert np.array_equal(true_score(0.7, x, GaussianProblem([0.0, 0.0])), -x)
    mu = np.array([1.0, -2.0])
    assert np.array_equal(true_score(0.0, mu, GaussianProblem(mu)), np.zeros(2))
    assert true_score(math.log(2), [0.5], GaussianProblem([2.0]))[0] == pytest.approx(0.5, rel=1e-15)


def test_approx_score_examples():
    mu = np.array([0.4, 1.1])
    prob = GaussianProblem(mu)
    rng = np.random.default_rng(0)
    for t in np.linspace(0, 4, 9):
        x = rng.normal(size=2)
        assert np.array_equal(approx_score(t, mu, x), true_score(t, x, prob))
        assert np.array_equal(approx_score(t, np.zeros(2), x), -x)
    out = approx_score(1.0, [1.0, 0.0], [0.0, 1.0])
    assert out == pytest.approx([math.exp(-1), -1.0], rel=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        approx_score(0.1, np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        true_score(0.1, np.zeros(3), GaussianProblem([0.0, 1.0]))


def test_problem_fields():
    p = GaussianProblem([3.0, 4.0])
    assert p.d == 2 and p.ex0sq == 27.0 and p.theta_star_norm_sq == 25.0
    assert np.array_equal(p.theta_star(), p.mu)
    with pytest.raises(ValueError):
        GaussianProblem([])


@given(st.floats(0, 10), vec(3), vec(3))
def test_true_score_strongly_monotone(t, x, xb):
    p = GaussianProblem([0.5, -1.0, 2.0])
    lhs = (true_score(t, x, p) - true_score(t, xb, p)) @ (x - xb)
    assert lhs == pytest.approx(-np.sum((x - xb) ** 2), rel=1e-12, abs=1e-12)


def test_affine_constants_values():
    c = affine_constants(GaussianProblem([1.0, 2.0]))
    assert (c.K1, c.K2, c.K3, c.K_total, c.alpha, c.L_mo) == (1, 1, 1, 3, 1, 1)
    assert c.K4 > 0
    assert c.K_total == c.K1 + c.K2 + c.K3 + 0.0


def test_affine_constants_brute_force():
    rng = np.random.default_rng(5)
    n, d = 100_000, 3
    t, tb = rng.uniform(0, 5, n), rng.uniform(0, 5, n)
    th, thb = rng.normal(0, 3, (n, d)), rng.normal(0, 3, (n, d))
    x, xb = rng.normal(0, 3, (n, d)), rng.normal(0, 3, (n, d))
    lhs = np.linalg.norm(approx_score(t, th, x) - approx_score(tb, thb, xb), axis=1)
    rhs = (np.linalg.norm(th, axis=1) * np.abs(t - tb) + np.linalg.norm(th - thb, axis=1)
           + np.linalg.norm(x - xb, axis=1))
    assert np.all(lhs <= rhs * (1 + 1e-12))
    grow = np.linalg.norm(approx_score(t, th, x), axis=1)
    assert np.all(grow <= 3 * (1 + t) * (1 + np.linalg.norm(th, axis=1) + np.linalg.norm(x, axis=1)))


def test_affine_jacobians():
    fam = AffineScore(3)
    x = np.zeros((4, 3))
    jt = fam.jacobian_theta(np.full(4, 0.5), np.zeros(3), x)
    assert jt.shape == (4, 3, 3) and np.allclose(jt, math.exp(-0.5) * np.eye(3))
    assert np.array_equal(fam.jacobian_x(0.5, np.zeros(3), x)[0], -np.eye(3))


def test_w2_gaussian_examples():
    assert w2_gaussian([0, 0], np.eye(2), [0, 0], np.eye(2)) == 0.0
    assert w2_gaussian([0, 0], np.eye(2), [3, 4], np.eye(2)) == pytest.approx(5.0, rel=1e-14)
    assert w2_gaussian([0], [[4.0]], [0], [[1.0]]) == pytest.approx(1.0, rel=1e-14)


def _spd(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T + 0.1 * np.eye(d)


def test_w2_gaussian_symmetry_and_triangle():
    rng = np.random.default_rng(11)
    for _ in range(200):
        d = int(rng.integers(1, 5))
        ms = [rng.normal(size=d) for _ in range(3)]
        cs = [_spd(rng, d) for _ in range(3)]
        ab = w2_gaussian(ms[0], cs[0], ms[1], cs[1])
        assert ab == pytest.approx(w2_gaussian(ms[1], cs[1], ms[0], cs[0]), rel=1e-8, abs=1e-10)
        bc = w2_gaussian(ms[1], cs[1], ms[2], cs[2])
        ac = w2_gaussian(ms[0], cs[0], ms[2], cs[2])
        assert ac <= ab + bc + 1e-10


def test_w2_gaussian_commuting_closed_form():
    # diagonal covariances: W2^2 = |dm|^2 + sum (sqrt(a_i) - sqrt(b_i))^2
    a, b = np.array([1.0, 4.0, 9.0]), np.array([0.25, 1.0, 16.0])
    m = np.array([1.0, 0.0, -1.0])
    ref = math.sqrt(2.0 + np.sum((np.sqrt(a) - np.sqrt(b)) ** 2))
    assert w2_gaussian(m, np.diag(a), np.zeros(3), np.diag(b)) == pytest.approx(ref, rel=1e-12)


def test_w2_rejects_bad_covariance():
    with pytest.raises(ValueError):
        w2_gaussian([0, 0], [[1, 0], [0, -1]], [0, 0], np.eye(2))
    with pytest.raises(ValueError):
        w2_gaussian([0, 0], [[1, 0.5], [0, 1]], [0, 0], np.eye(2))
    with pytest.raises(ValueError):
        w2_gaussian([0], np.eye(2), [0, 0], np.eye(2))


def test_sqrtm_psd_clips_tiny_negative():
    a = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-12]])
    r = sqrtm_psd(a)
    assert np.allclose(r @ r, a, atol=1e-6)


def test_exact_objective():
    sch = OuSchedule(1.0)
    p = GaussianProblem([0.0])
    assert exact_objective([0.0], sch, p) == 0.0
    assert exact_objective([1.0], sch, p) == pytest.approx(float(oracles.e_s2m2(1)), rel=1e-13)
    p2 = GaussianProblem([0.3, -0.2])
    v = exact_objective([1.0, 1.0], sch, p2)
    assert exact_objective(2 * np.array([1.0, 1.0]) - p2.mu, sch, p2) == pytest.approx(4 * v, rel=1e-14)


def test_exact_objective_gradient_by_finite_differences():
    sch = OuSchedule(2.0)
    p = GaussianProblem([0.5, -1.0])
    theta = np.array([1.2, 0.3])
    e1 = float(oracles.e_s2m2(2))
    h = 1e-5
    grad = np.array([
        (exact_objective(theta + h * e, sch, p) - exact_objective(theta - h * e, sch, p)) / (2 * h)
        for e in np.eye(2)
    ])
    assert np.allclose(grad, 2 * e1 * (theta - p.mu), rtol=1e-6)
