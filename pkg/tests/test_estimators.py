import math

import numpy as np
import pytest

from gecal.calibration import CalibrationProblem, Mode, solve_ds, solve_gec
from gecal.design import DesignInfo, SampleData, draw_poisson_sample, generate_population, stream
from gecal.entropy import make_entropy
from gecal.errors import SingularHessian
from gecal.estimators import (Controls, calibrated_estimate, confidence_interval, estimate, gamma_hat, gamma_opt,
                              gamma_population, greg_estimate, hajek_estimate, ht_estimate, m_hat_projection,
                              m_hat_shrink, poisson_variance, sigma_blocks, variance_estimate,
                              variance_estimate_adjusted, weighted_ls)

from oracles import greg_weights, variance_double_sum, wls


def small_sample(seed=0, n=9, N=60):
    rng = np.random.default_rng(seed)
    pi = rng.uniform(0.1, 0.6, n)
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = 1.0 + 2.0 * x[:, 1] + rng.normal(size=n)
    return SampleData.from_arrays(x, y, pi, N=N), x


# -- simple estimators ---------------------------------------------------

def test_ht_and_hajek_examples():
    s = SampleData.from_arrays(np.ones(3), np.ones(3), [0.5, 0.25, 0.1], N=16)
    assert ht_estimate(s) == pytest.approx(16.0, rel=1e-15)
    assert hajek_estimate(s) == pytest.approx(1.0, rel=1e-15)
    assert ht_estimate(s, as_mean=True) == pytest.approx(1.0, rel=1e-15)


def test_equal_probabilities():
    y = np.array([3.0, 5.0, 10.0, 2.0])
    s = SampleData.from_arrays(np.ones(4), y, np.full(4, 4 / 20), N=20)
    assert ht_estimate(s) == pytest.approx(20 / 4 * y.sum(), rel=1e-15)
    assert hajek_estimate(s) == pytest.approx(y.mean(), rel=1e-15)


def test_calibrated_estimate():
    s, _ = small_sample()
    assert calibrated_estimate(s.d, s.y_s) == pytest.approx(ht_estimate(s), rel=1e-15)
    w = np.random.default_rng(1).uniform(1, 5, s.n)
    assert calibrated_estimate(w, s.y_s, N=s.N, as_mean=True) == pytest.approx(
        sum(w[i] * s.y_s[i] for i in range(s.n)) / s.N, rel=1e-14)
    with pytest.raises(ValueError):
        calibrated_estimate(w, s.y_s, as_mean=True)


def test_greg_perfect_fit():
    rng = np.random.default_rng(2)
    x = np.column_stack([np.ones(7), rng.normal(size=7)])
    b = np.array([1.5, -0.7])
    s = SampleData.from_arrays(x, x @ b, rng.uniform(0.2, 0.8, 7), N=30)
    T = np.array([30.0, 4.2])
    theta, beta = greg_estimate(s, T)
    np.testing.assert_allclose(beta, b, rtol=1e-12)
    assert theta == pytest.approx(T @ b, rel=1e-12)


def test_greg_intercept_only_is_ratio():
    s, _ = small_sample(3)
    s1 = SampleData.from_arrays(np.ones(s.n), s.y_s, s.pi_s, N=s.N)
    theta, _ = greg_estimate(s1, [s.N])
    assert theta == pytest.approx(s.N * hajek_estimate(s1), rel=1e-13)


def test_greg_equals_chi_square_ds():
    s, x = small_sample(4)
    T = np.array([s.N, 3.0])
    theta, _ = greg_estimate(s, T)
    res = solve_ds(CalibrationProblem(x, s.d, T, make_entropy("sq"), Mode.DsBenchmarkOnly))
    assert float(res.omega @ s.y_s) == pytest.approx(theta, rel=1e-8)
    np.testing.assert_allclose(res.omega, greg_weights(x, s.d, T), rtol=1e-8)


# -- regression coefficients --------------------------------------------

def test_gamma_hat_el_uses_squared_design_weights():
    s, x = small_sample(5)
    ent = make_entropy("el")
    z = np.column_stack([x, ent.g(s.d)])
    np.testing.assert_allclose(gamma_hat(z, s.y_s, s.d, ent), wls(z, s.y_s, s.d ** 2), rtol=1e-10)


def test_gamma_hat_sq_is_ols():
    s, x = small_sample(6)
    ols, *_ = np.linalg.lstsq(x, s.y_s, rcond=None)
    np.testing.assert_allclose(gamma_hat(x, s.y_s, s.d, make_entropy("sq")), ols, rtol=1e-10)


def test_gamma_hat_with_costs():
    s, x = small_sample(7)
    ent = make_entropy("ce")
    c = np.linspace(1.0, 3.0, s.n)
    want = wls(x, s.y_s, (s.d ** 2 - s.d) / c)
    np.testing.assert_allclose(gamma_hat(x, s.y_s, s.d, ent, costs=c), want, rtol=1e-10)


def test_gamma_opt_constant_pi_is_ols():
    rng = np.random.default_rng(8)
    z = np.column_stack([np.ones(50), rng.normal(size=(50, 2))])
    y = rng.normal(size=50)
    ols, *_ = np.linalg.lstsq(z, y, rcond=None)
    np.testing.assert_allclose(gamma_opt(z, y, np.full(50, 0.3)), ols, rtol=1e-10)


def test_gamma_opt_scalar_case():
    rng = np.random.default_rng(9)
    pi = rng.uniform(0.05, 0.7, 40)
    y = rng.normal(size=40)
    q = pi ** -2 - 1 / pi
    assert gamma_opt(np.ones(40), y, pi)[0] == pytest.approx(np.sum(pi * q * y) / np.sum(pi * q), rel=1e-12)


def test_cross_entropy_population_coefficient_is_optimal():
    pop = generate_population("model2", 3000, 10)
    ent = make_entropy("ce")
    d = 1 / pop.pi
    z = np.column_stack([np.ones(pop.N), pop.x, ent.g(d)])
    a = gamma_population(z, pop.y, pop.pi, ent)
    b = gamma_opt(z, pop.y, pop.pi)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)


def test_weighted_ls_singular():
    z = np.column_stack([np.ones(5), np.ones(5)])
    with pytest.raises(SingularHessian):
        weighted_ls(z, np.arange(5.0), np.ones(5))


# -- variance ------------------------------------------------------------

def test_variance_two_unit_example():
    D = DesignInfo(np.array([0.5, 0.25]))
    assert variance_estimate(D, np.array([1.0, 2.0])) == pytest.approx(50.0, rel=1e-14)


def test_variance_census_is_zero():
    assert variance_estimate(DesignInfo(np.ones(4)), np.array([1.0, -3.0, 2.0, 8.0])) == 0.0


def test_variance_matches_double_sum_and_diagonal():
    rng = np.random.default_rng(11)
    pi = rng.uniform(0.05, 0.9, 12)
    e = rng.normal(size=12)
    D = DesignInfo(pi)
    v = variance_estimate(D, e)
    assert v == pytest.approx(variance_double_sum(pi, D.joint_matrix(), e), rel=1e-12)
    assert v == pytest.approx(poisson_variance(pi, e), rel=1e-12)
    assert variance_estimate(D, e, N=100) == pytest.approx(v / 1e4, rel=1e-14)
    assert variance_estimate(D, e, joint=D.joint_matrix()) == pytest.approx(v, rel=1e-12)


def test_adjusted_variance_k1_exact_span():
    ent = make_entropy("el")
    s, x = small_sample(12)
    g = ent.g(s.d)
    xg = np.column_stack([x, 3.0 * g])
    m = m_hat_projection(xg, s.d, ent)
    np.testing.assert_allclose(m, g, rtol=1e-10)
    z = np.column_stack([xg, g])
    gam_fit = gamma_hat(np.column_stack([x, g]), s.y_s, s.d, ent)
    gam = np.array([gam_fit[0], gam_fit[1], 0.0, gam_fit[2]])
    v1 = variance_estimate_adjusted(s.design, xg, s.y_s, gam, m)
    v0 = variance_estimate(s.design, s.y_s - z @ gam)
    assert v1 == pytest.approx(v0, rel=1e-10)


def test_k2_shrink_with_zero_residual_spread_is_projection():
    ent = make_entropy("el")
    s, x = small_sample(13)
    xg = np.column_stack([x, ent.g(s.d)])
    assert sigma_blocks(xg, s.d, ent, s.N).gg_x <= 1e-12
    np.testing.assert_allclose(m_hat_shrink(xg, s.d, ent, 0.2, s.N), m_hat_projection(xg, s.d, ent),
                               rtol=1e-10, atol=1e-12)


def test_adjusted_variance_hand_pipeline():
    ent = make_entropy("el")
    d = np.array([2.0, 3.0, 5.0, 4.0, 8.0, 2.5])
    x = np.column_stack([np.ones(6), [0.1, -0.4, 1.2, 0.3, -1.0, 0.6]])
    y = np.array([1.0, 0.5, 2.0, 1.1, -0.3, 1.4])
    N, alpha = 30.0, -0.15
    g = -1 / d
    w = d ** 2
    # projection of g on x with 1/g' = d^2 weights
    b = np.linalg.solve((x * w[:, None]).T @ x, (x * w[:, None]).T @ g)
    proj = x @ b
    sxx = (x * (w / N)[:, None]).T @ x
    sxg = (x * (w / N)[:, None]).T @ g
    sgg = np.sum(w / N * g * g)
    s = sgg - sxg @ np.linalg.solve(sxx, sxg)
    m = (alpha + 1) / (s + alpha + 1) * proj
    np.testing.assert_allclose(m_hat_shrink(x, d, ent, alpha, N), m, rtol=1e-12)
    gam = np.array([0.7, 0.4, -1.1])
    e = y - np.column_stack([x, m]) @ gam
    pi = 1 / d
    want = sum((1 - pi[i]) * e[i] ** 2 / pi[i] ** 2 for i in range(6))
    assert variance_estimate_adjusted(DesignInfo(pi), x, y, gam, m) == pytest.approx(want, rel=1e-12)


def test_gec1_residual_routes_agree():
    ent = make_entropy("hd")
    s, x = small_sample(14, n=15)
    z = np.column_stack([x, ent.g(s.d)])
    gam = gamma_hat(z, s.y_s, s.d, ent)
    m = m_hat_projection(x, s.d, ent)
    e_proj = s.y_s - np.column_stack([x, m]) @ gam
    e_x = s.y_s - x @ gamma_hat(x, s.y_s, s.d, ent)
    np.testing.assert_allclose(e_proj, e_x, rtol=1e-10, atol=1e-12)


def test_confidence_interval_examples():
    lo, hi = confidence_interval(0.0, 1.0, 0.95)
    assert lo == pytest.approx(-1.959964, abs=1e-6) and hi == pytest.approx(1.959964, abs=1e-6)
    assert confidence_interval(3.0, 0.0) == (3.0, 3.0)
    lo, hi = confidence_interval(10.0, 4.0, 0.9)
    assert lo == pytest.approx(10 - 1.644854 * 2, abs=1e-5) and hi == pytest.approx(10 + 1.644854 * 2, abs=1e-5)
    with pytest.raises(ValueError):
        confidence_interval(0.0, 1.0, 1.0)


# -- one-call estimation -------------------------------------------------

def model1_setup(seed, N=2000, model="model1"):
    pop = generate_population(model, N, seed)
    s = draw_poisson_sample(pop, rng=stream(seed, 1, 0))
    x = np.column_stack([np.ones(s.n), s.x_s])
    T = np.concatenate([[N], pop.x.sum(axis=0)])
    return pop, s, x, T


@pytest.mark.parametrize("kind", ["el", "et", "ce", "hd"])
def test_benchmark_exactness(kind):
    pop, s, x, T = model1_setup(15)
    ent = make_entropy(kind)
    gtot = float(np.sum(ent.g(1 / pop.pi)))
    b = np.array([0.5, -1.0, 2.0])
    c = 0.75
    s2 = SampleData.from_arrays(s.x_s, x @ b + c * ent.g(s.d), s.pi_s, N=pop.N)
    rep = estimate("gec0", s2, x, Controls(pop.N, T, gtot), ent, as_mean=False)
    assert rep.theta_hat == pytest.approx(T @ b + c * gtot, rel=1e-8)
    rep = estimate("ds-debias", s2, x, Controls(pop.N, T, gtot), ent, as_mean=False)
    assert rep.theta_hat == pytest.approx(T @ b + c * gtot, rel=1e-8)


def test_estimate_roster_runs():
    pop, s, x, T = model1_setup(16)
    ent = make_entropy("el")
    ctl = Controls(pop.N, T, float(np.sum(ent.g(1 / pop.pi))), pop_x=pop.x)
    for m in ("ht", "hajek", "greg", "ds", "ds-debias", "gec0", "gec1", "gec2", "gec-kernel"):
        rep = estimate(m, s, x, ctl, ent)
        assert math.isfinite(rep.theta_hat) and rep.variance >= 0
        assert rep.ci[0] <= rep.theta_hat <= rep.ci[1]
    with pytest.raises(ValueError):
        estimate("gec0", s, x, ctl, None)
    with pytest.raises(ValueError):
        estimate("bogus", s, x, ctl, ent)


def test_hajek_report_total():
    s, x = small_sample(17)
    rep = estimate("hajek", s, x, Controls(s.N, np.array([s.N, 0.0])), as_mean=False)
    assert rep.theta_hat == pytest.approx(s.N * hajek_estimate(s), rel=1e-14)


@pytest.mark.slow
def test_linearization_sanity():
    N = 10000
    pop = generate_population("model1", N, 21)
    ent = make_entropy("el")
    gU = ent.g(1 / pop.pi)
    zU = np.column_stack([np.ones(N), pop.x, gU]).sum(axis=0)
    T = zU[:-1]
    cal, lin = [], []
    for r in range(200):
        s = draw_poisson_sample(pop, rng=stream(21, 1, r))
        x = np.column_stack([np.ones(s.n), s.x_s])
        z = np.column_stack([x, ent.g(s.d)])
        res = solve_gec(CalibrationProblem(x, s.d, T, ent, Mode.GecKnown, debias_total=float(gU.sum())))
        gam = gamma_hat(z, s.y_s, s.d, ent)
        cal.append(float(res.omega @ s.y_s) / N)
        lin.append(float(zU @ gam + s.d @ (s.y_s - z @ gam)) / N)
    cal, lin = np.array(cal), np.array(lin)
    assert np.median(np.abs(cal - lin)) < 0.2 * cal.std(ddof=1)
