import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gecal.calibration import (CalibrationProblem, Mode, ds_shift, newton_dual, _feasible_start, solve_ds, solve_gec,
                               solve_gec_scaled, solve_pinned)
from gecal.entropy import make_entropy
from gecal.errors import CalibrationError, InfeasibleStart, Nonconvergence, SingularHessian

from instances import CASE_IDS, ENTROPY_CASES, random_instance
from oracles import (greg_weights, oracle_ds, oracle_gec, oracle_pinned, oracle_scaled, oracle_weighted,
                     pel_weights)


def gec_problem(inst, **kw):
    return CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.GecKnown,
                              debias_total=inst.debias_total(), **kw)


def check_constraints(res, z, totals):
    assert np.all(np.abs(z.T @ res.omega - totals) <= 1e-8 * (1 + np.abs(totals)))


# -- oracle agreement ------------------------------------------------------

@pytest.mark.parametrize("kind,params", ENTROPY_CASES, ids=CASE_IDS)
def test_gec_matches_primal_oracle(kind, params):
    rng = np.random.default_rng(100)
    for _ in range(10):
        inst = random_instance(rng, kind, params)
        res = solve_gec(gec_problem(inst))
        ref = oracle_gec(inst.oracle, inst.z, inst.w_star)
        np.testing.assert_allclose(res.omega, ref, rtol=0, atol=1e-6)
        check_constraints(res, inst.z, inst.z.T @ inst.w_star)


@pytest.mark.parametrize("kind,params", ENTROPY_CASES, ids=CASE_IDS)
@pytest.mark.parametrize("debias", [False, True], ids=["benchmark", "debias"])
def test_ds_matches_primal_oracle(kind, params, debias):
    rng = np.random.default_rng(200)
    for _ in range(10):
        inst = random_instance(rng, kind, params, ds=True)
        if debias:
            prob = CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.DsWithDebias,
                                      debias_total=inst.debias_total())
            z = inst.z
        else:
            prob = CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.DsBenchmarkOnly)
            z = inst.x
        res = solve_ds(prob)
        ref = oracle_ds(inst.oracle, z, inst.d, inst.w_star, shift=ds_shift(inst.entropy))
        np.testing.assert_allclose(res.omega, ref, rtol=0, atol=1e-6)


def test_el_hand_instance_n4_p1():
    d = np.array([2.0, 3.0, 5.0, 4.0])
    x = np.column_stack([np.ones(4), [1.0, -0.5, 0.3, 2.0]])
    w = np.array([2.2, 2.7, 5.5, 3.6])
    el = make_entropy("el")
    from oracles import sym_entropy

    ora = sym_entropy("el")
    z = np.column_stack([x, -1.0 / d])
    res = solve_gec(CalibrationProblem(x, d, x.T @ w, el, Mode.GecKnown, debias_total=float(w @ (-1.0 / d))))
    np.testing.assert_allclose(res.omega, oracle_gec(ora, z, w), atol=1e-6)


@pytest.mark.parametrize("kind", ["el", "et", "hd", "sq"])
def test_scaled_matches_primal_oracle(kind):
    rng = np.random.default_rng(300)
    for _ in range(10):
        inst = random_instance(rng, kind, {})
        n = inst.d.shape[0]
        N = 10 * n
        s = n / N
        z = np.column_stack([inst.x, inst.oracle.g(s * inst.d)])
        prob = CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.GecScaled,
                                  debias_total=inst.debias_total(scale=s), n_over_N=s)
        res = solve_gec_scaled(prob, n, N)
        ref = oracle_scaled(inst.oracle, z, s, inst.w_star)
        np.testing.assert_allclose(res.omega, ref, rtol=0, atol=1e-6)
        assert np.all(inst.entropy.in_domain(s * res.omega))


@pytest.mark.parametrize("kind,params", ENTROPY_CASES, ids=CASE_IDS)
def test_model_assisted_matches_primal_oracle(kind, params):
    rng = np.random.default_rng(400)
    for _ in range(8):
        inst = random_instance(rng, kind, params)
        c = rng.uniform(0.5, 2.0, inst.d.shape[0])
        z = np.column_stack([inst.x, c * inst.oracle.g(inst.d)])
        prob = CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.ModelAssisted,
                                  debias_total=inst.debias_total(costs=c), costs=c)
        res = solve_gec(prob)
        ref = oracle_weighted(inst.oracle, z, c, inst.w_star)
        np.testing.assert_allclose(res.omega, ref, rtol=0, atol=1e-6)
        check_constraints(res, z, z.T @ inst.w_star)


@pytest.mark.parametrize("kind,params", ENTROPY_CASES, ids=CASE_IDS)
def test_pinned_matches_primal_oracle(kind, params):
    rng = np.random.default_rng(500)
    for _ in range(8):
        inst = random_instance(rng, kind, params)
        res = solve_pinned(inst.x, inst.d, inst.x_totals, inst.entropy)
        ref = oracle_pinned(inst.oracle, inst.x, inst.d, inst.w_star)
        np.testing.assert_allclose(res.omega, ref, rtol=0, atol=1e-6)


# -- closed forms ----------------------------------------------------------

def test_squared_loss_gec_is_a_linear_solve():
    rng = np.random.default_rng(1)
    for _ in range(20):
        inst = random_instance(rng, "sq", {})
        z = np.column_stack([inst.x, inst.d])
        T = z.T @ inst.w_star
        direct = z @ np.linalg.solve(z.T @ z, T)
        res = solve_gec(gec_problem(inst))
        np.testing.assert_allclose(res.omega, direct, rtol=0, atol=1e-10 * np.max(np.abs(direct)))


def test_chi_square_ds_is_greg():
    rng = np.random.default_rng(2)
    for _ in range(20):
        inst = random_instance(rng, "sq", {}, p=int(rng.integers(0, 3)), ds=True)
        res = solve_ds(CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.DsBenchmarkOnly))
        np.testing.assert_allclose(res.omega, greg_weights(inst.x, inst.d, inst.x_totals), rtol=1e-8, atol=1e-8)


def test_el_ds_is_pseudo_empirical_likelihood():
    rng = np.random.default_rng(3)
    for _ in range(20):
        inst = random_instance(rng, "el", {}, ds=True, spread=0.2)
        res = solve_ds(CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.DsBenchmarkOnly))
        np.testing.assert_allclose(res.omega, pel_weights(inst.x, inst.d, inst.x_totals), rtol=1e-8, atol=1e-8)


def test_et_ds_with_debias_equals_gec():
    rng = np.random.default_rng(4)
    for _ in range(20):
        inst = random_instance(rng, "et", {})
        a = solve_gec(gec_problem(inst))
        b = solve_ds(CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.DsWithDebias,
                                        debias_total=inst.debias_total()))
        np.testing.assert_allclose(a.omega, b.omega, rtol=0, atol=1e-8)


# -- fixed points ---------------------------------------------------------

@pytest.mark.parametrize("kind,params", ENTROPY_CASES, ids=CASE_IDS)
def test_design_weights_are_a_fixed_point(kind, params):
    rng = np.random.default_rng(6)
    inst = random_instance(rng, kind, params, n=10, p=2)
    inst.w_star = inst.d.copy()
    res = solve_gec(gec_problem(inst))
    np.testing.assert_allclose(res.omega, inst.d, rtol=1e-9)
    np.testing.assert_allclose(res.lam, [0, 0, 0, 1], atol=1e-9)


def test_debias_only_fixed_point():
    rng = np.random.default_rng(7)
    d = 1.5 + rng.exponential(2.0, 8)
    ent = make_entropy("el")
    res = solve_gec(CalibrationProblem(np.empty((8, 0)), d, np.empty(0), ent, Mode.GecKnown,
                                       debias_total=float(d @ ent.g(d))))
    np.testing.assert_allclose(res.omega, d, rtol=1e-12)
    assert res.lambda2 == pytest.approx(1.0, abs=1e-12)


def test_scaled_fixed_point():
    rng = np.random.default_rng(8)
    n, N = 9, 90
    d = 1.5 + rng.exponential(2.0, n)
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    ent = make_entropy("el")
    s = n / N
    prob = CalibrationProblem(x, d, x.T @ d, ent, Mode.GecScaled, debias_total=float(d @ ent.g(s * d)),
                              n_over_N=s)
    res = solve_gec_scaled(prob, n, N)
    np.testing.assert_allclose(res.omega, d, rtol=1e-10)
    np.testing.assert_allclose(res.lam, [0, 0, 1], atol=1e-10)


@pytest.mark.parametrize("kind", ["el", "inv", "hd", "sq"])
def test_census_scaled_reduces_to_gec(kind):
    # n = N and pi = 1: no intercept, since g(1) would duplicate it
    rng = np.random.default_rng(9)
    n = 8
    ent = make_entropy(kind)
    x = rng.normal(size=(n, 2))
    d = np.ones(n)
    w = np.exp(0.3 * rng.normal(size=n))
    tg = float(w @ ent.g(d))
    a = solve_gec(CalibrationProblem(x, d, x.T @ w, ent, Mode.GecKnown, debias_total=tg))
    prob = CalibrationProblem(x, d, x.T @ w, ent, Mode.GecScaled, debias_total=tg, n_over_N=1.0)
    b = solve_gec_scaled(prob, n, n)
    np.testing.assert_array_equal(a.omega, b.omega)


@pytest.mark.parametrize("kind", ["el", "et", "hd"])
def test_scaled_with_unit_ratio_matches_gec_output(kind):
    rng = np.random.default_rng(10)
    inst = random_instance(rng, kind, {}, n=10, p=1)
    n = 10
    a = solve_gec(gec_problem(inst))
    prob = CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.GecScaled,
                              debias_total=inst.debias_total(), n_over_N=1.0)
    b = solve_gec_scaled(prob, n, n)
    np.testing.assert_allclose(a.omega, b.omega, rtol=1e-12)


# -- invariants ------------------------------------------------------------

def _instances():
    return st.builds(lambda case, seed: random_instance(np.random.default_rng(seed), *case),
                     st.sampled_from(ENTROPY_CASES), st.integers(0, 2 ** 32 - 1))


@settings(max_examples=150, deadline=None)
@given(_instances())
def test_property_constraints_and_domain(inst):
    res = solve_gec(gec_problem(inst))
    check_constraints(res, inst.z, inst.z.T @ inst.w_star)
    assert res.constraint_residual <= 1e-8
    assert np.all(inst.entropy.in_domain(res.omega))
    assert np.all(inst.entropy.in_image(res.u))


@settings(max_examples=150, deadline=None)
@given(_instances())
def test_property_strong_duality(inst):
    res = solve_gec(gec_problem(inst))
    assert res.primal_objective == pytest.approx(-res.dual_objective, rel=1e-8, abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(_instances(), st.floats(0.01, 100.0))
def test_property_scaling_g_leaves_weights(inst, c):
    a = solve_gec(gec_problem(inst))
    scaled = inst.entropy.scaled(c)
    prob = CalibrationProblem(inst.x, inst.d, inst.x_totals, scaled, Mode.GecKnown,
                              debias_total=c * inst.debias_total())
    b = solve_gec(prob)
    np.testing.assert_allclose(b.omega, a.omega, rtol=1e-10, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_property_et_closure(seed):
    inst = random_instance(np.random.default_rng(seed), "et", {})
    a = solve_gec(gec_problem(inst))
    b = solve_ds(CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.DsWithDebias,
                                    debias_total=inst.debias_total()))
    np.testing.assert_allclose(a.omega, b.omega, rtol=0, atol=1e-8)


# -- errors ----------------------------------------------------------------

def test_duplicate_columns_rejected():
    rng = np.random.default_rng(11)
    inst = random_instance(rng, "el", {}, n=8, p=1)
    x = np.column_stack([inst.x, inst.x[:, 1]])
    prob = CalibrationProblem(x, inst.d, x.T @ inst.w_star, inst.entropy, Mode.GecKnown,
                              debias_total=inst.debias_total())
    with pytest.raises(SingularHessian):
        solve_gec(prob)


def test_collinear_columns_report_condition():
    rng = np.random.default_rng(12)
    inst = random_instance(rng, "et", {}, n=8, p=1)
    x = np.column_stack([inst.x, 2.0 * inst.x[:, 1] + 1.0])
    prob = CalibrationProblem(x, inst.d, x.T @ inst.w_star, inst.entropy, Mode.GecKnown,
                              debias_total=inst.debias_total())
    with pytest.raises(SingularHessian) as err:
        solve_gec(prob)
    assert err.value.condition > 1e12


def test_too_few_units():
    ent = make_entropy("el")
    x = np.column_stack([np.ones(2), [1.0, 2.0]])
    d = np.array([2.0, 3.0])
    with pytest.raises(SingularHessian):
        solve_gec(CalibrationProblem(x, d, x.T @ d, ent, Mode.GecKnown, debias_total=float(d @ ent.g(d))))


def test_infeasible_totals():
    ent = make_entropy("el")
    d = np.array([2.0, 3.0, 4.0, 5.0])
    x = np.ones((4, 1))
    # positive weights cannot sum to a negative population size
    with pytest.raises(CalibrationError):
        solve_gec(CalibrationProblem(x, d, np.array([-5.0]), ent, Mode.GecKnown,
                                     debias_total=float(d @ ent.g(d))))


def test_start_outside_image():
    ent = make_entropy("el")
    Z = np.ones((3, 1))
    with pytest.raises(InfeasibleStart):
        newton_dual(ent, Z, np.zeros(3), np.ones(3), np.array([3.0]), 1e-9, np.array([1.0]))


def test_no_feasible_start():
    # u = lam and u = -lam cannot both be negative
    with pytest.raises(InfeasibleStart):
        _feasible_start(make_entropy("el"), np.array([[1.0], [-1.0]]), np.zeros(2), np.array([-1.0, -1.0]))


def test_iteration_cap():
    rng = np.random.default_rng(13)
    inst = random_instance(rng, "el", {}, n=10, p=2, spread=1.0)
    ent = inst.entropy
    z = np.column_stack([inst.x, ent.g(inst.d)])
    lam0 = np.zeros(z.shape[1])
    lam0[-1] = 1.0
    with pytest.raises(Nonconvergence):
        newton_dual(ent, z, np.zeros(10), np.ones(10), z.T @ inst.w_star, 1e-9 * np.ones(z.shape[1]), lam0,
                    max_iter=1)


def test_wrong_mode_rejected():
    rng = np.random.default_rng(14)
    inst = random_instance(rng, "el", {}, n=8, p=1)
    with pytest.raises(ValueError):
        solve_gec(CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.DsBenchmarkOnly))
    with pytest.raises(ValueError):
        solve_ds(gec_problem(inst))
    with pytest.raises(ValueError):
        CalibrationProblem(inst.x, inst.d, inst.x_totals, inst.entropy, Mode.GecKnown)


def test_ds_shift_values():
    assert ds_shift(make_entropy("ce")) == 1.0
    assert ds_shift(make_entropy("set")) == 1.0
    for k in ("sq", "el", "et", "hd", "inv"):
        assert ds_shift(make_entropy(k)) == 0.0
