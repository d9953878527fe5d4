import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowup_lab.law import (F_integral, F_leading, LawConstants, LawError, b_app, lambda_app,
                            law_ode_residuals, predicted_rates, select_initial_params, solve_F,
                            t_of_s, time_maps)


def test_constants_alpha_one_beta_two():
    # sigma = 1/2: alpha = 1, c = 4, A = 1, curlyC = 1/3
    lc = LawConstants.from_inputs(0.5, 2.0, 1.0)
    assert lc.alpha == 1.0 and lc.c == 4.0
    assert lc.A == pytest.approx(1.0)
    assert lc.curlyC == pytest.approx(1 / 3)
    assert lc.C_lambda == pytest.approx(3 ** (2 / 3))
    assert lc.C_b == pytest.approx(2 * 3 ** (1 / 3))
    assert lc.lambda_exponent == pytest.approx(2 / 3)


def test_exponents_in_sigma():
    lc = LawConstants.from_inputs(0.3, 1.0, 1.0)
    assert lc.lambda_exponent == pytest.approx(1 / 1.3)
    assert lc.b_exponent == pytest.approx(0.7 / 1.3)


@pytest.mark.parametrize("kw", [dict(sigma=0.0), dict(sigma=1.0), dict(beta=-1.0),
                                dict(lambda0=1.5)])
def test_invalid_constants(kw):
    args = dict(sigma=0.3, beta=1.0, virial2=1.0)
    args.update(kw)
    with pytest.raises(LawError):
        LawConstants.from_inputs(**args)


def test_negative_radicand_rejected():
    with pytest.raises(LawError):
        LawConstants.from_inputs(0.3, 0.01, 1.0, E0=-100.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.1, 5.0), st.floats(10.0, 1e5))
def test_approximate_law_solves_the_ode(sigma, beta, s):
    lc = LawConstants.from_inputs(sigma, beta, 1.0)
    r1, r2 = law_ode_residuals(s, lc)
    scale = float(b_app(s, lc)) ** 2
    assert abs(r1) < 1e-6 * scale and abs(r2) < 1e-6 * float(b_app(s, lc))


def test_s_to_t_map_consistent():
    lc = LawConstants.from_inputs(0.3, 1.2, 1.0)
    t1 = -0.05
    s1 = time_maps(t1, lc)
    # |t(s)| = curlyC s^{-(4-alpha)/alpha} on the approximate law
    assert abs(t1) == pytest.approx(lc.curlyC * s1 ** (-(4 - lc.alpha) / lc.alpha), rel=1e-12)
    s = 3 * s1
    t = t_of_s(s, s1, t1, lc)
    assert abs(t) == pytest.approx(lc.curlyC * s ** (-(4 - lc.alpha) / lc.alpha), rel=1e-9)
    lam_t, b_t = predicted_rates(np.array([t]), lc)
    assert lam_t[0] == pytest.approx(float(lambda_app(s, lc)), rel=1e-9)
    assert b_t[0] == pytest.approx(float(b_app(s, lc)), rel=1e-9)
    with pytest.raises(LawError):
        time_maps(0.1, lc)


def test_F_closed_form_without_energy():
    lc = LawConstants.from_inputs(0.3, 1.2, 1.0)
    lam = 1e-3
    exact = F_leading(lam, lc) - F_leading(lc.lambda0, lc)
    assert F_integral(lam, lc) == pytest.approx(exact, rel=1e-11)
    assert F_integral(lc.lambda0, lc) == 0.0


@pytest.mark.parametrize("E0", [0.5, 2.0, -0.2])
def test_F_closed_form_alpha_one(E0):
    # for alpha = 1: F = (2/c)(sqrt(c + C0 l)/sqrt(l) - sqrt(c + C0 l0)/sqrt(l0))
    lc = LawConstants.from_inputs(0.5, 2.0, 8.0, E0=E0)
    c, C0, l0 = lc.c, lc.C0, lc.lambda0
    for lam in (1e-5, 1e-3, 0.05):
        exact = 2 / c * (math.sqrt(c + C0 * lam) / math.sqrt(lam) - math.sqrt(c + C0 * l0) / math.sqrt(l0))
        assert F_integral(lam, lc) == pytest.approx(exact, rel=1e-11)


def test_F_monotone_and_solve_inverts():
    lc = LawConstants.from_inputs(0.3, 1.2, 10.0, E0=1.0)
    lams = np.logspace(-6, -1.01, 12)
    vals = [F_integral(x, lc) for x in lams]
    assert np.all(np.diff(vals) < 0)
    for s1 in (1e2, 1e3, 1e4):
        lam = solve_F(s1, lc)
        assert F_integral(lam, lc) == pytest.approx(s1, rel=1e-12)
    with pytest.raises(LawError):
        F_integral(0.5, lc)


def test_app_rejects_nonpositive_s():
    lc = LawConstants.from_inputs(0.3, 1.2, 1.0)
    with pytest.raises(LawError):
        lambda_app(0.0, lc)


def test_select_initial_params(expansion2):
    lc = LawConstants.from_expansion(expansion2, E0=1.0)
    lam1, b1 = select_initial_params(1e3, 1.0, expansion2, lc)
    assert F_integral(lam1, lc) == pytest.approx(1e3, rel=1e-10)
    assert b1 == pytest.approx(float(b_app(1e3, lc)), rel=0.05)
    assert lam1 == pytest.approx(float(lambda_app(1e3, lc)), rel=0.05)
