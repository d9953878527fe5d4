import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowup_lab.series import FormalSeries, nonlinearity_series

num = st.floats(-2, 2, allow_nan=False)
keys = st.tuples(st.integers(0, 3), st.integers(0, 2))


def series_strategy(W=6):
    return st.dictionaries(keys, st.tuples(num, num), max_size=5).map(
        lambda d: FormalSeries(d, W))


def evaluate(S, b, L):
    return sum((re or 0) * b ** p * L ** q + 1j * (im or 0) * b ** p * L ** q
               for (p, q), (re, im) in S)


def close(S, T):
    keys_ = set(S.terms) | set(T.terms)
    for k in keys_:
        for x, y in zip(S.get(k), T.get(k)):
            assert (x or 0) == pytest.approx(y or 0, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(series_strategy(), series_strategy(), series_strategy())
def test_product_associative_commutative(A, B, C):
    close(A * B, B * A)
    close((A * B) * C, A * (B * C))
    close(A * (B + C), A * B + A * C)


@settings(max_examples=40, deadline=None)
@given(series_strategy())
def test_abs2_is_product_with_conjugate(A):
    close(A.abs2(), A * A.conj())
    close(A.times_i().times_i(), -A)
    # at b = L = 0 only the constant term survives
    assert evaluate(A.abs2(), 0.0, 0.0) == pytest.approx(abs(evaluate(A, 0.0, 0.0)) ** 2)


def test_truncation_drops_heavy_terms():
    A = FormalSeries({(0, 1): (1.0, None), (2, 0): (1.0, None)}, 4)
    P = A * A
    # (0,2) has doubled weight 4 and stays, (4,0) has weight 4, (2,1) weight 4
    assert set(P.terms) == {(0, 2), (2, 1), (4, 0)}
    assert FormalSeries({(0, 3): (1.0, None)}, 4).terms == {}


def test_flow_derivative_monomial():
    # d/ds (b^2 L) = -(2 + alpha) b^3 L + 2 b L theta, theta = beta L
    alpha, beta = 1.4, 0.7
    S = FormalSeries({(2, 1): (1.0, None)}, 9)
    th = FormalSeries({(0, 1): (beta, None)}, 9)
    D = S.flow_derivative(th, alpha)
    assert D.get((3, 1))[0] == pytest.approx(-(2 + alpha))
    assert D.get((1, 2))[0] == pytest.approx(2 * beta)


def test_flow_derivative_numerically():
    # along lambda_s = -b lambda, b_s = -b^2 + theta, compare with a finite difference
    alpha = 1.4
    S = FormalSeries({(1, 1): (0.3, 1.0), (0, 2): (2.0, None)}, 12)
    th = FormalSeries({(0, 1): (0.5, None)}, 12)
    b, lam, ds = 0.1, 0.2, 1e-6
    L = lam ** alpha
    theta = 0.5 * L
    b2, lam2 = b + ds * (-b * b + theta), lam + ds * (-b * lam)
    fd = (evaluate(S, b2, lam2 ** alpha) - evaluate(S, b, L)) / ds
    assert evaluate(S.flow_derivative(th, alpha), b, L) == pytest.approx(fd, rel=1e-4)


def test_nonlinearity_series_matches_pointwise():
    a = np.array([1.0, 2.0])
    S = FormalSeries({(0, 0): (a, None), (1, 0): (None, a * 0.5)}, 8)
    N2 = nonlinearity_series(S, 2)
    b = 0.01
    z = a + 1j * 0.5 * a * b
    got = sum(((re if re is not None else 0) + 1j * (im if im is not None else 0)) * b ** p
              for (p, q), (re, im) in N2)
    assert np.allclose(got, np.abs(z) ** 2 * z, rtol=1e-12)
    with pytest.raises(ValueError):
        nonlinearity_series(S, 3)
