"""Truncated double power series in b and L = lambda^alpha with grid-function
coefficients.

A term b^p L^q carries a complex coefficient stored as a (re, im) pair of
real arrays (or scalars); None stands for zero.  The weight of b^p L^q is
p/2 + q, so b^{2j} L^{k+1} has weight j + k + 1 and the index (j, k) of the
profile expansion maps to the monomials (2j, k+1) and (2j+1, k+1).
Products drop every monomial whose doubled weight p + 2q exceeds
``max_weight2``.
"""
from __future__ import annotations

from typing import Callable, Iterator

Coef = tuple  # (re, im)


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _mul(a, b):
    if a is None or b is None:
        return None
    return a * b


def _neg(a):
    return None if a is None else -a


class FormalSeries:
    """Sum of c_{p,q} b^p L^q truncated at doubled weight ``max_weight2``."""

    def __init__(self, terms: dict | None = None, max_weight2: int = 0):
        self.max_weight2 = max_weight2
        self.terms: dict[tuple[int, int], list] = {}
        for key, (re, im) in (terms or {}).items():
            self._accumulate(key, re, im)

    # -- bookkeeping -------------------------------------------------------
    def keeps(self, key) -> bool:
        p, q = key
        return p >= 0 and q >= 0 and p + 2 * q <= self.max_weight2

    def _accumulate(self, key, re, im) -> None:
        if not self.keeps(key) or (re is None and im is None):
            return
        cur = self.terms.get(key)
        if cur is None:
            self.terms[key] = [re, im]
        else:
            cur[0] = _add(cur[0], re)
            cur[1] = _add(cur[1], im)

    def __iter__(self) -> Iterator:
        return iter(sorted(self.terms.items()))

    def get(self, key) -> tuple:
        re, im = self.terms.get(key, (None, None))
        return re, im

    def copy(self) -> "FormalSeries":
        return FormalSeries({k: tuple(v) for k, v in self.terms.items()}, self.max_weight2)

    def truncate(self, max_weight2: int) -> "FormalSeries":
        return FormalSeries({k: tuple(v) for k, v in self.terms.items()}, max_weight2)

    def _new(self, other=None) -> "FormalSeries":
        w = self.max_weight2 if other is None else min(self.max_weight2, other.max_weight2)
        return FormalSeries(None, w)

    # -- linear algebra ----------------------------------------------------
    def __add__(self, other: "FormalSeries") -> "FormalSeries":
        out = self._new(other)
        for k, (re, im) in self:
            out._accumulate(k, re, im)
        for k, (re, im) in other:
            out._accumulate(k, re, im)
        return out

    def __neg__(self) -> "FormalSeries":
        out = self._new()
        for k, (re, im) in self:
            out._accumulate(k, _neg(re), _neg(im))
        return out

    def __sub__(self, other: "FormalSeries") -> "FormalSeries":
        return self + (-other)

    def scale(self, c) -> "FormalSeries":
        """Multiply by a real scalar or a real pointwise array."""
        out = self._new()
        for k, (re, im) in self:
            out._accumulate(k, _mul(re, c), _mul(im, c))
        return out

    def times_i(self) -> "FormalSeries":
        out = self._new()
        for k, (re, im) in self:
            out._accumulate(k, _neg(im), re)
        return out

    def conj(self) -> "FormalSeries":
        out = self._new()
        for k, (re, im) in self:
            out._accumulate(k, re, _neg(im))
        return out

    def shift(self, dp: int = 0, dq: int = 0) -> "FormalSeries":
        """Multiply by b^dp L^dq."""
        out = self._new()
        for (p, q), (re, im) in self:
            out._accumulate((p + dp, q + dq), re, im)
        return out

    def map(self, op: Callable) -> "FormalSeries":
        """Apply a real linear map to both parts of every coefficient."""
        out = self._new()
        for k, (re, im) in self:
            out._accumulate(k, None if re is None else op(re), None if im is None else op(im))
        return out

    # -- products ----------------------------------------------------------
    def __mul__(self, other: "FormalSeries") -> "FormalSeries":
        out = self._new(other)
        for (p1, q1), (a, b) in self:
            for (p2, q2), (c, d) in other:
                key = (p1 + p2, q1 + q2)
                if not out.keeps(key):
                    continue
                re = _add(_mul(a, c), _neg(_mul(b, d)))
                im = _add(_mul(a, d), _mul(b, c))
                out._accumulate(key, re, im)
        return out

    def abs2(self) -> "FormalSeries":
        """The real series of |P|^2 = P conj(P)."""
        out = self._new()
        items = list(self)
        for (p1, q1), (a, b) in items:
            for (p2, q2), (c, d) in items:
                key = (p1 + p2, q1 + q2)
                if not out.keeps(key):
                    continue
                out._accumulate(key, _add(_mul(a, c), _mul(b, d)), None)
        return out

    def flow_derivative(self, theta: "FormalSeries", alpha) -> "FormalSeries":
        """d/ds along lambda_s = -b lambda, b_s = -b^2 + theta.

        d(b^p L^q)/ds = -(p + q alpha) b^{p+1} L^q + p b^{p-1} L^q theta.
        """
        out = self._new(theta)
        down = FormalSeries(None, out.max_weight2 + 1)
        for (p, q), (re, im) in self:
            c = -(p + q * alpha)
            out._accumulate((p + 1, q), _mul(re, c), _mul(im, c))
            if p > 0:
                down._accumulate((p - 1, q), _mul(re, p), _mul(im, p))
        if down.terms:
            prod = down * theta
            for k, (re, im) in prod:
                out._accumulate(k, re, im)
        return out


def nonlinearity_series(P: FormalSeries, N: int) -> FormalSeries:
    """|P|^{4/N} P for N = 1, 2 as a series."""
    a2 = P.abs2()
    if N == 2:
        return a2 * P
    if N == 1:
        return (a2 * a2) * P
    raise ValueError("series nonlinearity needs N in {1, 2}")
