"""Precision-generic array helpers and banded linear algebra.

Grid data lives either in float64/complex128 arrays or, for the
high-precision residual checks, in numpy object arrays of ``gmpy2.mpfr``.
Everything here accepts both.  Complex data is never stored in object
arrays; the high-precision code keeps real and imaginary parts apart.
"""
from __future__ import annotations

from fractions import Fraction

import gmpy2
import mpmath
import numpy as np
from scipy.linalg import lapack

_EXP = np.frompyfunc(gmpy2.exp, 1, 1)
_SQRT = np.frompyfunc(gmpy2.sqrt, 1, 1)


def is_mp(x) -> bool:
    return isinstance(x, np.ndarray) and x.dtype == object


def set_precision(bits: int) -> None:
    """Raise the gmpy2 working precision to at least ``bits``."""
    ctx = gmpy2.get_context()
    if ctx.precision < bits:
        ctx.precision = bits


def mpf(x):
    """Convert a scalar (float, int, str, Fraction, mpmath.mpf) to mpfr."""
    if isinstance(x, Fraction):
        return gmpy2.mpfr(x.numerator) / gmpy2.mpfr(x.denominator)
    if isinstance(x, mpmath.mpf):
        man, exp = x.man_exp
        return gmpy2.mul_2exp(gmpy2.mpfr(int(man)), int(exp))
    return gmpy2.mpfr(x)


def mp_array(values) -> np.ndarray:
    out = np.empty(len(values), dtype=object)
    for i, v in enumerate(values):
        out[i] = mpf(v)
    return out


def scalar_like(template, x):
    return mpf(x) if is_mp(template) else float(x)


def exp(x):
    return _EXP(x) if is_mp(x) else np.exp(x)


def sqrt(x):
    return _SQRT(x) if is_mp(x) else np.sqrt(x)


def to_float(x):
    if isinstance(x, np.ndarray):
        return x.astype(float) if x.dtype == object else x
    return float(x)


def zeros_like(template, dtype=None):
    if is_mp(template):
        out = np.empty(len(template), dtype=object)
        out[:] = gmpy2.mpfr(0)
        return out
    return np.zeros(len(template), dtype=dtype or template.dtype)


def total(x):
    """Sum that keeps mpfr precision for object arrays."""
    if is_mp(x):
        return gmpy2.fsum(x.tolist())
    return np.sum(x)


# ---------------------------------------------------------------------------
# exact rational helpers (used for the stencil closure and end corrections)

def solve_fraction(A, b):
    """Solve a small square system exactly over the rationals."""
    n = len(b)
    M = [[Fraction(A[i][j]) for j in range(n)] + [Fraction(b[i])] for i in range(n)]
    for c in range(n):
        p = next(r for r in range(c, n) if M[r][c] != 0)
        M[c], M[p] = M[p], M[c]
        piv = M[c][c]
        M[c] = [v / piv for v in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [vr - f * vc for vr, vc in zip(M[r], M[c])]
    return [M[i][n] for i in range(n)]


def min_norm_fraction(A, b):
    """Minimal-norm solution of an underdetermined full-row-rank system."""
    m = len(A)
    G = [[sum(A[i][k] * A[j][k] for k in range(len(A[0]))) for j in range(m)]
         for i in range(m)]
    y = solve_fraction(G, b)
    return [sum(A[i][k] * y[i] for i in range(m)) for k in range(len(A[0]))]


# ---------------------------------------------------------------------------
# banded matrices, LAPACK-style storage with kl = ku = 2

BAND = 2


def band_matvec(ab: np.ndarray, x: np.ndarray) -> np.ndarray:
    """y = A x for A stored as ab[2 + i - j, j] = A[i, j]."""
    M = ab.shape[1]
    if is_mp(ab) or is_mp(x):
        y = zeros_like(x) if is_mp(x) else np.zeros(M, dtype=object)
    else:
        y = np.zeros(M, dtype=np.result_type(ab.dtype, x.dtype))
    for d in range(-BAND, BAND + 1):
        row = ab[BAND - d]
        if d >= 0:
            y[:M - d] += row[d:] * x[d:]
        else:
            y[-d:] += row[:M + d] * x[:M + d]
    return y


def symmetric_band(diag: np.ndarray, up1: np.ndarray, up2: np.ndarray) -> np.ndarray:
    """Storage of the symmetric pentadiagonal matrix with the given diagonals."""
    M = len(diag)
    if is_mp(diag):
        ab = np.empty((2 * BAND + 1, M), dtype=object)
        ab[:] = gmpy2.mpfr(0)
    else:
        ab = np.zeros((2 * BAND + 1, M), dtype=np.result_type(diag, up1, up2))
    ab[BAND] = diag
    ab[BAND - 1, 1:] = up1
    ab[BAND + 1, :-1] = up1
    ab[BAND - 2, 2:] = up2
    ab[BAND + 2, :-2] = up2
    return ab


def band_from_diagonals(diags: dict[int, np.ndarray], M: int) -> np.ndarray:
    """Storage from {offset d: values}, values[i] = A[i, i + d] for d >= 0 and
    values[j] = A[j - d, j] for d < 0 (both of length M - |d|)."""
    dtype = np.result_type(*[np.asarray(v).dtype for v in diags.values()])
    ab = np.zeros((2 * BAND + 1, M), dtype=dtype)
    for d, v in diags.items():
        if d >= 0:
            ab[BAND - d, d:] = v
        else:
            ab[BAND - d, :M + d] = v
    return ab


def band_diagonal(ab: np.ndarray, d: int) -> np.ndarray:
    M = ab.shape[1]
    return ab[BAND - d, d:] if d >= 0 else ab[BAND - d, :M + d]


class BandedLU:
    """LU factorization with partial pivoting of a kl = ku = 2 band matrix.

    Float and complex matrices go through LAPACK ``?gbtrf``; object arrays
    of mpfr use a plain Python elimination with the same pivoting.
    """

    def __init__(self, ab: np.ndarray):
        self.M = ab.shape[1]
        self.mp = is_mp(ab)
        if self.mp:
            self._factor_mp(ab)
        else:
            big = np.zeros((3 * BAND + 1, self.M), dtype=ab.dtype)
            big[BAND:] = ab
            trf = lapack.zgbtrf if np.iscomplexobj(ab) else lapack.dgbtrf
            self._trs = lapack.zgbtrs if np.iscomplexobj(ab) else lapack.dgbtrs
            self.lu, self.piv, info = trf(big, BAND, BAND)
            if info > 0:
                raise np.linalg.LinAlgError(f"singular band matrix (zero pivot at {info})")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.mp:
            return self._solve_mp(rhs)
        dtype = np.result_type(self.lu.dtype, rhs.dtype)
        if dtype != self.lu.dtype:
            # real factor, complex right-hand side
            return self.solve(rhs.real) + 1j * self.solve(rhs.imag)
        x, info = self._trs(self.lu, BAND, BAND, rhs, self.piv)
        if info != 0:
            raise np.linalg.LinAlgError("band solve failed")
        return x

    # -- mpfr path ----------------------------------------------------------
    def _factor_mp(self, ab):
        M = self.M
        zero = gmpy2.mpfr(0)
        # rows stored densely over columns [i - BAND, i + 2 * BAND]
        rows = []
        for i in range(M):
            row = {}
            for j in range(max(0, i - BAND), min(M, i + BAND + 1)):
                row[j] = ab[BAND + i - j, j]
            rows.append(row)
        perm = list(range(M))
        L = [dict() for _ in range(M)]
        for k in range(M):
            cand = [i for i in range(k, min(M, k + BAND + 1))]
            p = max(cand, key=lambda i: abs(rows[i].get(k, zero)))
            if rows[p].get(k, zero) == 0:
                raise np.linalg.LinAlgError("singular band matrix")
            if p != k:
                rows[k], rows[p] = rows[p], rows[k]
                perm[k], perm[p] = perm[p], perm[k]
                L[k], L[p] = L[p], L[k]
            piv = rows[k][k]
            for i in range(k + 1, min(M, k + BAND + 1)):
                a = rows[i].get(k, zero)
                if a == 0:
                    continue
                f = a / piv
                L[i][k] = f
                ri = rows[i]
                del ri[k]
                for j, v in rows[k].items():
                    if j > k:
                        ri[j] = ri.get(j, zero) - f * v
        self._rows, self._L, self._perm = rows, L, perm

    def _solve_mp(self, rhs):
        M = self.M
        b = [rhs[p] for p in self._perm]
        # the row swaps were applied to L as well, so L is consistent with perm
        for i in range(M):
            s = b[i]
            for k, f in self._L[i].items():
                s -= f * b[k]
            b[i] = s
        x = [None] * M
        for i in range(M - 1, -1, -1):
            row = self._rows[i]
            s = b[i]
            for j, v in row.items():
                if j > i:
                    s -= v * x[j]
            x[i] = s / row[i]
        out = np.empty(M, dtype=object)
        out[:] = x
        return out
