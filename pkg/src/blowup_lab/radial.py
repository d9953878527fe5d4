"""Radial grids, grid functions and the weighted integrals used throughout.

The grid is cell centered, r_i = (i + 1/2) h, so the origin is never a
node and r^{-2 sigma} is finite everywhere.  Radial functions are even in r;
N = 1 is the whole line folded onto r > 0 (c_1 = 2).

The Laplacian is a fourth-order five-point stencil for u'' + (N-1)/r u'
with even reflection at the origin and zero ghost values beyond R_max.
Multiplying its rows by the quadrature weights gives a symmetric matrix
S = W A, which is stored instead of A.  For N = 2 the three nodes next to
the origin get a small rational closure (entries of S and weights) that
keeps S symmetric and exact on r^0, r^2, r^4.  The weight of the singular
factor r^{-2 sigma} carries Hurwitz zeta end corrections so that integrals
such as ||r^{-sigma} Q||^2 converge at high order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import mpmath
import numpy as np

from . import _numerics as nm

SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}

# five-point stencils on offsets -2..2 (unit spacing)
_D2 = (Fraction(-1, 12), Fraction(16, 12), Fraction(-30, 12), Fraction(16, 12), Fraction(-1, 12))
_D1 = (Fraction(1, 12), Fraction(-8, 12), Fraction(0), Fraction(8, 12), Fraction(-1, 12))

SINGULAR_CORRECTIONS = 3


class GridMismatchError(ValueError):
    pass


def _row(i: int, N: int, r_i):
    """Coefficients of A (unit spacing) in row i as {offset: value}."""
    return {d: _D2[d + 2] + (N - 1) * _D1[d + 2] / r_i for d in range(-2, 3)}


def _origin_block(N: int, k: int = 3, size: int = 10):
    """Exact S (unit spacing) on the first ``size`` nodes and weights w_i.

    For N = 2 the k x k corner of S and w_0..w_{k-1} are replaced by the
    minimal-norm rational perturbation that restores symmetry while staying
    exact for r^0, r^2, r^4.
    """
    r = [Fraction(2 * i + 1, 2) for i in range(size)]
    w = [ri ** (N - 1) for ri in r]
    S = [[Fraction(0)] * size for _ in range(size)]
    for i in range(size):
        for d, c in _row(i, N, r[i]).items():
            j = i + d
            j = -j - 1 if j < 0 else j
            if j < size:
                S[i][j] += w[i] * c
    if N != 2:
        return S, w
    idx = [(i, j) for i in range(k) for j in range(i, min(k, i + 3))]
    n_unk = len(idx) + k
    A, b = [], []
    for p in range(3):
        u = [ri ** (2 * p) for ri in r]
        lap = [Fraction(2 * p * (2 * p + N - 2)) * ri ** (2 * p - 2) if p else Fraction(0) for ri in r]
        for i in range(k):
            row = [Fraction(0)] * n_unk
            rhs = Fraction(0)
            for j in range(max(0, i - 2), i + 3):
                key = (min(i, j), max(i, j))
                if key in idx:
                    row[idx.index(key)] += u[j]
                else:
                    rhs -= S[i][j] * u[j]
            row[len(idx) + i] = -lap[i]
            A.append(row)
            b.append(rhs)
    x0 = [S[i][j] for i, j in idx] + w[:k]
    resid = [bi - sum(a * x for a, x in zip(row, x0)) for row, bi in zip(A, b)]
    dx = nm.min_norm_fraction(A, resid)
    x = [a + c for a, c in zip(x0, dx)]
    for n, (i, j) in enumerate(idx):
        S[i][j] = S[j][i] = x[n]
    w = x[len(idx):] + w[k:]
    return S, w


def _far_end_correction(q: int = 4):
    """Weights d on the last q nodes (unit spacing) with
    sum d_i f(r_i) = f'(R)/24 - 7 f'''(R)/5760 for cubic f."""
    t = [Fraction(-(2 * (q - i) - 1), 2) for i in range(q)]
    A = [[ti ** k for ti in t] for k in range(q)]
    rhs = [Fraction(0), Fraction(1, 24), Fraction(0), Fraction(-7, 960)][:q]
    return nm.solve_fraction(A, rhs)


def _singular_deltas(s, m: int, prec: int):
    """Corrections delta_i, i < m, with sum_i delta_i (i+1/2)^{2j} = -zeta(-s-2j, 1/2)."""
    with mpmath.workprec(prec):
        A = mpmath.matrix(m, m)
        b = mpmath.matrix(m, 1)
        for j in range(m):
            for i in range(m):
                A[j, i] = (mpmath.mpf(i) + mpmath.mpf(1) / 2) ** (2 * j)
            b[j] = -mpmath.zeta(-s - 2 * j, mpmath.mpf(1) / 2)
        x = mpmath.lu_solve(A, b)
        return [x[i] for i in range(m)]


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Cell-centered radial grid on (0, r_max) for dimension N.

    ``precision`` (bits) switches every array to gmpy2 mpfr objects; the
    default None keeps float64.
    """

    dimension: int
    h: float = 0.01
    r_max: float = 30.0
    precision: int | None = None
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    stiffness: np.ndarray = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        N = self.dimension
        if N not in SPHERE_AREA:
            raise ValueError(f"dimension must be 1, 2 or 3, got {N}")
        if not (self.h > 0 and self.r_max > 4 * self.h):
            raise ValueError("need h > 0 and r_max > 4 h")
        M = int(round(self.r_max / self.h))
        if abs(M * self.h - self.r_max) > 1e-9 * self.r_max:
            raise ValueError("r_max must be an integer multiple of h")
        if self.precision is not None:
            nm.set_precision(self.precision)
            conv = nm.mpf
            h = nm.mpf(repr(float(self.h)))
            cN = nm.mpf(2) if N == 1 else nm.mpf(2 * (N - 1)) * nm.mpf(_mp_pi(self.precision))
            r1 = nm.mp_array(range(M)) + nm.mpf(0.5)
        else:
            conv = float
            h = float(self.h)
            cN = SPHERE_AREA[N]
            r1 = np.arange(M) + 0.5

        # unit-spacing S = W A from its upper diagonals; w_i = r_i^{N-1}
        w1 = r1 ** (N - 1)
        c = {d: conv(_D2[d + 2]) for d in (0, 1, 2)}
        g = {d: conv(_D1[d + 2]) * (N - 1) for d in (1, 2)}
        rn2 = r1 ** (N - 2) if N >= 2 else r1 * 0
        diag = w1 * c[0]
        up1 = w1[:-1] * c[1] + rn2[:-1] * g[1]
        up2 = w1[:-2] * c[2] + rn2[:-2] * g[2]
        S0, wb = _origin_block(N)
        for i in range(min(len(S0), M)):
            diag[i] = conv(S0[i][i])
            if i + 1 < min(len(S0), M):
                up1[i] = conv(S0[i][i + 1])
            if i + 2 < min(len(S0), M):
                up2[i] = conv(S0[i][i + 2])
        w1 = w1.copy()
        for i in range(3):
            w1[i] = conv(wb[i])
        dfar = _far_end_correction()
        for n, d in enumerate(dfar):
            i = M - len(dfar) + n
            w1[i] += conv(d) * r1[i] ** (N - 1)

        sc = cN * h ** (N - 2)
        object.__setattr__(self, "nodes", r1 * h)
        object.__setattr__(self, "weights", w1 * (cN * h ** N))
        object.__setattr__(self, "stiffness", nm.symmetric_band(diag * sc, up1 * sc, up2 * sc))
        object.__setattr__(self, "_h", h)
        object.__setattr__(self, "_cN", cN)

    # -- basic data --------------------------------------------------------
    @property
    def M(self) -> int:
        return len(self.nodes)

    @property
    def is_mp(self) -> bool:
        return self.precision is not None

    @property
    def sphere_area(self):
        return self._cN

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or (self.dimension == other.dimension and self.h == other.h
                                 and self.r_max == other.r_max and self.precision == other.precision)

    def header(self) -> dict:
        return {"N": self.dimension, "h": float(self.h), "R_max": float(self.r_max), "M": self.M}

    def to_float(self) -> "RadialGrid":
        return self if not self.is_mp else RadialGrid(self.dimension, self.h, self.r_max)

    # -- quadrature --------------------------------------------------------
    def integrate(self, f: np.ndarray):
        """Quadrature of f over the ball of radius R_max."""
        return nm.total(self.weights * f)

    def singular_weights(self, sigma: float) -> np.ndarray:
        """Weights for integrals of r^{-2 sigma} g(r) with g smooth and even."""
        key = ("sing", float(sigma))
        if key in self._cache:
            return self._cache[key]
        N = self.dimension
        if not (0 <= sigma < N / 2):
            raise ValueError(f"need 0 <= sigma < N/2 = {N / 2}, got {sigma}")
        s = N - 1 - 2 * sigma
        prec = (self.precision or 53) + 40
        deltas = _singular_deltas(mpmath.mpf(repr(float(s))) if self.is_mp else s,
                                  SINGULAR_CORRECTIONS, prec)
        r = self.nodes
        h = self._h
        if self.is_mp:
            sm = nm.mpf(mpmath.mpf(repr(float(s))))
            base = np.array([x ** sm for x in r], dtype=object) * h
            for i, d in enumerate(deltas):
                base[i] += h ** (sm + 1) * nm.mpf(d)
        else:
            base = h * r ** s
            for i, d in enumerate(deltas):
                base[i] += h ** (s + 1) * float(d)
        wsig = base * self._cN
        self._cache[key] = wsig
        return wsig

    def potential(self, sigma: float) -> np.ndarray:
        """Nodal values of r^{-2 sigma} consistent with ``singular_weights``."""
        key = ("pot", float(sigma))
        if key not in self._cache:
            self._cache[key] = self.singular_weights(sigma) / self.weights
        return self._cache[key]

    # -- operators on raw arrays ------------------------------------------
    def apply_stiffness(self, u: np.ndarray) -> np.ndarray:
        """S u, with S = W * Laplacian symmetric and negative semidefinite."""
        if np.iscomplexobj(u):
            return self.apply_stiffness(u.real) + 1j * self.apply_stiffness(u.imag)
        return nm.band_matvec(self.stiffness, u)

    def apply_laplacian(self, u: np.ndarray) -> np.ndarray:
        return self.apply_stiffness(u) / self.weights

    def dirichlet(self, u: np.ndarray, v: np.ndarray | None = None):
        """Discrete Re int grad u . grad conj(v)."""
        v = u if v is None else v
        Su = self.apply_stiffness(u)
        if np.iscomplexobj(Su) or np.iscomplexobj(v):
            return -float(np.sum((Su * np.conj(v)).real))
        return -nm.total(Su * v)

    def derivative(self, u: np.ndarray) -> np.ndarray:
        """Fourth-order du/dr; even reflection at the origin, one-sided at R_max."""
        M = self.M
        if M < 6:
            raise ValueError("grid too small for the derivative stencil")
        pad = np.concatenate([u[1::-1], u])
        core = pad[0:M - 2] - 8 * pad[1:M - 1] + 8 * pad[3:M + 1] - pad[4:M + 2]
        u1, u2, u3, u4, u5 = u[-1], u[-2], u[-3], u[-4], u[-5]
        tail = np.array([3 * u1 + 10 * u2 - 18 * u3 + 6 * u4 - u5,
                         25 * u1 - 48 * u2 + 36 * u3 - 16 * u4 + 3 * u5], dtype=core.dtype)
        res = np.concatenate([core, tail])
        return res / (12 * self._h)


def _mp_pi(bits: int):
    with mpmath.workprec(bits + 20):
        return mpmath.pi()


@dataclass(frozen=True, eq=False)
class RadialFunction:
    """Grid function; values are complex128, float64 or mpfr objects."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if not isinstance(v, np.ndarray):
            v = np.asarray(v)
        if v.shape != (self.grid.M,):
            raise ValueError(f"expected {self.grid.M} values, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    def _check(self, other):
        if isinstance(other, RadialFunction):
            if not self.grid.same_as(other.grid):
                raise GridMismatchError("functions live on different grids")
            return other.values
        return other

    def __add__(self, o):
        return RadialFunction(self.grid, self.values + self._check(o))

    __radd__ = __add__

    def __sub__(self, o):
        return RadialFunction(self.grid, self.values - self._check(o))

    def __rsub__(self, o):
        return RadialFunction(self.grid, self._check(o) - self.values)

    def __mul__(self, o):
        return RadialFunction(self.grid, self.values * self._check(o))

    __rmul__ = __mul__

    def __truediv__(self, o):
        return RadialFunction(self.grid, self.values / self._check(o))

    def __neg__(self):
        return RadialFunction(self.grid, -self.values)

    @property
    def r(self):
        return self.grid.nodes

    @property
    def real(self) -> "RadialFunction":
        return RadialFunction(self.grid, self.values if nm.is_mp(self.values) else self.values.real.copy())

    @property
    def imag(self) -> "RadialFunction":
        if nm.is_mp(self.values):
            return RadialFunction(self.grid, nm.zeros_like(self.values))
        return RadialFunction(self.grid, np.imag(self.values).copy())

    def conj(self) -> "RadialFunction":
        return RadialFunction(self.grid, np.conj(self.values) if not nm.is_mp(self.values) else self.values)

    def to_complex(self) -> "RadialFunction":
        return RadialFunction(self.grid, nm.to_float(self.values).astype(complex))

    # -- serialization -----------------------------------------------------
    def to_csv(self, path) -> None:
        v = nm.to_float(self.values).astype(complex)
        r = nm.to_float(self.grid.nodes)
        with open(path, "w") as fh:
            fh.write("r,re,im\n")
            for ri, vi in zip(r, v):
                fh.write(f"{ri:.17g},{vi.real:.17g},{vi.imag:.17g}\n")

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        csv = stem.with_suffix(".csv")
        head = stem.with_suffix(".json")
        self.to_csv(csv)
        head.write_text(json.dumps(self.grid.header(), indent=2))
        return csv, head

    @classmethod
    def load(cls, stem) -> "RadialFunction":
        stem = Path(stem)
        head = json.loads(stem.with_suffix(".json").read_text())
        grid = RadialGrid(head["N"], head["h"], head["R_max"])
        data = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        if data.shape[0] != head["M"] or not np.allclose(data[:, 0], grid.nodes, rtol=1e-14):
            raise ValueError("CSV does not match its header grid")
        return cls(grid, data[:, 1] + 1j * data[:, 2])


def grid_function(grid: RadialGrid, f) -> RadialFunction:
    """Sample a callable on the grid (float grids only)."""
    return RadialFunction(grid, np.asarray(f(nm.to_float(grid.nodes))))


# ---------------------------------------------------------------------------
# the operations on RadialFunction

def _same(u: RadialFunction, v: RadialFunction) -> None:
    if not u.grid.same_as(v.grid):
        raise GridMismatchError("functions live on different grids")


def inner(u: RadialFunction, v: RadialFunction):
    """Re int u conj(v) with the radial measure."""
    _same(u, v)
    a, b = u.values, v.values
    if nm.is_mp(a) or nm.is_mp(b):
        return u.grid.integrate(a * b)
    return float(np.sum(u.grid.weights * (a * np.conj(b)).real))


def abs2(v: np.ndarray) -> np.ndarray:
    return v * v if nm.is_mp(v) else (v.real ** 2 + v.imag ** 2 if np.iscomplexobj(v) else v * v)


def norm(u: RadialFunction, kind: str = "L2", p: float | None = None):
    """L2, H1, gradL2 or weighted norm ||r^p u||_2 (kind='weighted')."""
    g = u.grid
    a2 = abs2(u.values)
    if kind == "L2":
        val = g.integrate(a2)
    elif kind == "gradL2":
        val = g.dirichlet(u.values)
    elif kind == "H1":
        val = g.integrate(a2) + g.dirichlet(u.values)
    elif kind == "weighted":
        if p is None:
            raise ValueError("weighted norm needs an exponent p")
        if p < 0:
            sigma = -p
            if sigma >= g.dimension / 2:
                raise ValueError(f"||r^{p} u|| diverges for N = {g.dimension}")
            val = nm.total(g.singular_weights(sigma) * a2)
        else:
            val = g.integrate(g.nodes ** (2 * p) * a2) if p != int(p) else \
                g.integrate(g.nodes ** int(2 * p) * a2)
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    if nm.is_mp(u.values):
        return nm.sqrt(np.array([max(val, 0 * val)], dtype=object))[0]
    return math.sqrt(max(float(val), 0.0))


def lambda_op(u: RadialFunction) -> RadialFunction:
    """Scaling generator (N/2) u + r du/dr."""
    g = u.grid
    v = u.values
    if np.iscomplexobj(v):
        dv = g.derivative(v.real) + 1j * g.derivative(v.imag)
    else:
        dv = g.derivative(v)
    half_n = nm.mpf(g.dimension) / 2 if g.is_mp else g.dimension / 2
    return RadialFunction(g, half_n * v + g.nodes * dv)


def laplacian(u: RadialFunction) -> RadialFunction:
    return RadialFunction(u.grid, u.grid.apply_laplacian(u.values))


def nonlinearity(u: RadialFunction) -> RadialFunction:
    """Pointwise |u|^{4/N} u."""
    return RadialFunction(u.grid, power_nonlinearity(u.values, u.grid.dimension))


def power_nonlinearity(v: np.ndarray, N: int) -> np.ndarray:
    a2 = abs2(v)
    if N == 1:
        return a2 * a2 * v
    if N == 2:
        return a2 * v
    return a2 ** (2.0 / N) * v


def potential_apply(u: RadialFunction, sigma: float, sign: int = 1) -> RadialFunction:
    """Pointwise +- r^{-2 sigma} u."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return RadialFunction(u.grid, sign * u.grid.potential(sigma) * u.values)
