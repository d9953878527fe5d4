"""Linearized operators around Q, their constrained solves, rho and mu.

Both operators are stored in weighted (symmetric) form B = W L, so that
``apply`` is B u / w and solves are banded LU solves of B f = W g.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, null_space
from scipy.sparse import diags as sp_diags
from scipy.sparse.linalg import LinearOperator, onenormest, splu

from . import _numerics as nm
from .ground_state import GroundStateBundle, _power
from .radial import RadialFunction, inner, lambda_op, norm

COND_LIMIT = 1e12


class SolvabilityError(ValueError):
    """Right-hand side not orthogonal to Q for the L- solve."""

    def __init__(self, overlap: float, limit: float):
        super().__init__(f"(g, Q) = {overlap:.3e} exceeds the solvability tolerance {limit:.3e}")
        self.overlap = overlap


class ConditioningError(RuntimeError):
    pass


@dataclass(eq=False)
class LinearizedOperator:
    """L+ = -Lap + 1 - (1+4/N) Q^{4/N} or L- = -Lap + 1 - Q^{4/N}."""

    which: str
    bundle: GroundStateBundle
    matrix: np.ndarray = field(init=False, repr=False)
    _lu: object = field(init=False, repr=False, default=None)
    condition: float = field(init=False, default=float("nan"))

    def __post_init__(self):
        if self.which not in ("plus", "minus"):
            raise ValueError("which must be 'plus' or 'minus'")
        g = self.bundle.grid
        N = g.dimension
        q = self.bundle.Q.values
        qp = _power(q, N)
        if self.which == "plus":
            coef = (1 + nm.mpf(4) / N) if g.is_mp else 1 + 4.0 / N
            qp = qp * coef
        B = -g.stiffness.copy()
        B[2] = B[2] + g.weights - g.weights * qp
        self.matrix = B

    @property
    def grid(self):
        return self.bundle.grid

    def apply(self, u: RadialFunction) -> RadialFunction:
        v = u.values
        if np.iscomplexobj(v):
            out = nm.band_matvec(self.matrix, v.real) + 1j * nm.band_matvec(self.matrix, v.imag)
        else:
            out = nm.band_matvec(self.matrix, v)
        return RadialFunction(self.grid, out / self.grid.weights)

    def factor(self):
        if self._lu is None:
            self._lu = nm.BandedLU(self.matrix)
            if not self.grid.is_mp:
                self.condition = _condition_estimate(self.matrix, self._lu)
        return self._lu


def _condition_estimate(ab: np.ndarray, lu: nm.BandedLU) -> float:
    """1-norm condition estimate of the banded matrix."""
    M = ab.shape[1]
    A = sp_diags([nm.band_diagonal(ab, d) for d in range(-2, 3)], list(range(-2, 3)),
                 shape=(M, M), format="csc")
    Ainv = LinearOperator((M, M), matvec=lu.solve, rmatvec=lu.solve, dtype=float)
    # symmetric matrix: the transpose solve equals the solve
    return float(onenormest(A) * onenormest(Ainv))


def _values(g) -> np.ndarray:
    return g.values if isinstance(g, RadialFunction) else g


def solve_plus(op: LinearizedOperator, g: RadialFunction) -> RadialFunction:
    """f with L+ f = g (radial data, no kernel)."""
    if op.which != "plus":
        raise ValueError("solve_plus needs the L+ operator")
    lu = op.factor()
    if op.condition > COND_LIMIT:
        raise ConditioningError(f"L+ condition estimate {op.condition:.2e} above {COND_LIMIT:.0e}")
    w = op.grid.weights
    rhs = w * _values(g)
    f = lu.solve(rhs)
    if not op.grid.is_mp:
        # one step of iterative refinement
        f = f + lu.solve(rhs - nm.band_matvec(op.matrix, f))
    return RadialFunction(op.grid, f)


@dataclass(eq=False)
class _BorderedMinus:
    """Precomputed pieces of the bordered L- solve.

    B has Q in its kernel; B' = B + d e_0 e_0^T is invertible.  The system
    B f + kappa W Q = W g, (f, Q) = 0 is solved through B' and a 2x2 system
    in (kappa, f_0).
    """

    lu: object
    p: np.ndarray
    q: np.ndarray
    delta: object


def _bordered(op: LinearizedOperator) -> _BorderedMinus:
    key = "_bordered"
    cached = getattr(op, key, None)
    if cached is not None:
        return cached
    B = op.matrix.copy()
    delta = B[2, 0]
    B[2, 0] = B[2, 0] + delta
    lu = nm.BandedLU(B)
    g = op.grid
    Q = op.bundle.Q.values
    p = lu.solve(g.weights * Q)
    e0 = nm.zeros_like(Q) if g.is_mp else np.zeros(g.M)
    e0[0] = delta
    q = lu.solve(e0)
    out = _BorderedMinus(lu, p, q, delta)
    setattr(op, key, out)
    return out


def _bordered_solve(op: LinearizedOperator, gv: np.ndarray):
    """(f, kappa) with B f + kappa W Q = W g and (f, Q) = 0."""
    grid = op.grid
    bd = _bordered(op)
    a = bd.lu.solve(grid.weights * gv)
    w = grid.weights
    Qv = op.bundle.Q.values
    # unknowns (kappa, f0): f = a - kappa p + f0 q
    aQ, pQ, qQ = nm.total(w * a * Qv), nm.total(w * bd.p * Qv), nm.total(w * bd.q * Qv)
    # f0 = a0 - kappa p0 + f0 q0 ; 0 = aQ - kappa pQ + f0 qQ
    m11, m12, r1 = bd.p[0], 1 - bd.q[0], a[0]
    m21, m22, r2 = pQ, -qQ, aQ
    det = m11 * m22 - m12 * m21
    kappa = (r1 * m22 - m12 * r2) / det
    f0 = (m11 * r2 - m21 * r1) / det
    return a - kappa * bd.p + f0 * bd.q, kappa


def solve_minus(op: LinearizedOperator, g: RadialFunction, tol: float = 1e-6,
                return_multiplier: bool = False):
    """f with L- f = g and (f, Q) = 0; rejects g with (g, Q) too large.

    The multiplier kappa = (g, Q)/(Q, Q) measured by the bordered system is
    returned on request; it is the compatibility defect of g.
    """
    if op.which != "minus":
        raise ValueError("solve_minus needs the L- operator")
    grid = op.grid
    Q = op.bundle.Q
    gv = _values(g)
    gf = RadialFunction(grid, gv)
    overlap = inner(gf, Q)
    scale = norm(gf) * norm(Q)
    if abs(float(overlap)) > tol * float(scale) and float(scale) > 0:
        raise SolvabilityError(float(overlap), tol * float(scale))
    f, kappa = _bordered_solve(op, gv)
    if not grid.is_mp:
        # one step of iterative refinement on the bordered system
        r = gv - nm.band_matvec(op.matrix, f) / grid.weights - kappa * Q.values
        df, dk = _bordered_solve(op, r)
        f, kappa = f + df, kappa + dk
    out = RadialFunction(grid, f)
    return (out, kappa) if return_multiplier else out


@dataclass(eq=False)
class LinearizedPair:
    """L+, L-, rho = L+^{-1}(r^2 Q) and the discrete Lambda Q = -2 L+^{-1} Q."""

    bundle: GroundStateBundle
    plus: LinearizedOperator = field(init=False)
    minus: LinearizedOperator = field(init=False)
    rho: RadialFunction = field(init=False)
    lambda_Q: RadialFunction = field(init=False)

    def __post_init__(self):
        self.plus = LinearizedOperator("plus", self.bundle)
        self.minus = LinearizedOperator("minus", self.bundle)
        Q = self.bundle.Q
        r = Q.grid.nodes
        self.rho = solve_plus(self.plus, Q * (r * r))
        self.lambda_Q = solve_plus(self.plus, Q * (-2))


def identity_table(pair: LinearizedPair) -> dict:
    """Residuals of the four operator identities and the rho pairing."""
    Q = pair.bundle.Q
    r = Q.grid.nodes
    r2Q = Q * (r * r)
    LQ = lambda_op(Q)
    nQ = float(norm(Q))
    rows = {
        "L-Q": float(norm(pair.minus.apply(Q))),
        "L+(LambdaQ)+2Q": float(norm(pair.plus.apply(LQ) + Q * 2)),
        "L-(r^2Q)+4LambdaQ": float(norm(pair.minus.apply(r2Q) + LQ * 4)),
        "L+rho-r^2Q": float(norm(pair.plus.apply(pair.rho) - r2Q)),
    }
    Qrho = float(inner(Q, pair.rho))
    v2 = float(pair.bundle.virial2)
    v4 = float(pair.bundle.virial4)
    table = {
        "norm_Q": nQ,
        "residuals": rows,
        "relative": {k: v / nQ for k, v in rows.items()},
        "(Q,rho)": Qrho,
        "half_virial2": v2 / 2,
        "half_virial4": v4 / 2,
        "rel_defect_vs_half_virial2": abs(Qrho - v2 / 2) / (v2 / 2),
        "rel_defect_vs_half_virial4": abs(Qrho - v4 / 2) / (v4 / 2),
        "self_adjoint_defect": _self_adjoint_defect(pair),
        "condition_plus": pair.plus.condition,
    }
    return table


def _self_adjoint_defect(pair: LinearizedPair) -> float:
    Q = pair.bundle.Q
    r = Q.grid.nodes
    u = RadialFunction(Q.grid, nm.to_float(np.exp(-nm.to_float(r) ** 2)))
    v = RadialFunction(Q.grid, nm.to_float(Q.values) * (1 + nm.to_float(r)))
    if Q.grid.is_mp:
        return float("nan")
    worst = 0.0
    for op in (pair.plus, pair.minus):
        a = inner(op.apply(u), v)
        b = inner(u, op.apply(v))
        worst = max(worst, abs(a - b) / max(abs(a), abs(b)))
    return worst


# ---------------------------------------------------------------------------
# coercivity

def _h1_gram(grid) -> np.ndarray:
    """Dense matrix of the H^1 form, W - S."""
    M = grid.M
    G = -_dense(grid.stiffness)
    G[np.diag_indices(M)] += nm.to_float(grid.weights)
    return G


def _dense(ab: np.ndarray) -> np.ndarray:
    M = ab.shape[1]
    A = np.zeros((M, M))
    ab = nm.to_float(ab) if ab.dtype == object else ab
    for d in range(-2, 3):
        A += np.diag(nm.band_diagonal(ab, d), d)
    return A


def _constrained_min(B: np.ndarray, G: np.ndarray, C: np.ndarray | None) -> float:
    """Smallest eigenvalue of B v = mu G v on {v : C^T v = 0}."""
    if C is not None and C.size:
        Z = null_space(C.T)
        B, G = Z.T @ B @ Z, Z.T @ G @ Z
    return float(eigh(B, G, eigvals_only=True, subset_by_index=[0, 0])[0])


def coercivity_mu(pair: LinearizedPair, constraints: tuple[str, ...] = ("Q", "r2Q", "rho"),
                  max_nodes: int = 2500) -> dict:
    """Smallest H^1-normalized constrained Rayleigh quotients of L+ and L-.

    Real parts are constrained against Q and r^2 Q, imaginary parts against
    rho, according to ``constraints``.  Dense eigensolve; keep the grid at
    a few thousand nodes.
    """
    g = pair.bundle.grid
    if g.M > max_nodes:
        raise ValueError(f"coercivity eigensolve limited to {max_nodes} nodes, grid has {g.M}")
    w = nm.to_float(g.weights)
    Q = nm.to_float(pair.bundle.Q.values)
    r = nm.to_float(g.nodes)
    G = _h1_gram(g)
    Bp = _dense(pair.plus.matrix)
    Bm = _dense(pair.minus.matrix)
    cp = [c for c, name in ((w * Q, "Q"), (w * r * r * Q, "r2Q")) if name in constraints]
    cm = [w * nm.to_float(pair.rho.values)] if "rho" in constraints else []
    mu_plus = _constrained_min(Bp, G, np.column_stack(cp) if cp else None)
    mu_minus = _constrained_min(Bm, G, np.column_stack(cm) if cm else None)
    return {"mu_plus": mu_plus, "mu_minus": mu_minus, "mu": min(mu_plus, mu_minus)}
