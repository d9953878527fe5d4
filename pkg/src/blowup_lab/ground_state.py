"""Ground state Q of -Q'' - (N-1)/r Q' + Q - Q^{1+4/N} = 0 and its constants.

Shooting on Q(0) brackets the solution globally; a Newton polish on the
discrete boundary value problem then makes Q an exact zero of the same
discrete operator that the linearized operators and the time stepper use.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from sklearn.base import BaseEstimator

from . import _numerics as nm
from .radial import RadialFunction, RadialGrid, abs2, inner, norm, power_nonlinearity

log = logging.getLogger(__name__)


class GroundStateError(RuntimeError):
    """Shooting bracket missing or Newton divergence."""


def _power(q: np.ndarray, N: int) -> np.ndarray:
    """|q|^{4/N}, exact integer powers for N = 1, 2."""
    if N == 1:
        q2 = q * q
        return q2 * q2
    if N == 2:
        return q * q
    return np.abs(q) ** (4.0 / N) if not nm.is_mp(q) else np.array(
        [abs(x) ** (nm.mpf(4) / 3) for x in q], dtype=object)


# ---------------------------------------------------------------------------
# shooting

def _shoot(a: float, N: int, r_end: float):
    """Integrate from the origin; +1 overshoot (Q hits 0), -1 undershoot."""
    p = 4.0 / N
    if a ** p <= 1.0:
        return -1, None
    r0 = 1e-4
    c = (a - a ** (1 + p)) / (2 * N)
    y0 = [a + c * r0 ** 2, 2 * c * r0]

    def rhs(r, y):
        q, dq = y
        return [dq, -(N - 1) / r * dq + q - np.abs(q) ** p * q]

    def hit_zero(r, y):
        return y[0]
    hit_zero.terminal, hit_zero.direction = True, -1

    def turn_up(r, y):
        return y[1]
    turn_up.terminal, turn_up.direction = True, 1

    sol = solve_ivp(rhs, (r0, r_end), y0, method="DOP853", rtol=1e-12, atol=1e-14,
                    events=(hit_zero, turn_up), dense_output=True)
    if sol.t_events[0].size:
        return 1, sol
    if sol.t_events[1].size:
        return -1, sol
    # no event before r_end: compare with the decaying far-field branch
    q, dq = sol.y[:, -1]
    mismatch = dq / q + 1.0 + (N - 1) / (2 * r_end)
    return (1 if mismatch < 0 else -1), sol


def shoot_ground_state(N: int, r_end: float = 20.0, tol: float = 1e-12):
    """Bracket and bisect Q(0); returns (a, dense solution, scan table)."""
    scan = np.linspace(0.5, 8.0, 76)
    kinds = np.array([_shoot(a, N, r_end)[0] for a in scan])
    flips = np.flatnonzero(np.diff(kinds) != 0)
    if flips.size != 1 or kinds[flips[0]] != -1:
        raise GroundStateError(f"expected a single undershoot/overshoot transition, found {flips.size}")
    lo, hi = scan[flips[0]], scan[flips[0] + 1]
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if _shoot(mid, N, r_end)[0] > 0:
            hi = mid
        else:
            lo = mid
    a = 0.5 * (lo + hi)
    return a, _shoot(lo, N, r_end)[1], (scan, kinds)


def _initial_profile(grid: RadialGrid, a: float, sol) -> np.ndarray:
    r = nm.to_float(grid.nodes)
    N = grid.dimension
    # trust the shot up to where it starts to peel off the decaying branch
    t_end = sol.t[-1]
    r_cut = min(t_end, 12.0)
    q = np.empty_like(r)
    inside = r <= r_cut
    q[inside] = sol.sol(np.maximum(r[inside], sol.t[0]))[0]
    qc = sol.sol(r_cut)[0]
    q[~inside] = qc * (r_cut / r[~inside]) ** ((N - 1) / 2) * np.exp(-(r[~inside] - r_cut))
    return np.abs(q)


def newton_polish(grid: RadialGrid, q: np.ndarray, max_iter: int = 30) -> tuple[np.ndarray, int]:
    """Newton on W(-Lap Q + Q - Q^{1+4/N}) = 0 with the banded Jacobian."""
    N = grid.dimension
    w = grid.weights
    S = grid.stiffness
    # converge to a relative step of `stop`, or until roundoff stagnation
    stop = 1e-13 if not grid.is_mp else 2.0 ** (-0.92 * grid.precision)
    floor = 1e-10 if not grid.is_mp else 2.0 ** (-0.8 * grid.precision)
    prev = np.inf
    for it in range(max_iter):
        qp = _power(q, N)
        F = -nm.band_matvec(S, q) + w * q - w * qp * q
        J = -S.copy()
        J[2] = J[2] + w - (1 + 4 * (nm.mpf(1) / N if grid.is_mp else 1.0 / N)) * w * qp
        dq = nm.BandedLU(J).solve(F)
        q = q - dq
        step = float(max(abs(x) for x in dq) if grid.is_mp else np.max(np.abs(dq)))
        scale = max(1.0, float(q[0]))
        if step < stop * scale or (step < floor * scale and step > 0.5 * prev):
            return q, it + 1
        if not np.isfinite(step) or step > 1e3:
            break
        prev = step
    raise GroundStateError("Newton iteration for the ground state did not converge")


# ---------------------------------------------------------------------------
# functionals

def energy(u: RadialFunction, sigma: float = 0.0, sign: int = 1):
    """E(u) = 1/2 |grad u|^2 - |u|^{2+4/N}/(2+4/N) -+ 1/2 |r^{-sigma} u|^2.

    ``sign`` is the potential sign of the equation (+1 attractive).  With
    sigma = 0 the potential term is dropped, giving the critical energy.
    """
    g = u.grid
    N = g.dimension
    a2 = abs2(u.values)
    grad2 = g.dirichlet(u.values)
    pot = power_integral(u)
    e = grad2 / 2 - pot / (2 + 4 / N if not g.is_mp else 2 + nm.mpf(4) / N)
    if sigma > 0:
        e = e - sign * nm.total(g.singular_weights(sigma) * a2) / 2
    return e


def power_integral(u: RadialFunction):
    """int |u|^{2+4/N}."""
    a2 = abs2(u.values)
    N = u.grid.dimension
    if N == 1:
        dens = a2 * a2 * a2
    elif N == 2:
        dens = a2 * a2
    else:
        dens = a2 ** (1 + 2.0 / N)
    return u.grid.integrate(dens)


def gagliardo_nirenberg_ratio(u: RadialFunction, bundle: "GroundStateBundle") -> float:
    """|u|_{2+4/N}^{2+4/N} / [(1+2/N)(|u|/|Q|)^{4/N} |grad u|^2]; equals 1 at Q."""
    N = u.grid.dimension
    m2 = float(norm(u) ** 2)
    if m2 == 0.0:
        raise ValueError("Gagliardo-Nirenberg ratio of the zero function")
    num = float(power_integral(u))
    den = (1 + 2 / N) * (m2 / float(bundle.mass2)) ** (2 / N) * float(u.grid.dirichlet(u.values))
    return num / den


@dataclass(frozen=True, eq=False)
class GroundStateBundle:
    """Q together with the norms that later stages need."""

    Q: RadialFunction
    sigma: float
    mass2: object
    grad2: object
    virial2: object
    virial4: object
    inv_sigma2: object
    gn_check: float
    residual: float
    shooting_value: float
    newton_iterations: int
    extras: dict = field(default_factory=dict)

    @property
    def grid(self) -> RadialGrid:
        return self.Q.grid

    @property
    def dimension(self) -> int:
        return self.Q.grid.dimension

    def origin_value(self) -> float:
        """Q(0) by even (r^2) extrapolation from the first three nodes."""
        r2 = nm.to_float(self.grid.nodes[:3]) ** 2
        q = nm.to_float(self.Q.values[:3])
        out = 0.0
        for i in range(3):
            lag = 1.0
            for j in range(3):
                if j != i:
                    lag *= r2[j] / (r2[j] - r2[i])
            out += q[i] * lag
        return out

    def summary(self) -> dict:
        f = float
        return {"N": self.dimension, "sigma": self.sigma, "Q0": self.origin_value(),
                "mass2": f(self.mass2), "grad2": f(self.grad2), "virial2": f(self.virial2),
                "virial4": f(self.virial4), "inv_sigma2": f(self.inv_sigma2),
                "gn_check": self.gn_check, "residual": self.residual,
                "critical_energy": f(energy(self.Q)), "newton_iterations": self.newton_iterations}


def equation_residual(Q: RadialFunction) -> float:
    """|| -Lap Q + Q - Q^{1+4/N} ||_2."""
    g = Q.grid
    res = -g.apply_laplacian(Q.values) + Q.values - power_nonlinearity(Q.values, g.dimension)
    return float(norm(RadialFunction(g, res)))


def solve_ground_state(grid: RadialGrid, tol: float = 1e-9, sigma: float = 0.0,
                       start: np.ndarray | None = None) -> GroundStateBundle:
    """Ground state on ``grid`` plus its constants.

    ``sigma`` only selects which ||r^{-sigma} Q||^2 is stored.  ``start``
    skips shooting (used to lift a float solution to higher precision).
    """
    N = grid.dimension
    if start is None:
        a, sol, _ = shoot_ground_state(N, r_end=min(float(grid.r_max), 20.0))
        q = _initial_profile(grid, a, sol)
    else:
        a = float(start[0])
        q = np.asarray(start, dtype=float)
    if grid.is_mp:
        q, it0 = newton_polish(grid.to_float(), q)
        q, it = newton_polish(grid, nm.mp_array(q))
        it += it0
    else:
        q, it = newton_polish(grid, q)
    Q = RadialFunction(grid, q)
    qf = nm.to_float(q)
    if np.any(qf <= 0) or np.any(np.diff(qf) >= 0):
        raise GroundStateError("ground state is not positive and decreasing; enlarge R_max")
    if qf[-1] >= 1e-10:
        raise GroundStateError(f"Q(R_max) = {qf[-1]:.3e} is not below 1e-10; enlarge R_max")
    res = equation_residual(Q)
    if res > tol:
        raise GroundStateError(f"ground state residual {res:.3e} above tolerance {tol:.1e}")
    r = grid.nodes
    mass2 = grid.integrate(q * q)
    bundle = GroundStateBundle(
        Q=Q, sigma=sigma, mass2=mass2, grad2=grid.dirichlet(q),
        virial2=grid.integrate(r * r * q * q), virial4=grid.integrate(r ** 4 * q * q),
        inv_sigma2=(nm.total(grid.singular_weights(sigma) * q * q) if sigma > 0 else mass2),
        gn_check=1.0, residual=res, shooting_value=a, newton_iterations=it)
    object.__setattr__(bundle, "gn_check", gagliardo_nirenberg_ratio(Q, bundle))
    log.info("ground state N=%d: mass2=%.12g, residual=%.2e", N, float(mass2), res)
    return bundle


class GroundStateSolver(BaseEstimator):
    """Estimator wrapper: ``GroundStateSolver(dim=2).fit().bundle_``."""

    def __init__(self, dim: int = 2, h: float = 0.01, r_max: float = 30.0, sigma: float = 0.0,
                 tol: float = 1e-9, precision: int | None = None):
        self.dim = dim
        self.h = h
        self.r_max = r_max
        self.sigma = sigma
        self.tol = tol
        self.precision = precision

    def fit(self, X=None, y=None):
        grid = RadialGrid(self.dim, self.h, self.r_max, self.precision)
        self.bundle_ = solve_ground_state(grid, self.tol, self.sigma)
        self.grid_ = grid
        self.Q_ = self.bundle_.Q
        return self

    def transform(self, X=None):
        """Nodal values of Q (float)."""
        return nm.to_float(self.bundle_.Q.values)
