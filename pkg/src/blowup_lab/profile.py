"""Recursive blow-up profile P(lambda, b) and its residual.

P = Q + sum_{j+k <= K+K'} b^{2j} lambda^{(k+1) alpha} (P+_{jk} + i b P-_{jk}),
theta = sum b^{2j} lambda^{(k+1) alpha} beta_{jk}.

Plugging the ansatz into

    i dP/ds + Lap P - P + f(P) + lambda^alpha r^{-2 sigma} P + theta r^2/4 P

with lambda_s = -b lambda, b_s = -b^2 + theta, and collecting the monomial
b^{2j} L^{k+1} (real part) and b^{2j+1} L^{k+1} (imaginary part), with
L = lambda^alpha, gives for every index

    L+ P+ = G+ + beta r^2 Q / 4 + c+ Q
    L- P- = G- - ((k+1) alpha + 2j) P+

where G+- involve lower levels j + k and, through the b_s = theta term of
dP/ds, the index (j + 1, k - 1) of the same level.  Increasing k, then
increasing j, is therefore an admissible order.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import _numerics as nm
from .ground_state import GroundStateBundle, energy, solve_ground_state
from .linops import LinearizedPair, solve_minus, solve_plus
from .radial import RadialFunction, RadialGrid, inner, norm
from .series import FormalSeries, nonlinearity_series

log = logging.getLogger(__name__)


class ProfileError(RuntimeError):
    pass


def series_indices(n: int) -> list[tuple[int, int]]:
    """(j, k) with j + k <= n, ordered by increasing k, then increasing j."""
    return [(j, k) for k in range(n + 1) for j in range(n + 1 - k)]


def _native(grid: RadialGrid, x):
    return nm.mpf(repr(float(x))) if grid.is_mp else float(x)


@dataclass(eq=False)
class ProfileExpansion:
    """Solved family {P+-_{jk}, beta_{jk}, c+-_{jk}} with its diagnostics."""

    bundle: GroundStateBundle
    sigma: float
    K: int
    Kprime: int
    Pjk_plus: dict = field(default_factory=dict)
    Pjk_minus: dict = field(default_factory=dict)
    beta: dict = field(default_factory=dict)
    cplus: dict = field(default_factory=dict)
    cminus: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    pair: LinearizedPair | None = field(default=None, repr=False)

    @property
    def alpha(self) -> float:
        return 2.0 - 2.0 * self.sigma

    @property
    def grid(self) -> RadialGrid:
        return self.bundle.grid

    @property
    def order(self) -> int:
        return self.K + self.Kprime

    @property
    def indices(self) -> list[tuple[int, int]]:
        return [ix for ix in series_indices(self.order) if ix in self.Pjk_plus]

    def beta00_formula(self) -> float:
        """4 sigma ||r^{-sigma} Q||^2 / ||r Q||^2."""
        b = self.bundle
        return float(4 * self.sigma * nm.to_float(b.inv_sigma2) / nm.to_float(b.virial2))

    def max_residual(self, relative: bool = False) -> float:
        """Largest system residual, absolute or scaled by max(1, ||P||)."""
        keys = ("plus_rel", "minus_rel") if relative else ("plus", "minus")
        return max(max(v[k] for k in keys) for v in self.residuals.values())

    # -- series views ------------------------------------------------------
    def series(self, max_weight2: int | None = None) -> tuple[FormalSeries, FormalSeries]:
        """(P, theta) as formal series in b and L = lambda^alpha."""
        W2 = 2 * self.order + 3 if max_weight2 is None else max_weight2
        P = FormalSeries({(0, 0): (self.bundle.Q.values, None)}, W2)
        th = FormalSeries(None, W2)
        for (j, k) in self.indices:
            P._accumulate((2 * j, k + 1), self.Pjk_plus[j, k].values, None)
            P._accumulate((2 * j + 1, k + 1), None, self.Pjk_minus[j, k].values)
            th._accumulate((2 * j, k + 1), self.beta[j, k], None)
        return P, th

    def Theta_series(self, max_weight2: int | None = None) -> FormalSeries:
        W2 = 2 * self.order + 3 if max_weight2 is None else max_weight2
        out = FormalSeries(None, W2)
        for ix, c in self.cplus.items():
            j, k = ix
            if c != 0:
                out._accumulate((2 * j, k + 1), c, None)
        return out

    def in_range_defect(self) -> float:
        """Largest L2 norm of the profile operator's in-range coefficients.

        Rebuilds the whole series from the stored solution, so it checks the
        recursion independently of the per-level bookkeeping.
        """
        P, th = self.series()
        E = profile_operator_series(P, th, self.grid, self.sigma, self.alpha)
        E = E + self.Theta_series() * FormalSeries({(0, 0): (self.bundle.Q.values, None)},
                                                   P.max_weight2)
        worst = 0.0
        for key, (re, im) in E:
            if key == (0, 0):
                continue
            for part in (re, im):
                if part is not None and not np.isscalar(part):
                    worst = max(worst, float(norm(RadialFunction(self.grid, part))))
        return worst

    # -- persistence -------------------------------------------------------
    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"grid": self.grid.header(), "sigma": self.sigma, "K": self.K,
                "Kprime": self.Kprime, "alpha": self.alpha, "indices": [],
                "beta00_formula": self.beta00_formula()}
        for (j, k) in self.indices:
            stem = f"P_{j}_{k}"
            _float_function(self.Pjk_plus[j, k]).save(d / f"{stem}_plus")
            _float_function(self.Pjk_minus[j, k]).save(d / f"{stem}_minus")
            meta["indices"].append({"j": j, "k": k, "beta": float(self.beta[j, k]),
                                    "cplus": float(self.cplus[j, k]),
                                    "cminus": float(self.cminus[j, k]),
                                    "residuals": self.residuals[j, k]})
        path = d / "profile.json"
        path.write_text(json.dumps(meta, indent=2))
        return path


def load_expansion(directory) -> ProfileExpansion:
    """Inverse of ``ProfileExpansion.save`` (float64).

    Q and the linearized pair are recomputed on the stored grid, which is
    deterministic; the coefficient functions and constants are read back.
    """
    d = Path(directory)
    meta = json.loads((d / "profile.json").read_text())
    head = meta["grid"]
    grid = RadialGrid(head["N"], head["h"], head["R_max"])
    bundle = solve_ground_state(grid, sigma=meta["sigma"])
    exp = ProfileExpansion(bundle=bundle, sigma=meta["sigma"], K=meta["K"],
                           Kprime=meta["Kprime"], pair=LinearizedPair(bundle))
    for item in meta["indices"]:
        ix = (item["j"], item["k"])
        for part, store in (("plus", exp.Pjk_plus), ("minus", exp.Pjk_minus)):
            f = RadialFunction.load(d / f"P_{ix[0]}_{ix[1]}_{part}")
            store[ix] = RadialFunction(grid, f.values.real.copy())
        exp.beta[ix] = item["beta"]
        exp.cplus[ix] = item["cplus"]
        exp.cminus[ix] = item["cminus"]
        exp.residuals[ix] = item["residuals"]
    return exp


def _float_function(f: RadialFunction) -> RadialFunction:
    if not f.grid.is_mp:
        return f
    return RadialFunction(f.grid.to_float(), nm.to_float(f.values))


# ---------------------------------------------------------------------------
# the profile operator on series

def profile_operator_series(P: FormalSeries, theta: FormalSeries, grid: RadialGrid,
                            sigma: float, alpha) -> FormalSeries:
    """Series of i dP/ds + Lap P - P + f(P) + L r^{-2 sigma} P + theta r^2/4 P."""
    N = grid.dimension
    a = _native(grid, alpha)
    V = grid.potential(sigma)
    quarter_r2 = grid.nodes * grid.nodes / 4
    iD = P.flow_derivative(theta, a).times_i()
    lap = P.map(grid.apply_laplacian)
    f = nonlinearity_series(P, N)
    pot = P.scale(V).shift(0, 1)
    th = theta * P.scale(quarter_r2)
    return iD + lap - P + f + pot + th


# ---------------------------------------------------------------------------
# recursion

def _origin_zero_tol(v: np.ndarray) -> float:
    return 1e-12 * max(1.0, float(np.max(np.abs(nm.to_float(v)))))


def build_expansion(bundle: GroundStateBundle, sigma: float, K: int = 2, Kprime: int = 1,
                    tol: float = 1e-7) -> ProfileExpansion:
    """Solve every system with j + k <= K + K'.

    ``tol`` bounds the residuals scaled by max(1, ||P||); the coefficients
    grow quickly with the index, so float64 absolute residuals of the top
    systems sit near eps ||L|| ||P||.

    c+ selection (origin proxy r_1): 0 for j + k <= K; for j + k = K + 1 it
    is 0 unless the unshifted P+ vanishes at r_1, then 1; beyond, it is
    chosen so that P+(r_1) = 0.  c- makes P-(r_1) = 0, except at
    j + k = K + 1 where it is 0 (or 1 if P-(r_1) already vanishes).
    """
    grid = bundle.grid
    N = grid.dimension
    if N not in (1, 2):
        raise ValueError("the profile expansion needs N in {1, 2} (polynomial nonlinearity)")
    if not (0 < sigma < min(N / 2, 1)):
        raise ValueError(f"sigma must lie in (0, min(N/2, 1)), got {sigma}")
    if K < 0 or Kprime < 0:
        raise ValueError("K and K' must be nonnegative")
    exp = ProfileExpansion(bundle, sigma, K, Kprime)
    pair = LinearizedPair(bundle)
    exp.pair = pair
    Q = bundle.Q
    r = grid.nodes
    r2Q = Q * (r * r / 4)
    R = pair.rho * (_native(grid, 0.25))
    LQ = pair.lambda_Q
    a = _native(grid, exp.alpha)
    zero = _native(grid, 0)
    one = _native(grid, 1)

    for (j, k) in series_indices(exp.order):
        n = j + k
        P, th = exp.series(2 * n + 3)
        E = profile_operator_series(P, th, grid, sigma, exp.alpha)
        Gp = E.get((2 * j, k + 1))[0]
        Gm = E.get((2 * j + 1, k + 1))[1]
        Gp = nm.zeros_like(Q.values) if Gp is None else Gp
        Gm = nm.zeros_like(Q.values) if Gm is None else Gm
        cc = (k + 1) * a + 2 * j
        A = solve_plus(pair.plus, RadialFunction(grid, Gp))
        # P+ = U + beta V, with the c+ shift folded in
        if n <= K:
            U, V, cplus_of = A, R, (lambda beta: zero)
        elif n == K + 1:
            trial = A + R * _beta_plain(Gm, A, R, Q, cc)
            if abs(float(trial.values[0])) < _origin_zero_tol(trial.values):
                U, V, cplus_of = A - LQ * (one / 2), R, (lambda beta: one)
            else:
                U, V, cplus_of = A, R, (lambda beta: zero)
        else:
            l0 = LQ.values[0]
            U = A - LQ * (A.values[0] / l0)
            V = R - LQ * (R.values[0] / l0)
            a0, r0 = A.values[0], R.values[0]
            cplus_of = (lambda beta, a0=a0, r0=r0, l0=l0: 2 * (a0 + beta * r0) / l0)
        GmQ = inner(RadialFunction(grid, Gm), Q)
        den = cc * inner(V, Q)
        beta = (GmQ - cc * inner(U, Q)) / den
        Pp = U + V * beta
        cplus = cplus_of(beta)
        rhs_m = RadialFunction(grid, Gm) - Pp * cc
        Pm = solve_minus(pair.minus, rhs_m, tol=max(tol, 1e-6))
        if n == K + 1:
            cminus = one if abs(float(Pm.values[0])) < _origin_zero_tol(Pm.values) else zero
        else:
            cminus = Pm.values[0] / Q.values[0]
        Pm = Pm - Q * cminus
        res_p = pair.plus.apply(Pp) - RadialFunction(grid, Gp) - r2Q * beta - Q * cplus
        res_m = pair.minus.apply(Pm) - rhs_m
        solv = float(inner(rhs_m, Q)) / max(float(norm(rhs_m) * norm(Q)), 1e-300)
        rp, rm = float(norm(res_p)), float(norm(res_m))
        exp.residuals[j, k] = {"plus": rp, "minus": rm, "solvability": abs(solv),
                               "plus_rel": rp / max(1.0, float(norm(Pp))),
                               "minus_rel": rm / max(1.0, float(norm(Pm)))}
        worst = max(exp.residuals[j, k]["plus_rel"], exp.residuals[j, k]["minus_rel"])
        if worst > tol:
            raise ProfileError(f"system ({j},{k}) residual {exp.residuals[j, k]} above {tol:.1e}")
        exp.Pjk_plus[j, k] = Pp
        exp.Pjk_minus[j, k] = Pm
        exp.beta[j, k] = beta
        exp.cplus[j, k] = cplus
        exp.cminus[j, k] = cminus
        log.debug("index (%d,%d): beta=%.10g c+=%g c-=%g", j, k, float(beta),
                  float(cplus), float(cminus))
    return exp


def _beta_plain(Gm, A, R, Q, cc):
    grid = Q.grid
    return (inner(RadialFunction(grid, Gm), Q) - cc * inner(A, Q)) / (cc * inner(R, Q))


# ---------------------------------------------------------------------------
# assembly and residual

def _check_size(lam, b):
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if lam + abs(b) > 0.5:
        warnings.warn(f"lambda + |b| = {lam + abs(b):.3g} is outside the small-parameter regime",
                      RuntimeWarning, stacklevel=3)


def _assemble_parts(exp: ProfileExpansion, lam, b):
    """(re, im, re_lambda, im_lambda, re_b, im_b) of P, dP/dlambda, dP/db."""
    g = exp.grid
    lam, b = _native(g, lam), _native(g, b)
    a = _native(g, exp.alpha)
    L = lam ** a if lam != 0 else lam * 0
    re = exp.bundle.Q.values.copy()
    im = nm.zeros_like(re) if g.is_mp else np.zeros(g.M)
    re_l, im_l = im * 0, im * 0
    re_b, im_b = im * 0, im * 0
    for (j, k) in exp.indices:
        Pp, Pm = exp.Pjk_plus[j, k].values, exp.Pjk_minus[j, k].values
        Lk = L ** (k + 1)
        b2j = b ** (2 * j)
        re = re + (b2j * Lk) * Pp
        im = im + (b2j * b * Lk) * Pm
        if lam != 0:
            dL = (k + 1) * a * Lk / lam
            re_l = re_l + (b2j * dL) * Pp
            im_l = im_l + (b2j * b * dL) * Pm
        if j > 0:
            re_b = re_b + (2 * j * b ** (2 * j - 1) * Lk) * Pp
        im_b = im_b + ((2 * j + 1) * b2j * Lk) * Pm
    return re, im, re_l, im_l, re_b, im_b


def assemble_P(exp: ProfileExpansion, lam: float, b: float) -> RadialFunction:
    """P(lambda, b) as a complex float grid function."""
    _check_size(lam, b)
    re, im = _assemble_parts(exp, lam, b)[:2]
    grid = exp.grid.to_float()
    return RadialFunction(grid, nm.to_float(re) + 1j * nm.to_float(im))


def assemble_theta(exp: ProfileExpansion, lam: float, b: float):
    L = _native(exp.grid, lam) ** _native(exp.grid, exp.alpha)
    bb = _native(exp.grid, b)
    return sum(exp.beta[j, k] * bb ** (2 * j) * L ** (k + 1) for (j, k) in exp.indices)


def assemble_Theta(exp: ProfileExpansion, lam: float, b: float):
    L = _native(exp.grid, lam) ** _native(exp.grid, exp.alpha)
    bb = _native(exp.grid, b)
    return sum(exp.cplus[j, k] * bb ** (2 * j) * L ** (k + 1) for (j, k) in exp.indices)


def residual_Psi(exp: ProfileExpansion, lam: float, b: float, dlds: float | None = None,
                 dbds: float | None = None, dgds: float = 1.0,
                 eps_prime: float = 0.1) -> tuple[RadialFunction, float]:
    """Psi = i P_s + Lap P - gamma_s P + f(P) + lambda^alpha r^{-2 sigma} P + theta r^2/4 P.

    P_s = P_lambda lambda_s + P_b b_s.  The defaults lambda_s = -b lambda and
    b_s = -b^2 + theta are the unmodulated flow.  Returns Psi (complex
    float) and ||exp(eps' r) Psi||_{H^1}, evaluated in the grid precision.
    """
    g = exp.grid
    N = g.dimension
    nat = lambda x: _native(g, x)  # noqa: E731
    lam_n, b_n = nat(lam), nat(b)
    theta = assemble_theta(exp, lam, b) if exp.indices else nat(0)
    dlds = -b_n * lam_n if dlds is None else nat(dlds)
    dbds = -b_n * b_n + theta if dbds is None else nat(dbds)
    re, im, re_l, im_l, re_b, im_b = _assemble_parts(exp, lam, b)
    X = re_l * dlds + re_b * dbds
    Y = im_l * dlds + im_b * dbds
    a2 = re * re + im * im
    fp = a2 if N == 2 else a2 * a2
    V = g.potential(exp.sigma)
    L = lam_n ** nat(exp.alpha)
    mult = fp - nat(dgds) + L * V + theta * g.nodes * g.nodes / 4
    psi_re = -Y + g.apply_laplacian(re) + mult * re
    psi_im = X + g.apply_laplacian(im) + mult * im
    wt = nm.exp(g.nodes * nat(eps_prime))
    gr, gi = psi_re * wt, psi_im * wt
    h1 = g.integrate(gr * gr + gi * gi) + g.dirichlet(gr) + g.dirichlet(gi)
    value = float(h1) ** 0.5 if float(h1) > 0 else 0.0
    Psi = RadialFunction(g.to_float(), nm.to_float(psi_re) + 1j * nm.to_float(psi_im))
    return Psi, value


def profile_mass_energy(exp: ProfileExpansion, lam: float, b: float, gamma: float = 0.0,
                        renormalize: bool = False):
    """||P_{lambda,b,gamma}||^2 and E(P_{lambda,b,gamma}) for the attractive equation.

    In rescaled variables u = lambda^{-N/2} P(y) exp(-i b y^2/4 + i gamma), so
    E(u) = lambda^{-2} [E_crit(v) - lambda^alpha/2 ||y^{-sigma} v||^2] with
    v = P exp(-i b y^2/4); gamma drops out.  ``renormalize`` subtracts the
    O(h^4) critical energy of the discrete ground state, which is zero in
    the continuum but dominates lambda^2 E once lambda is tiny.
    """
    g = exp.grid
    re, im = _assemble_parts(exp, lam, b)[:2]
    re, im = nm.to_float(re), nm.to_float(im)
    gf = g.to_float()
    r = nm.to_float(g.nodes)
    v = (re + 1j * im) * np.exp(-1j * b * r * r / 4 + 1j * gamma)
    u = RadialFunction(gf, v)
    mass = float(norm(u) ** 2)
    a2 = re * re + im * im
    pot = float(np.sum(nm.to_float(gf.singular_weights(exp.sigma)) * a2))
    ecrit = float(energy(u))
    if renormalize:
        ecrit -= ground_energy(exp)
    e = (ecrit - lam ** exp.alpha * pot / 2) / lam ** 2
    return mass, e


def ground_energy(exp: ProfileExpansion) -> float:
    """E_crit of the discrete ground state (cached)."""
    key = "ground_energy"
    if key not in exp.bundle.extras:
        Q = exp.bundle.Q
        exp.bundle.extras[key] = float(energy(_float_function(Q)))
    return exp.bundle.extras[key]


def energy_expansion_defect(exp: ProfileExpansion, lam: float, b: float,
                            renormalize: bool = False) -> float:
    """8 E(P) - ||rQ||^2 (b^2/lambda^2 - 2 beta/(2 - alpha) lambda^{alpha-2})."""
    _, e = profile_mass_energy(exp, lam, b, renormalize=renormalize)
    beta = float(exp.beta[0, 0])
    a = exp.alpha
    v2 = float(exp.bundle.virial2)
    return 8 * e - v2 * (b * b / lam ** 2 - 2 * beta / (2 - a) * lam ** (a - 2))


class ProfileBuilder(BaseEstimator):
    """Estimator wrapper around ``build_expansion``.

    ``fit`` solves the ground state (unless a bundle is given) and the
    systems; ``transform`` maps rows (lambda, b) to profiles P.
    """

    def __init__(self, dim: int = 2, sigma: float = 0.3, K: int = 2, Kprime: int = 1,
                 h: float = 0.01, r_max: float = 30.0, precision: int | None = None,
                 tol: float = 1e-7):
        self.dim = dim
        self.sigma = sigma
        self.K = K
        self.Kprime = Kprime
        self.h = h
        self.r_max = r_max
        self.precision = precision
        self.tol = tol

    def fit(self, X=None, y=None, bundle: GroundStateBundle | None = None):
        if bundle is None:
            grid = RadialGrid(self.dim, self.h, self.r_max, self.precision)
            bundle = solve_ground_state(grid, sigma=self.sigma)
        self.expansion_ = build_expansion(bundle, self.sigma, self.K, self.Kprime, self.tol)
        self.beta_ = float(self.expansion_.beta[0, 0])
        return self

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([assemble_P(self.expansion_, lam, b).values for lam, b in X])
