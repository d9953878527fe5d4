"""Approximate blow-up laws, the F integral, initial parameters and rate constants.

With alpha = 2 - 2 sigma and c = 2 beta / (2 - alpha):

    lambda_app(s) = A s^{-2/alpha},  A = ((alpha/2) sqrt(c))^{-2/alpha}
    b_app(s) = 2 / (alpha s)

solve b_s + b^2 - beta lambda^alpha = 0, b + lambda_s/lambda = 0.  Since
dt = lambda^2 ds, |t(s)| = curlyC s^{-(4-alpha)/alpha} with
curlyC = alpha/(4-alpha) A^2, which turns into lambda = C_lambda |t|^{2/(4-alpha)},
b = C_b |t|^{alpha/(4-alpha)}.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .profile import ProfileExpansion, profile_mass_energy


class LawError(ValueError):
    pass


@dataclass(frozen=True)
class LawConstants:
    sigma: float
    alpha: float
    beta: float
    curlyC: float
    C_lambda: float
    C_b: float
    lambda0: float
    C0: float
    E0: float

    @classmethod
    def from_inputs(cls, sigma: float, beta: float, virial2: float, E0: float = 0.0,
                    lambda0: float = 0.1) -> "LawConstants":
        """Constants from sigma, beta = beta_00, ||rQ||^2 and the energy level."""
        if not 0 < sigma < 1:
            raise LawError(f"sigma must lie in (0, 1), got {sigma}")
        if beta <= 0:
            raise LawError(f"beta must be positive, got {beta}")
        if not 0 < lambda0 < 1:
            raise LawError("lambda0 must lie in (0, 1)")
        alpha = 2.0 - 2.0 * sigma
        c = 2 * beta / (2 - alpha)
        C0 = 8 * E0 / virial2
        if c + C0 * lambda0 ** (2 - alpha) <= 0:
            raise LawError("2 beta/(2 - alpha) + C0 lambda0^(2 - alpha) must be positive; "
                           "lower lambda0 or raise E0")
        A = ((alpha / 2) * math.sqrt(c)) ** (-2 / alpha)
        curlyC = alpha / (4 - alpha) * A * A
        C_lambda = curlyC ** (-2 / (4 - alpha)) * A
        C_b = (2 / alpha) * curlyC ** (-alpha / (4 - alpha))
        return cls(sigma, alpha, beta, curlyC, C_lambda, C_b, lambda0, C0, E0)

    @classmethod
    def from_expansion(cls, exp: ProfileExpansion, E0: float = 0.0,
                       lambda0: float = 0.1) -> "LawConstants":
        return cls.from_inputs(exp.sigma, float(exp.beta[0, 0]), float(exp.bundle.virial2),
                               E0, lambda0)

    @property
    def c(self) -> float:
        """2 beta / (2 - alpha)."""
        return 2 * self.beta / (2 - self.alpha)

    @property
    def A(self) -> float:
        return ((self.alpha / 2) * math.sqrt(self.c)) ** (-2 / self.alpha)

    @property
    def lambda_exponent(self) -> float:
        return 2 / (4 - self.alpha)

    @property
    def b_exponent(self) -> float:
        return self.alpha / (4 - self.alpha)

    def as_dict(self) -> dict:
        return asdict(self)


def _positive(s, name="s"):
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise LawError(f"{name} must be positive")
    return s


def lambda_app(s, lc: LawConstants):
    s = _positive(s)
    return lc.A * s ** (-2 / lc.alpha)


def b_app(s, lc: LawConstants):
    s = _positive(s)
    return 2 / (lc.alpha * s)


def law_ode_residuals(s: float, lc: LawConstants, ds: float | None = None) -> tuple[float, float]:
    """Centered-difference residuals of b' + b^2 - beta lambda^alpha and b + lambda'/lambda."""
    ds = 1e-4 * s if ds is None else ds
    lam, b = float(lambda_app(s, lc)), float(b_app(s, lc))
    db = (float(b_app(s + ds, lc)) - float(b_app(s - ds, lc))) / (2 * ds)
    dlog = (math.log(lambda_app(s + ds, lc)) - math.log(lambda_app(s - ds, lc))) / (2 * ds)
    return db + b * b - lc.beta * lam ** lc.alpha, b + dlog


# ---------------------------------------------------------------------------
# the F integral and initial parameters

def F_integral(lam: float, lc: LawConstants) -> float:
    """int_lambda^lambda0 dmu / (mu^{alpha/2+1} sqrt(c + C0 mu^{2-alpha})).

    Integrated in x = log mu, where the integrand is smooth.
    """
    if not 0 < lam <= lc.lambda0:
        raise LawError(f"need 0 < lambda <= lambda0 = {lc.lambda0}")
    if lam == lc.lambda0:
        return 0.0
    a, c, C0 = lc.alpha, lc.c, lc.C0

    def f(x):
        mu = math.exp(x)
        rad = c + C0 * mu ** (2 - a)
        if rad <= 0:
            raise LawError("negative radicand in the F integrand")
        return mu ** (-a / 2) / math.sqrt(rad)

    val, err = quad(f, math.log(lam), math.log(lc.lambda0), epsabs=0.0, epsrel=1e-13,
                    limit=200)
    if err > 1e-10 * abs(val):
        raise LawError(f"F quadrature error estimate {err:.2e} too large")
    return val


def F_leading(lam: float, lc: LawConstants) -> float:
    """2 / (alpha lambda^{alpha/2} sqrt(c))."""
    return 2 / (lc.alpha * lam ** (lc.alpha / 2) * math.sqrt(lc.c))


def solve_F(s1: float, lc: LawConstants) -> float:
    """lambda1 with F(lambda1) = s1: bracketed root, then one Newton polish."""
    if s1 <= 0:
        raise LawError("s1 must be positive")
    lo = min(lc.lambda0 / 2, (2 / (lc.alpha * s1 * math.sqrt(lc.c))) ** (2 / lc.alpha))
    for _ in range(200):
        if F_integral(lo, lc) > s1:
            break
        lo /= 2
    else:
        raise LawError("no bracket for F(lambda) = s1")
    g = lambda x: F_integral(min(math.exp(x), lc.lambda0), lc) - s1  # noqa: E731
    x = brentq(g, math.log(lo), math.log(lc.lambda0), xtol=1e-15, rtol=1e-15, maxiter=200)
    lam = math.exp(x)
    # dF/dlambda = -integrand(lambda)
    dF = -lam ** (-lc.alpha / 2 - 1) / math.sqrt(lc.c + lc.C0 * lam ** (2 - lc.alpha))
    step = (F_integral(lam, lc) - s1) / dF
    if abs(step) < 1e-6 * lam:
        lam -= step
    return lam


def select_initial_params(s1: float, E0: float, exp: ProfileExpansion,
                          lc: LawConstants, renormalize: bool = True) -> tuple[float, float]:
    """(lambda1, b1) with F(lambda1) = s1 and E(P_{lambda1,b1,0}) = E0.

    ``renormalize`` measures the energy relative to the discrete ground
    state (see ``profile_mass_energy``).
    """
    lam1 = solve_F(s1, lc)
    if lam1 >= 0.1:
        raise LawError(f"lambda1 = {lam1:.3g} is not small; increase s1")

    def h(b):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return lam1 ** 2 * (profile_mass_energy(exp, lam1, b, renormalize=renormalize)[1] - E0)

    h0, h1 = h(0.0), h(1.0)
    if not (h0 < 0 < h1):
        raise LawError(f"no energy bracket on b in (0, 1): h(0)={h0:.3e}, h(1)={h1:.3e}")
    b1 = brentq(h, 0.0, 1.0, xtol=1e-15, rtol=1e-15, maxiter=200)
    return lam1, b1


# ---------------------------------------------------------------------------
# time maps

def time_maps(t1: float, lc: LawConstants) -> float:
    """s1 = (|t1| / curlyC)^{-alpha/(4-alpha)}."""
    if t1 >= 0:
        raise LawError("t1 must be negative")
    return (abs(t1) / lc.curlyC) ** (-lc.alpha / (4 - lc.alpha))


def predicted_rates(t, lc: LawConstants):
    """(lambda_pred, b_pred) = (C_lambda |t|^{2/(4-alpha)}, C_b |t|^{alpha/(4-alpha)})."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= 0):
        raise LawError("t must be negative")
    at = np.abs(t)
    return lc.C_lambda * at ** lc.lambda_exponent, lc.C_b * at ** lc.b_exponent


def t_of_s(s: float, s1: float, t1: float, lc: LawConstants) -> float:
    """t1 + int_{s1}^{s} lambda_app^2 by quadrature."""
    val, _ = quad(lambda x: float(lambda_app(x, lc)) ** 2, s1, s, epsabs=0.0, epsrel=1e-13,
                  limit=200)
    return t1 + val
