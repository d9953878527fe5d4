"""Modulation decomposition u -> (lambda, b, gamma, eps), the Mod vector and H, S.

u(x) = lambda^{-N/2} (P_{lambda,b} + eps)(x/lambda) exp(-i b |y|^2/4 + i gamma),
with eps orthogonal to i Lambda P, |y|^2 P and i rho.

eps is stored on the rescaled nodes y_i = r_i / lambda of the state's grid,
so rebuilding u from the decomposition is exact up to roundoff.  Integrals
in y use the x-grid weights divided by lambda^N.  The profile functions live
on their own grid and are evaluated at y_i by even cubic splines.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from sklearn.base import BaseEstimator

from . import _numerics as nm
from .profile import ProfileExpansion, assemble_theta
from .radial import RadialFunction

log = logging.getLogger(__name__)


class DecompositionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# profile evaluation off-grid

class ProfileInterpolant:
    """Even cubic splines of Q, rho and every P+-_{jk} of an expansion."""

    def __init__(self, exp: ProfileExpansion):
        self.exp = exp
        g = exp.grid
        r = nm.to_float(g.nodes)
        self.r_max = float(r[-1])
        self.N = g.dimension
        self.alpha = exp.alpha
        x = np.concatenate([-r[::-1], r])

        def spline(v):
            v = nm.to_float(v.values)
            return CubicSpline(x, np.concatenate([v[::-1], v]))

        self.Q = spline(exp.bundle.Q)
        pair = exp.pair
        self.rho = spline(pair.rho)
        self.terms = [(j, k, spline(exp.Pjk_plus[j, k]), spline(exp.Pjk_minus[j, k]))
                      for (j, k) in exp.indices]

    def evaluate(self, y: np.ndarray, lam: float, b: float):
        """P, Lambda P (complex) and rho at y (zero beyond the profile grid)."""
        inside = y <= self.r_max
        yi = y[inside]
        half_n = self.N / 2
        re = self.Q(yi)
        dre = self.Q(yi, 1)
        im = np.zeros_like(re)
        dim = np.zeros_like(re)
        L = lam ** self.alpha
        for j, k, sp, sm in self.terms:
            c = b ** (2 * j) * L ** (k + 1)
            re = re + c * sp(yi)
            dre = dre + c * sp(yi, 1)
            im = im + c * b * sm(yi)
            dim = dim + c * b * sm(yi, 1)
        P = np.zeros(len(y), dtype=complex)
        LP = np.zeros(len(y), dtype=complex)
        rho = np.zeros(len(y))
        P[inside] = re + 1j * im
        LP[inside] = half_n * (re + 1j * im) + yi * (dre + 1j * dim)
        rho[inside] = self.rho(yi)
        return P, LP, rho


# ---------------------------------------------------------------------------
# states

@dataclass
class ModulationState:
    lam: float
    b: float
    gamma: float
    eps: RadialFunction
    ortho_residuals: tuple
    reconstruction_error: float
    valid: bool = True
    iterations: int = 0
    t: float | None = None
    P: np.ndarray | None = field(default=None, repr=False)

    @property
    def y(self) -> np.ndarray:
        return self.eps.grid.nodes / self.lam

    # y-space integrals
    def y_integrate(self, f: np.ndarray) -> float:
        N = self.eps.grid.dimension
        return float(np.sum(self.eps.grid.weights * f)) / self.lam ** N

    def eps_norms(self) -> dict:
        g = self.eps.grid
        N = g.dimension
        e = self.eps.values
        a2 = e.real ** 2 + e.imag ** 2
        l2 = self.y_integrate(a2)
        grad = float(g.dirichlet(e)) * self.lam ** (2 - N)
        y2 = self.y_integrate(self.y ** 2 * a2)
        return {"L2": math.sqrt(l2), "gradL2": math.sqrt(max(grad, 0.0)),
                "H1": math.sqrt(l2 + grad), "weighted1": math.sqrt(y2)}


@dataclass
class ModVector:
    s: float
    t: float
    m1: float
    m2: float
    m3: float

    @property
    def magnitude(self) -> float:
        return math.sqrt(self.m1 ** 2 + self.m2 ** 2 + self.m3 ** 2)


def _eps(u: np.ndarray, r: np.ndarray, N: int, lam: float, b: float, gamma: float,
         interp: ProfileInterpolant):
    y = r / lam
    P, LP, rho = interp.evaluate(y, lam, b)
    eps = lam ** (N / 2) * u * np.exp(1j * (b * y * y / 4 - gamma)) - P
    return y, eps, P, LP, rho


def _ortho(y, eps, P, LP, rho, w, lam, N) -> np.ndarray:
    """(eps, i Lambda P), (eps, |y|^2 P), (eps, i rho) in y variables."""
    scale = lam ** (-N)

    def ip(f, g):
        return float(np.sum(w * (f * np.conj(g)).real)) * scale

    return np.array([ip(eps, 1j * LP), ip(eps, y * y * P), ip(eps, 1j * rho)])


def initial_guess(u: RadialFunction, grad2_Q: float) -> tuple[float, float, float]:
    """(lambda, b, gamma) from the gradient scale, the virial phase and arg u(r_1)."""
    g = u.grid
    v = u.values
    g2 = float(g.dirichlet(v))
    lam = math.sqrt(grad2_Q / g2)
    r = g.nodes
    dv = g.derivative(v.real) + 1j * g.derivative(v.imag)
    im = float(np.sum(g.weights * (np.conj(v) * r * dv).imag))
    x2 = float(np.sum(g.weights * r * r * (v.real ** 2 + v.imag ** 2)))
    b = -2 * lam * lam * im / x2
    gamma = float(np.angle(v[0]))
    return lam, b, gamma


def decompose(u: RadialFunction, guess: tuple, exp: ProfileExpansion | ProfileInterpolant,
              tol: float = 1e-12, max_iter: int = 50, delta: float = 0.3) -> ModulationState:
    """Newton on the three orthogonality conditions with a forward-difference Jacobian."""
    interp = exp if isinstance(exp, ProfileInterpolant) else ProfileInterpolant(exp)
    g = u.grid
    N = g.dimension
    r = g.nodes
    w = g.weights
    v = u.values.astype(complex)
    x = np.array(guess, dtype=float)
    if x[0] <= 0:
        raise DecompositionError("lambda guess must be positive")
    gamma0 = x[2]

    def F(p):
        return _ortho(*_eps(v, r, N, p[0], p[1], p[2], interp), w, p[0], N)

    Fx = F(x)
    it = 0
    for it in range(1, max_iter + 1):
        steps = np.array([1e-6 * x[0], 1e-6, 1e-6])
        J = np.empty((3, 3))
        for k in range(3):
            xp = x.copy()
            xp[k] += steps[k]
            J[:, k] = (F(xp) - Fx) / steps[k]
        try:
            dx = np.linalg.solve(J, -Fx)
        except np.linalg.LinAlgError as exc:
            raise DecompositionError("singular decomposition Jacobian") from exc
        # keep lambda positive
        while x[0] + dx[0] <= 0.1 * x[0]:
            dx /= 2
        x = x + dx
        Fx = F(x)
        if np.max(np.abs(Fx)) < tol:
            break
    else:
        raise DecompositionError(f"decomposition Newton did not converge in {max_iter} iterations "
                                 f"(residual {np.max(np.abs(Fx)):.2e})")
    lam, b, gamma = x
    # continuous branch: stay within pi of the guess
    gamma = gamma0 + math.remainder(gamma - gamma0, 2 * math.pi)
    y, eps, P, _, _ = _eps(v, r, N, lam, b, gamma, interp)
    rebuilt = lam ** (-N / 2) * (P + eps) * np.exp(-1j * (b * y * y / 4 - gamma))
    rec = math.sqrt(float(np.sum(w * np.abs(rebuilt - v) ** 2)) /
                    max(float(np.sum(w * np.abs(v) ** 2)), 1e-300))
    state = ModulationState(float(lam), float(b), float(gamma), RadialFunction(g, eps),
                            tuple(float(f) for f in Fx), rec, True, it, P=P)
    state.valid = state.eps_norms()["H1"] < delta
    return state


class DecompositionTap:
    """Stateful hook for ``evolve.run``: decomposes each checkpoint from the last result."""

    def __init__(self, exp: ProfileExpansion, guess: tuple, tol: float = 1e-12,
                 delta: float = 0.3):
        self.interp = ProfileInterpolant(exp)
        self.guess = tuple(guess)
        self.tol = tol
        self.delta = delta

    def __call__(self, t: float, u: RadialFunction) -> ModulationState:
        try:
            st = decompose(u, self.guess, self.interp, self.tol, delta=self.delta)
        except DecompositionError:
            # samples far apart: restart from the data, on the previous phase branch
            lam, b, gamma = initial_guess(u, float(self.interp.exp.bundle.grad2))
            gamma = self.guess[2] + math.remainder(gamma - self.guess[2], 2 * math.pi)
            st = decompose(u, (lam, b, gamma), self.interp, self.tol, delta=self.delta)
        st.t = t
        self.guess = (st.lam, st.b, st.gamma)
        return st

    @staticmethod
    def scale_of(state: ModulationState) -> float:
        return state.lam


# ---------------------------------------------------------------------------
# Mod vector and energy functionals

def rescaled_times(t: np.ndarray, lam: np.ndarray, s0: float = 0.0) -> np.ndarray:
    """s(t) = s0 + int dt / lambda^2, by integrating a cubic spline of 1/lambda^2."""
    sp = CubicSpline(t, 1.0 / lam ** 2).antiderivative()
    return s0 + sp(t) - sp(t[0])


def mod_vector(states: list, exp: ProfileExpansion, s0: float = 0.0) -> list:
    """Mod = (lambda_s/lambda + b, b_s + b^2 - theta, 1 - gamma_s) along a trajectory.

    Derivatives use d/ds = lambda^2 d/dt with cubic-spline derivatives in t.
    """
    if len(states) < 3:
        raise ValueError("mod_vector needs at least 3 samples")
    t = np.array([st.t for st in states], dtype=float)
    if t[0] > t[-1]:
        states, t = states[::-1], t[::-1]
    if np.any(np.diff(t) <= 0):
        raise ValueError("sample times must be strictly monotone")
    lam = np.array([st.lam for st in states])
    b = np.array([st.b for st in states])
    gam = np.unwrap(np.array([st.gamma for st in states]))
    if np.any(np.abs(np.diff(np.log(lam))) > 0.1):
        warnings.warn("lambda changes by more than 10% between samples; Mod is coarse",
                      RuntimeWarning, stacklevel=2)
    s = rescaled_times(t, lam, s0)
    dlog = CubicSpline(t, np.log(lam))(t, 1)
    db = CubicSpline(t, b)(t, 1)
    dg = CubicSpline(t, gam)(t, 1)
    out = []
    for i in range(len(t)):
        l2 = lam[i] ** 2
        theta = float(assemble_theta(exp, lam[i], b[i]))
        out.append(ModVector(float(s[i]), float(t[i]), l2 * dlog[i] + b[i],
                             l2 * db[i] + b[i] ** 2 - theta, 1 - l2 * dg[i]))
    return out


def energy_H(state: ModulationState, exp: ProfileExpansion, sigma: float | None = None) -> float:
    """1/2 ||eps||_{H1}^2 + b^2 ||y eps||^2 - int (F(P+eps) - F(P) - dF(P) eps)
    - 1/2 lambda^alpha ||y^{-sigma} eps||^2, in y variables."""
    sigma = exp.sigma if sigma is None else sigma
    g = state.eps.grid
    N = g.dimension
    lam, b = state.lam, state.b
    e = state.eps.values
    P = state.P
    if P is None:
        P = ProfileInterpolant(exp).evaluate(state.y, lam, b)[0]
    n = state.eps_norms()
    a2e = e.real ** 2 + e.imag ** 2
    q = 1 + 2 / N  # F(z) = |z|^{2q} / (2q)
    aP = P.real ** 2 + P.imag ** 2
    aPe = np.abs(P + e) ** 2
    F = lambda a: a ** q / (2 * q)  # noqa: E731
    dF = aP ** (q - 1) * (P * np.conj(e)).real
    nonlin = state.y_integrate(F(aPe) - F(aP) - dF)
    wsig = g.singular_weights(sigma) if sigma > 0 else g.weights
    pot = float(np.sum(wsig * a2e)) * lam ** (2 * sigma - N)
    return (0.5 * n["H1"] ** 2 + b * b * n["weighted1"] ** 2 - nonlin
            - 0.5 * lam ** exp.alpha * pot)


def energy_S(state: ModulationState, exp: ProfileExpansion, sigma: float | None = None,
             m: int = 20) -> float:
    return energy_H(state, exp, sigma) / state.lam ** m


class ModulationDecomposer(BaseEstimator):
    """Estimator over a sequence of (t, u) samples.

    ``fit`` decomposes every sample (each Newton started from the previous
    result) and computes Mod; ``transform`` returns rows (lambda, b, gamma).
    """

    def __init__(self, expansion: ProfileExpansion | None = None, tol: float = 1e-12,
                 delta: float = 0.3, guess: tuple | None = None):
        self.expansion = expansion
        self.tol = tol
        self.delta = delta
        self.guess = guess

    def fit(self, X, y=None):
        if self.expansion is None:
            raise ValueError("ModulationDecomposer needs a profile expansion")
        samples = list(X)
        if not samples:
            raise ValueError("no samples to decompose")
        t0, u0 = _time_state(samples[0])
        guess = self.guess or initial_guess(u0, float(self.expansion.bundle.grad2))
        tap = DecompositionTap(self.expansion, guess, self.tol, self.delta)
        self.states_ = [tap(*_time_state(smp)) for smp in samples]
        self.mod_ = mod_vector(self.states_, self.expansion) if len(self.states_) >= 3 else []
        return self

    def transform(self, X=None) -> np.ndarray:
        return np.array([[st.lam, st.b, st.gamma] for st in self.states_])


def _time_state(sample):
    if hasattr(sample, "u"):
        return sample.t, sample.u
    t, u = sample
    return t, u
