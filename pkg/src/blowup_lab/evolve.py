"""Radial time integration of i u_t + Lap u + |u|^{4/N} u + sign r^{-2 sigma} u = 0.

Two schemes share the linear Crank-Nicolson operator, with the potential
kept inside the implicit solve:

* ``strang``: half nonlinear phase, Crank-Nicolson linear step, half phase.
  Mass is conserved exactly; energy to O(dt^2).
* ``conservative``: Crank-Nicolson for the whole equation with the
  nonlinearity in the averaged form of Delfour, Fortin and Payre, solved
  by fixed-point iteration.  Both the discrete mass and the discrete energy
  are invariants (up to the iteration tolerance).

Both are symmetric, so ``order=4`` composes three substeps with the
triple-jump weights (Yoshida) into a fourth-order step with the same
invariants.

With sigma = 0 the potential is the constant 1, so Q e^{i(1 + sign) t} is an
exact solution of the continuum problem.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _numerics as nm
from .ground_state import power_integral
from .radial import RadialFunction, RadialGrid, abs2

log = logging.getLogger(__name__)

SCHEMES = ("strang", "conservative")
_CBRT2 = 2.0 ** (1.0 / 3.0)
TRIPLE_JUMP = (1 / (2 - _CBRT2), -_CBRT2 / (2 - _CBRT2), 1 / (2 - _CBRT2))


class EvolutionError(RuntimeError):
    """Step failure after repeated dt halvings."""


class StepGuardError(ValueError):
    """Nonlinear phase per step above the guard; reduce dt."""


@dataclass
class EvolutionConfig:
    grid: RadialGrid
    sign: int = 1
    sigma: float = 0.3
    dt0: float = 1e-4
    adapt: bool = False
    c_dt: float = 0.01
    t_start: float = 0.0
    t_end: float = 1.0
    checkpoint_every: int = 10
    scheme: str = "strang"
    order: int = 2
    nonlinear: bool = True
    grad_ceiling: float | None = None
    floor_factor: float = 10.0
    phase_guard: float = math.pi / 4
    fp_tol: float = 1e-14
    fp_max_iter: int = 60
    max_halvings: int = 5
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if not self.dt0 > 0:
            raise ValueError("dt0 must be positive")
        if self.t_end == self.t_start:
            raise ValueError("t_start and t_end coincide")
        if not 0 <= self.sigma <= 0.9 or self.sigma >= self.grid.dimension / 2:
            raise ValueError("sigma must lie in [0, min(0.9, N/2))")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.order not in (2, 4):
            raise ValueError("order must be 2 or 4")
        if self.grid.is_mp:
            raise ValueError("time integration runs in float64")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    @property
    def direction(self) -> int:
        return 1 if self.t_end > self.t_start else -1


@dataclass
class TrajectorySample:
    t: float
    u: RadialFunction
    mass2: float
    energy: float
    grad2: float
    dt: float = 0.0
    step: int = 0
    tap: object = None


@dataclass
class Trajectory:
    samples: list = field(default_factory=list)
    stop_reason: str = ""
    steps: int = 0
    config: EvolutionConfig | None = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def drifts(self) -> dict:
        """Relative mass drift and energy drift.

        The energy drift is measured against max(|E(0)|, ||grad u(0)||^2 / 2),
        since E(0) can vanish while its parts are large.
        """
        m = np.array([s.mass2 for s in self.samples])
        e = np.array([s.energy for s in self.samples])
        scale = max(abs(e[0]), self.samples[0].grad2 / 2)
        return {"mass": float(np.max(np.abs(m - m[0])) / m[0]),
                "energy": float(np.max(np.abs(e - e[0])) / scale)}


# ---------------------------------------------------------------------------
# discrete functionals

def _potential_weights(grid: RadialGrid, sigma: float) -> np.ndarray:
    return grid.weights if sigma == 0 else grid.singular_weights(sigma)


def evolution_energy(u: RadialFunction, sigma: float, sign: int) -> float:
    """Discrete energy conserved by the conservative scheme."""
    g = u.grid
    N = g.dimension
    a2 = abs2(u.values)
    kin = g.dirichlet(u.values) / 2
    pot = float(power_integral(u)) / (2 + 4 / N)
    ext = float(np.sum(_potential_weights(g, sigma) * a2)) / 2
    return float(kin - pot - sign * ext)


def _sample(u: RadialFunction, t: float, cfg: EvolutionConfig, dt: float, step: int,
            tap=None) -> TrajectorySample:
    g = u.grid
    return TrajectorySample(t=t, u=u, mass2=float(np.sum(g.weights * abs2(u.values))),
                            energy=evolution_energy(u, cfg.sigma, cfg.sign),
                            grad2=float(g.dirichlet(u.values)), dt=dt, step=step, tap=tap)


# ---------------------------------------------------------------------------
# steppers

class _Stepper:
    """Caches the Crank-Nicolson factorization for the current dt."""

    def __init__(self, cfg: EvolutionConfig):
        self.cfg = cfg
        g = cfg.grid
        self.w = g.weights
        # B = W (Lap + sign V), symmetric
        B = g.stiffness.astype(complex)
        B[2] = B[2] + cfg.sign * _potential_weights(g, cfg.sigma)
        self.B = B
        self.p = 4.0 / g.dimension
        self._lus: dict = {}

    def _factor(self, dt: float):
        lu = self._lus.get(dt)
        if lu is None:
            if len(self._lus) > 6:
                self._lus.clear()
            lhs = -0.5j * dt * self.B
            lhs[2] = lhs[2] + self.w
            lu = self._lus[dt] = nm.BandedLU(lhs)
        return lu

    def _explicit(self, v: np.ndarray, dt: float) -> np.ndarray:
        return self.w * v + 0.5j * dt * nm.band_matvec(self.B, v)

    def _phase(self, v: np.ndarray, tau: float) -> np.ndarray:
        a2 = v.real ** 2 + v.imag ** 2
        if self.p == 2.0:
            dens = a2
        elif self.p == 4.0:
            dens = a2 * a2
        else:
            dens = a2 ** (self.p / 2)
        if abs(tau) * float(np.max(dens, initial=0.0)) > self.cfg.phase_guard:
            raise StepGuardError("nonlinear phase per step above the guard")
        return v * np.exp(1j * tau * dens)

    def strang(self, v: np.ndarray, dt: float) -> np.ndarray:
        lu = self._factor(dt)
        if self.cfg.nonlinear:
            v = self._phase(v, dt / 2)
        v = lu.solve(self._explicit(v, dt))
        if self.cfg.nonlinear:
            v = self._phase(v, dt / 2)
        return v

    def _averaged(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """(F(|a|^2) - F(|b|^2)) / (|a|^2 - |b|^2) (a + b)/2, F(x) = x^{1+p/2}/(1+p/2)."""
        x = a.real ** 2 + a.imag ** 2
        y = b.real ** 2 + b.imag ** 2
        if self.p == 2.0:
            q = (x + y) / 2
        elif self.p == 4.0:
            q = (x * x + x * y + y * y) / 3
        else:
            k = 1 + self.p / 2
            d = x - y
            safe = np.abs(d) > 1e-12 * np.maximum(x + y, 1e-300)
            q = np.where(safe, (x ** k - y ** k) / (k * np.where(safe, d, 1.0)),
                         ((x + y) / 2) ** (self.p / 2))
        return q * (a + b) / 2

    def conservative(self, v: np.ndarray, dt: float) -> np.ndarray:
        lu = self._factor(dt)
        rhs0 = self._explicit(v, dt)
        if not self.cfg.nonlinear:
            return lu.solve(rhs0)
        new = self.strang(v, dt)  # predictor
        scale = math.sqrt(float(np.sum(self.w * (v.real ** 2 + v.imag ** 2)))) or 1.0
        for _ in range(self.cfg.fp_max_iter):
            nxt = lu.solve(rhs0 + 1j * dt * self.w * self._averaged(new, v))
            d = nxt - new
            change = math.sqrt(float(np.sum(self.w * (d.real ** 2 + d.imag ** 2))))
            new = nxt
            if change <= self.cfg.fp_tol * scale:
                return new
        raise StepGuardError("fixed-point iteration of the conservative step did not converge")

    def __call__(self, v: np.ndarray, dt: float) -> np.ndarray:
        base = self.strang if self.cfg.scheme == "strang" else self.conservative
        if self.cfg.order == 2:
            return base(v, dt)
        for c in TRIPLE_JUMP:
            v = base(v, c * dt)
        return v


def step(u: RadialFunction, t: float, dt: float, cfg: EvolutionConfig) -> RadialFunction:
    """One step of the configured scheme (t is unused: the equation is autonomous)."""
    if not u.grid.same_as(cfg.grid):
        raise ValueError("state and config live on different grids")
    st = _Stepper(cfg)
    return RadialFunction(cfg.grid, st(u.values.astype(complex), dt))


def gradient_scale(u: RadialFunction, grad2_Q: float) -> float:
    """lambda proxy ||grad Q|| / ||grad u|| (used when no decomposition is tapped)."""
    g2 = float(u.grid.dirichlet(u.values))
    return math.sqrt(grad2_Q / g2) if g2 > 0 else math.inf


def run(u0: RadialFunction, cfg: EvolutionConfig,
        tap: Callable[[float, RadialFunction], object] | None = None,
        scale_of: Callable[[object], float] | None = None,
        grad2_Q: float | None = None) -> Trajectory:
    """Integrate from t_start to t_end, sampling every ``checkpoint_every`` steps.

    ``tap(t, u)`` runs at every checkpoint; with ``adapt`` the step becomes
    c_dt * lambda^2, lambda taken from ``scale_of(tap result)`` or, without a
    tap, from the gradient proxy (needs ``grad2_Q``).  Stops at t_end, when
    lambda < floor_factor * h, or when ||grad u|| exceeds ``grad_ceiling``.
    """
    g = cfg.grid
    st = _Stepper(cfg)
    v = u0.values.astype(complex)
    t = float(cfg.t_start)
    sgn = cfg.direction
    dt = cfg.dt0
    traj = Trajectory(config=cfg)

    def lam_estimate(u, res):
        if res is not None and scale_of is not None:
            return scale_of(res)
        if grad2_Q is not None:
            return gradient_scale(u, grad2_Q)
        return None

    def checkpoint(n):
        u = RadialFunction(g, v.copy())
        res = tap(t, u) if tap is not None else None
        traj.samples.append(_sample(u, t, cfg, dt, n, res))
        return u, res

    u, res = checkpoint(0)
    n = 0
    while True:
        lam = lam_estimate(u, res)
        if lam is not None and lam < cfg.floor_factor * float(g.h):
            traj.stop_reason = "resolution_floor"
            break
        if cfg.grad_ceiling is not None and math.sqrt(traj.samples[-1].grad2) > cfg.grad_ceiling:
            traj.stop_reason = "gradient_ceiling"
            break
        if cfg.adapt and lam is not None:
            dt = cfg.c_dt * lam * lam
        for _ in range(cfg.checkpoint_every):
            remaining = (cfg.t_end - t) * sgn
            if remaining <= 1e-14 * max(1.0, abs(t)):
                break
            h_dt = min(dt, remaining)
            for attempt in range(cfg.max_halvings + 1):
                try:
                    v_new = st(v, sgn * h_dt)
                    break
                except StepGuardError:
                    h_dt /= 2
            else:
                raise EvolutionError(f"step failed after {cfg.max_halvings} dt halvings at t={t}")
            if not np.all(np.isfinite(v_new)):
                raise EvolutionError(f"non-finite state at t={t}")
            v = v_new
            t += sgn * h_dt
            n += 1
            if attempt > 0:
                dt = h_dt
        u, res = checkpoint(n)
        if (cfg.t_end - t) * sgn <= 1e-14 * max(1.0, abs(t)):
            traj.stop_reason = "t_end"
            break
        if n >= cfg.max_steps:
            traj.stop_reason = "max_steps"
            break
    traj.steps = n
    log.info("run stopped (%s) after %d steps at t=%.6g", traj.stop_reason, n, t)
    return traj
