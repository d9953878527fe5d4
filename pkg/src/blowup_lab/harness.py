"""Experiment pipelines, rate fitting and reproducible output.

A run is described by an ``ExperimentSpec`` (flat key-value, validated
before any compute).  Pipelines chain ground state, linearized operators,
profile, law constants, evolution with decomposition taps and the rate fit,
and write a manifest, flat CSVs and a report JSON into their own directory.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator

from .evolve import EvolutionConfig, evolution_energy, run
from .ground_state import solve_ground_state
from .law import LawConstants, select_initial_params, time_maps
from .linops import LinearizedPair, identity_table
from .modulation import (DecompositionTap, ProfileInterpolant, energy_H, energy_S,
                         mod_vector)
from .profile import ProfileExpansion, build_expansion
from .radial import RadialFunction, RadialGrid

log = logging.getLogger(__name__)

OUT_ENV = "BLOWUP_LAB_OUT"
VERSION = "0.1.0"


class SpecError(ValueError):
    """Invalid experiment input (CLI exit code 2)."""


class StageError(RuntimeError):
    """Numerical failure inside a pipeline stage (CLI exit code 3)."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


@contextmanager
def stage(name: str):
    try:
        yield
    except (SpecError, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# experiment description

@dataclass
class ExperimentSpec:
    name: str = "minimal_blowup"
    dim: int = 2
    sigma: float = 0.3
    sign: int = 1
    E0: float = 1.0
    t1: float = -0.05
    K: int = 2
    Kprime: int = 1
    # profile (rescaled) grid
    profile_h: float = 0.01
    profile_rmax: float = 24.0
    # evolution (physical) grid and stepping
    h: float = 1.6e-4
    r_max: float = 4.0
    c_dt: float = 0.02
    dt0: float = 1e-3
    scheme: str = "conservative"
    order: int = 4
    checkpoint_every: int = 5
    floor_factor: float = 10.0
    # decomposition and fit window
    delta: float = 0.3
    decomp_tol: float = 1e-12
    window_floor: float = 15.0
    window_top: float = 0.5
    fit_blowup_time: bool = True
    # boundedness scenario
    window_length: float = 5.0
    lambda_data: float = 1.0
    b_data: float = 0.0
    lambda_super: float = 0.25
    mass_surplus: float = 0.5
    grad_ceiling_factor: float = 10.0
    bound_factor: float = 10.0
    save_states_every: int = 0
    out: str = ""

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in dataclasses.fields(cls)}

    @classmethod
    def from_mapping(cls, values: dict, base: "ExperimentSpec | None" = None) -> "ExperimentSpec":
        """Build from string or typed values; unknown keys are an error."""
        types = cls.field_types()
        out = dataclasses.asdict(base or cls())
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise SpecError(f"unknown setting '{key}'")
            out[key] = _coerce(key, raw, types[key])
        spec = cls(**out)
        spec.validate()
        return spec

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentSpec":
        def need(cond, msg):
            if not cond:
                raise SpecError(msg)

        need(self.dim in (1, 2), "dim must be 1 or 2")
        need(0 < self.sigma <= 0.9 and self.sigma < self.dim / 2,
             "sigma must lie in (0, min(0.9, dim/2))")
        need(self.sign in (1, -1), "sign must be +1 or -1")
        need(self.t1 < 0, "t1 must be negative")
        need(self.K >= 0 and self.Kprime >= 0, "K and Kprime must be non-negative")
        need(math.isfinite(self.E0), "E0 must be finite")
        for name in ("profile_h", "h", "c_dt", "dt0", "window_length", "lambda_data",
                     "lambda_super",
                     "delta", "decomp_tol"):
            need(getattr(self, name) > 0, f"{name} must be positive")
        for h, R, label in ((self.profile_h, self.profile_rmax, "profile"),
                            (self.h, self.r_max, "evolution")):
            M = round(R / h)
            need(M > 4 and abs(M * h - R) <= 1e-9 * R,
                 f"{label} r_max must be an integer multiple of h (and > 4 h)")
        need(self.scheme in ("strang", "conservative"), "scheme must be strang or conservative")
        need(self.order in (2, 4), "order must be 2 or 4")
        need(self.checkpoint_every >= 1, "checkpoint_every must be >= 1")
        need(0 < self.window_top <= 1, "window_top must lie in (0, 1]")
        need(self.window_floor >= self.floor_factor, "window_floor must be >= floor_factor")
        need(self.grad_ceiling_factor > 1, "grad_ceiling_factor must exceed 1")
        need(self.bound_factor > 1, "bound_factor must exceed 1")
        need(self.mass_surplus >= 0, "mass_surplus must be non-negative")
        return self

    def content_hash(self) -> str:
        """Git-style blob hash of the canonical JSON of the inputs (output path excluded)."""
        d = self.as_dict()
        d.pop("out")
        d["version"] = VERSION
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha1(b"blob %d\0" % len(blob) + blob).hexdigest()


def _coerce(key, raw, typ):
    if isinstance(typ, str):
        typ = {"int": int, "float": float, "bool": bool, "str": str}[typ]
    try:
        if typ is bool:
            if isinstance(raw, str):
                low = raw.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                return low in ("true", "1", "yes")
            return bool(raw)
        if typ is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(float(raw)) if isinstance(raw, str) and "e" in raw.lower() else int(raw)
        return typ(raw)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"bad value for {key}: {raw!r}") from exc


def minus_defaults(**overrides) -> ExperimentSpec:
    """Settings of the boundedness scenario (sign -1, critical mass, moderate grid)."""
    base = dict(name="nls_minus", sign=-1, E0=0.0, h=0.0025, r_max=20.0, c_dt=0.02,
                checkpoint_every=10, grad_ceiling_factor=5.0, b_data=2.0)
    base.update(overrides)
    return ExperimentSpec.from_mapping(base)


def output_root(explicit: str | os.PathLike | None = None) -> Path:
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(OUT_ENV, "blowup_lab_out"))


# ---------------------------------------------------------------------------
# deterministic emission

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def read_csv(path) -> dict:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_manifest(directory, spec: ExperimentSpec, kind: str, extra: dict | None = None) -> Path:
    man = {"kind": kind, "spec": spec.as_dict(), "input_hash": spec.content_hash(),
           "version": VERSION, "numpy": np.__version__}
    man.update(extra or {})
    return write_json(Path(directory) / "manifest.json", man)


# ---------------------------------------------------------------------------
# rate fitting

@dataclass
class RateFit:
    exponent: float
    amplitude: float
    window: tuple
    r_squared: float
    predicted_exponent: float | None = None
    blowup_time: float = 0.0
    n_samples: int = 0
    correction: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    correction_order: float = float("nan")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("correction")
        d["window"] = list(self.window)
        d["max_correction"] = float(np.max(self.correction)) if len(self.correction) else None
        return d


def _linear_fit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - float(np.sum(res ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return coef[0], coef[1], r2, float(np.sum(res ** 2))


def fit_rate(t, lam, window: tuple | None = None, blowup_time: float = 0.0,
             fit_blowup_time: bool = False, predicted_exponent: float | None = None,
             reference_amplitude: float | None = None, min_samples: int = 10) -> RateFit:
    """Least squares of log lam against log(T - t).

    With ``fit_blowup_time`` T is chosen to minimize the residual (profiled
    over the two linear coefficients); otherwise T = ``blowup_time``.  The
    correction series is |lam / (A (T - t)^p) - 1| with (A, p) the reference
    amplitude and predicted exponent when given, else the fitted ones.
    """
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if t.shape != lam.shape:
        raise ValueError("t and lam differ in length")
    sel = np.ones(len(t), dtype=bool)
    if window is not None:
        lo, hi = min(window), max(window)
        sel = (t >= lo) & (t <= hi)
    tt, ll = t[sel], lam[sel]
    if len(tt) < min_samples:
        raise ValueError(f"degenerate window: {len(tt)} samples, need {min_samples}")
    if np.any(ll <= 0) or not np.all(np.isfinite(ll)):
        raise ValueError("lam must be positive and finite")
    t_hi = float(tt.max())
    span = float(tt.max() - tt.min())
    if span <= 0:
        raise ValueError("degenerate window: zero time span")
    ly = np.log(ll)

    if fit_blowup_time:
        def rss(u):
            return _linear_fit(np.log(t_hi + math.exp(u) - tt), ly)[3]

        lo_u, hi_u = math.log(1e-9 * span), math.log(1e3 * span)
        grid = np.linspace(lo_u, hi_u, 121)
        vals = [rss(u) for u in grid]
        i = int(np.argmin(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        u = minimize_scalar(rss, bounds=(a, b), method="bounded",
                            options={"xatol": 1e-12}).x if b > a else grid[i]
        T = t_hi + math.exp(u)
    else:
        T = float(blowup_time)
        if np.any(tt >= T):
            raise ValueError("samples at or after the blow-up time")
    x = np.log(T - tt)
    p, c, r2, _ = _linear_fit(x, ly)
    amp = math.exp(c)
    A = reference_amplitude if reference_amplitude is not None else amp
    q = predicted_exponent if predicted_exponent is not None else p
    corr = np.abs(ll / (A * (T - tt) ** q) - 1)
    order = float("nan")
    good = corr > 0
    if good.sum() >= 3:
        order = float(np.polyfit(x[good], np.log(corr[good]), 1)[0])
    return RateFit(float(p), amp, (float(tt.min()), float(tt.max())), r2, predicted_exponent,
                   T, int(len(tt)), corr, order)


class PowerLawFit(BaseEstimator):
    """Estimator form of ``fit_rate``: X holds times, y the positive quantity."""

    def __init__(self, blowup_time: float = 0.0, fit_blowup_time: bool = False,
                 predicted_exponent: float | None = None, window: tuple | None = None,
                 reference_amplitude: float | None = None):
        self.blowup_time = blowup_time
        self.fit_blowup_time = fit_blowup_time
        self.predicted_exponent = predicted_exponent
        self.window = window
        self.reference_amplitude = reference_amplitude

    def fit(self, X, y):
        t = np.asarray(X, dtype=float).reshape(-1)
        self.result_ = fit_rate(t, y, self.window, self.blowup_time, self.fit_blowup_time,
                                self.predicted_exponent, self.reference_amplitude)
        self.exponent_ = self.result_.exponent
        self.amplitude_ = self.result_.amplitude
        self.blowup_time_ = self.result_.blowup_time
        self.r_squared_ = self.result_.r_squared
        return self

    def predict(self, X) -> np.ndarray:
        t = np.asarray(X, dtype=float).reshape(-1)
        return self.amplitude_ * (self.blowup_time_ - t) ** self.exponent_


def select_window(lam, valid, h: float, lam1: float, floor: float = 15.0,
                  top: float = 0.5) -> slice:
    """Longest contiguous run of samples that are valid with floor h <= lam <= top lam1."""
    lam = np.asarray(lam, dtype=float)
    ok = np.asarray(valid, dtype=bool) & (lam >= floor * h) & (lam <= top * lam1)
    best, start = (0, 0), None
    for i, flag in enumerate(np.append(ok, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    return slice(*best)


def loglog_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    good = (x > 0) & (y > 0)
    if good.sum() < 3:
        return float("nan")
    return float(np.polyfit(np.log(x[good]), np.log(y[good]), 1)[0])


# ---------------------------------------------------------------------------
# stages

def profile_stage(spec: ExperimentSpec) -> ProfileExpansion:
    with stage("ground_state"):
        grid = RadialGrid(spec.dim, spec.profile_h, spec.profile_rmax)
        bundle = solve_ground_state(grid, sigma=spec.sigma)
    with stage("linops"):
        pair = LinearizedPair(bundle)
        tab = identity_table(pair)
        worst = max(tab["relative"].values())
        if worst > 1e-5:
            raise ValueError(f"relative operator identity defect {worst:.2e} above 1e-5")
    with stage("profile"):
        return build_expansion(bundle, spec.sigma, spec.K, spec.Kprime)


def initial_data(exp: ProfileExpansion, grid: RadialGrid, lam: float, b: float,
                 gamma: float = 0.0) -> RadialFunction:
    """P_{lam,b,gamma} on the physical grid, through the even splines of the profile."""
    N = grid.dimension
    y = grid.nodes / lam
    P, _, _ = ProfileInterpolant(exp).evaluate(y, lam, b)
    return RadialFunction(grid, lam ** (-N / 2) * P * np.exp(-1j * b * y * y / 4 + 1j * gamma))


def _even_spline(f: RadialFunction) -> CubicSpline:
    r = np.asarray(f.grid.nodes, dtype=float)
    v = np.asarray(f.values, dtype=float)
    return CubicSpline(np.concatenate([-r[::-1], r]), np.concatenate([v[::-1], v]))


def _trajectory_rows(traj) -> list:
    return [(s.step, s.t, s.dt, s.mass2, s.energy, s.grad2) for s in traj]


TRAJ_HEADER = ["step", "t", "dt", "mass2", "energy", "grad2"]
MOD_HEADER = ["t", "s", "lambda", "b", "gamma", "eps_H1", "eps_weighted", "m1", "m2", "m3",
              "mod", "H", "S", "valid", "ortho_max", "reconstruction"]


def modulation_rows(states, mods, exp: ProfileExpansion, m: int = 20) -> list:
    rows = []
    for st, mv in zip(states, mods):
        n = st.eps_norms()
        H = energy_H(st, exp)
        rows.append((st.t, mv.s, st.lam, st.b, st.gamma, n["H1"], n["weighted1"], mv.m1, mv.m2,
                     mv.m3, mv.magnitude, H, H / st.lam ** m, st.valid,
                     max(abs(x) for x in st.ortho_residuals), st.reconstruction_error))
    return rows


def save_states(directory, traj, every: int) -> list:
    if every <= 0:
        return []
    d = Path(directory) / "states"
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for i, smp in enumerate(traj):
        if i % every == 0 or i == len(traj) - 1:
            stem = d / f"state_{i:06d}"
            smp.u.save(stem)
            names.append({"index": i, "t": smp.t, "stem": stem.name})
    write_json(d / "index.json", names)
    return names


# ---------------------------------------------------------------------------
# pipelines

def law_stage(spec: ExperimentSpec, exp: ProfileExpansion):
    """(constants, s1, lambda1, b1) for the spec's energy level and t1."""
    with stage("law"):
        lc = LawConstants.from_expansion(exp, spec.E0)
        s1 = time_maps(spec.t1, lc)
        lam1, b1 = select_initial_params(s1, spec.E0, exp, lc)
    return lc, s1, lam1, b1


def simulate_blowup(spec: ExperimentSpec, exp: ProfileExpansion, lam1: float, b1: float):
    """Evolve P_{lam1,b1,0} from t1 toward 0, decomposing every checkpoint."""
    with stage("evolve"):
        grid = RadialGrid(spec.dim, spec.h, spec.r_max)
        u0 = initial_data(exp, grid, lam1, b1)
        tap = DecompositionTap(exp, (lam1, b1, 0.0), spec.decomp_tol, spec.delta)
        cfg = EvolutionConfig(grid, sign=1, sigma=spec.sigma, dt0=spec.c_dt * lam1 ** 2,
                              adapt=True, c_dt=spec.c_dt, t_start=spec.t1, t_end=0.0,
                              checkpoint_every=spec.checkpoint_every, scheme=spec.scheme,
                              order=spec.order, floor_factor=spec.floor_factor)
        return run(u0, cfg, tap=tap, scale_of=tap.scale_of)


def modulation_table(states, exp: ProfileExpansion, s1: float) -> tuple[list, list]:
    with stage("modulation"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mods = mod_vector(states, exp, s1)
        return mods, modulation_rows(states, mods, exp)


def fit_columns(cols: dict, spec: ExperimentSpec, lc: LawConstants, lam1: float) -> dict:
    """Window selection, lambda and b rate fits and the Mod slope from per-sample columns."""
    with stage("fit"):
        t, lam, b = cols["t"], cols["lambda"], cols["b"]
        valid = cols["valid"].astype(bool)
        win = select_window(lam, valid, spec.h, lam1, spec.window_floor, spec.window_top)
        if win.stop - win.start < 10:
            raise ValueError("fewer than 10 samples in the accepted window")
        tw = (float(t[win.start]), float(t[win.stop - 1]))
        fit_l = fit_rate(t, lam, tw, fit_blowup_time=spec.fit_blowup_time,
                         predicted_exponent=lc.lambda_exponent, reference_amplitude=lc.C_lambda)
        fit_b = fit_rate(t, b, tw, blowup_time=fit_l.blowup_time,
                         predicted_exponent=lc.b_exponent, reference_amplitude=lc.C_b)
        mag = cols["mod"]
        return {
            "window": {"t": list(tw), "lambda": [float(lam[win].max()), float(lam[win].min())],
                       "decades": float(math.log10(lam[win].max() / lam[win].min())),
                       "samples": win.stop - win.start},
            "fit_lambda": fit_l.as_dict() | {"amplitude_ratio": fit_l.amplitude / lc.C_lambda},
            "fit_b": fit_b.as_dict() | {"amplitude_ratio": fit_b.amplitude / lc.C_b},
            "mod": {"slope": loglog_slope(cols["s"][win], mag[win]),
                    "max_in_window": float(mag[win].max()),
                    "min_in_window": float(mag[win].min()), "first": float(mag[0])},
        }


def rows_to_columns(header: list[str], rows: list) -> dict:
    arr = np.array([[float(v) for v in row] for row in rows])
    return {name: arr[:, i] for i, name in enumerate(header)}


def pipeline_minimal_blowup(spec: ExperimentSpec, out_dir: str | os.PathLike | None = None,
                            expansion: ProfileExpansion | None = None) -> dict:
    """Ground state -> profile -> law -> evolution with taps -> Mod -> rate fits."""
    spec.validate()
    if spec.sign != 1:
        raise SpecError("the minimal blow-up pipeline runs NLS with sign +1")
    exp = expansion if expansion is not None else profile_stage(spec)
    lc, s1, lam1, b1 = law_stage(spec, exp)
    traj = simulate_blowup(spec, exp, lam1, b1)
    states = [smp.tap for smp in traj]
    mods, rows = modulation_table(states, exp, s1)
    fits = fit_columns(rows_to_columns(MOD_HEADER, rows), spec, lc, lam1)
    drifts = traj.drifts()
    report = {
        "kind": "minimal_blowup",
        "input_hash": spec.content_hash(),
        "constants": lc.as_dict() | {"lambda_exponent": lc.lambda_exponent,
                                     "b_exponent": lc.b_exponent,
                                     "beta00_formula": exp.beta00_formula()},
        "initial": {"s1": s1, "lambda1": lam1, "b1": b1},
        "run": {"stop_reason": traj.stop_reason, "steps": traj.steps, "samples": len(traj),
                "t_final": traj[-1].t, "lambda_final": states[-1].lam,
                "blowup_declared": traj.stop_reason == "resolution_floor",
                "mass_drift": drifts["mass"], "energy_drift": drifts["energy"]},
        "decomposition": decomposition_summary(states),
    } | fits
    if out_dir is not None:
        d = Path(out_dir)
        write_manifest(d, spec, "minimal_blowup")
        write_csv(d / "trajectory.csv", TRAJ_HEADER, _trajectory_rows(traj))
        write_csv(d / "modulation.csv", MOD_HEADER, rows)
        save_states(d, traj, spec.save_states_every)
        write_json(d / "report.json", report)
    report["_trajectory"] = traj
    report["_states"] = states
    report["_mods"] = mods
    report["_expansion"] = exp
    return report


def decomposition_summary(states) -> dict:
    return {"ortho_max": max(max(abs(x) for x in st.ortho_residuals) for st in states),
            "reconstruction_max": max(st.reconstruction_error for st in states),
            "eps_H1_max": max(st.eps_norms()["H1"] for st in states),
            "all_valid": all(st.valid for st in states)}


def scaled_ground_state(grid: RadialGrid, Q: RadialFunction, lam0: float,
                        mass2: float, b: float = 0.0) -> RadialFunction:
    """lam0^{-N/2} Q(r / lam0) exp(-i b r^2 / (4 lam0^2)), normalized to the given discrete mass.

    b > 0 is a focusing phase; it leaves the mass unchanged.
    """
    N = grid.dimension
    y = grid.nodes / lam0
    sp = _even_spline(Q)
    v = np.where(y <= float(Q.grid.r_max), sp(np.minimum(y, float(Q.grid.r_max))), 0.0)
    v = lam0 ** (-N / 2) * v
    m = float(np.sum(grid.weights * v * v))
    phase = np.exp(-1j * b * y * y / 4)
    return RadialFunction(grid, v * math.sqrt(mass2 / m) * phase)


def pipeline_nls_minus(spec: ExperimentSpec, out_dir: str | os.PathLike | None = None) -> dict:
    """Critical-mass runs with sign -1 and +1 plus the supercritical sign -1 run."""
    spec.validate()
    if spec.dim < 2:
        raise SpecError("the boundedness scenario needs dim >= 2")
    with stage("ground_state"):
        qgrid = RadialGrid(spec.dim, spec.profile_h, spec.profile_rmax)
        bundle = solve_ground_state(qgrid, sigma=spec.sigma)
    grid = RadialGrid(spec.dim, spec.h, spec.r_max)
    mQ = float(bundle.mass2)
    # the supercritical data is concentrated so that its energy is negative
    # critical runs may pass the bound before stopping; the supercritical one stops early
    over = 1.5 * spec.bound_factor
    cases = {"critical_minus": (-1, mQ, spec.lambda_data, spec.b_data, over),
             "critical_plus": (1, mQ, spec.lambda_data, spec.b_data, over),
             "supercritical_minus": (-1, (math.sqrt(mQ) + spec.mass_surplus) ** 2,
                                     spec.lambda_super, 0.0, spec.grad_ceiling_factor)}
    results, trajs = {}, {}
    for label, (sgn, mass2, lam0, b0, ceiling) in cases.items():
        with stage(f"evolve:{label}"):
            u0 = scaled_ground_state(grid, bundle.Q, lam0, mass2, b0)
            g0 = math.sqrt(float(grid.dirichlet(u0.values)))
            cfg = EvolutionConfig(grid, sign=sgn, sigma=spec.sigma, dt0=spec.dt0, adapt=True,
                                  c_dt=spec.c_dt, t_start=0.0, t_end=spec.window_length,
                                  checkpoint_every=spec.checkpoint_every, scheme=spec.scheme,
                                  order=spec.order, grad_ceiling=ceiling * g0,
                                  floor_factor=spec.floor_factor)
            tr = run(u0, cfg, grad2_Q=float(bundle.grad2))
        grads = np.sqrt([s.grad2 for s in tr])
        results[label] = {"sign": sgn, "mass2": tr[0].mass2, "energy0": tr[0].energy,
                          "stop_reason": tr.stop_reason, "steps": tr.steps,
                          "t_final": tr[-1].t, "grad0": float(grads[0]),
                          "max_grad_ratio": float(grads.max() / grads[0])} | tr.drifts()
        trajs[label] = tr
    cm, cp, sm = (results[k] for k in cases)
    report = {
        "kind": "nls_minus",
        "input_hash": spec.content_hash(),
        "runs": results,
        "verdicts": {
            "minus_bounded": (cm["max_grad_ratio"] < spec.bound_factor
                              and cm["stop_reason"] == "t_end"),
            "plus_grows_more": cp["max_grad_ratio"] > cm["max_grad_ratio"],
            "plus_exceeds_bound": cp["max_grad_ratio"] > spec.bound_factor,
            "supercritical_ceiling": sm["stop_reason"] == "gradient_ceiling",
            "supercritical_negative_energy": sm["energy0"] < 0,
        },
    }
    if out_dir is not None:
        d = Path(out_dir)
        write_manifest(d, spec, "nls_minus")
        for label, tr in trajs.items():
            write_csv(d / f"{label}.csv", TRAJ_HEADER, _trajectory_rows(tr))
        write_json(d / "report.json", report)
    report["_trajectories"] = trajs
    return report


# ---------------------------------------------------------------------------
# experiment matrix

MATRIX_SIGMAS = (0.2, 0.3, 0.5)
MATRIX_ENERGIES = (0.0, 1.0)


def matrix_specs(base: ExperimentSpec, sigmas=MATRIX_SIGMAS, energies=MATRIX_ENERGIES) -> list:
    out = []
    for sg in sigmas:
        for e0 in energies:
            name = f"sigma{sg:g}_E{e0:g}"
            out.append(ExperimentSpec.from_mapping({"sigma": sg, "E0": e0, "name": name}, base))
    return out


def _matrix_entry(args):
    spec, root = args
    d = Path(root) / spec.name
    try:
        rep = pipeline_minimal_blowup(spec, d)
    except (SpecError, StageError) as exc:
        write_json(d / "error.json", {"error": str(exc)})
        return {"name": spec.name, "status": "failed", "error": str(exc)}
    return {"name": spec.name, "status": "ok", "sigma": spec.sigma, "E0": spec.E0,
            "lambda_exponent": rep["fit_lambda"]["exponent"],
            "lambda_predicted": rep["constants"]["lambda_exponent"],
            "b_exponent": rep["fit_b"]["exponent"],
            "b_predicted": rep["constants"]["b_exponent"],
            "decades": rep["window"]["decades"], "r_squared": rep["fit_lambda"]["r_squared"]}


def run_matrix(base: ExperimentSpec, root, workers: int = 1, **kw) -> list:
    """Run every matrix entry (in separate processes when workers > 1)."""
    specs = matrix_specs(base, **kw)
    jobs = [(s, str(root)) for s in specs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_matrix_entry, jobs))
    else:
        rows = [_matrix_entry(j) for j in jobs]
    keys = ["name", "status", "sigma", "E0", "lambda_exponent", "lambda_predicted",
            "b_exponent", "b_predicted", "decades", "r_squared"]
    write_csv(Path(root) / "matrix.csv", keys,
              [[r.get(k, "nan") if r.get(k) is not None else "nan" for k in keys] for r in rows])
    return rows


def summarize_reports(root) -> list[dict]:
    """Collect every report.json below ``root`` in sorted path order."""
    out = []
    for p in sorted(Path(root).rglob("report.json")):
        rep = json.loads(p.read_text())
        rep["path"] = str(p.parent)
        out.append(rep)
    return out


__all__ = ["ExperimentSpec", "RateFit", "PowerLawFit", "SpecError", "StageError", "fit_rate",
           "select_window", "pipeline_minimal_blowup", "pipeline_nls_minus", "run_matrix",
           "minus_defaults", "output_root", "evolution_energy"]
