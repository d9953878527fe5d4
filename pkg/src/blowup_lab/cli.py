"""Command line entry point ``blowup-lab``.

Settings come from the ExperimentSpec defaults, then an optional flat
``key = value`` config file, then ``--key value`` flags.  Outputs go to
``--out`` or to $BLOWUP_LAB_OUT/<name>/<command>.  Exit codes: 0 success,
2 invalid input, 3 numerical failure (stage tag on stderr).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from . import harness as hz
from .ground_state import solve_ground_state
from .law import LawConstants
from .linops import LinearizedPair, coercivity_mu, identity_table
from .modulation import DecompositionTap, initial_guess
from .profile import build_expansion, load_expansion
from .radial import RadialFunction, RadialGrid

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("ground-state", "linops", "profile", "law", "simulate", "decompose-run", "fit-rate",
            "report", "matrix")


def read_config(path) -> dict:
    """Flat ``key = value`` (or ``key: value``) lines; '#' starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else (":" if ":" in line else None)
        if sep is None:
            raise hz.SpecError(f"{path}:{n}: expected key = value")
        key, val = (x.strip() for x in line.split(sep, 1))
        out[key] = val.strip("'\"")
    return out


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--out", help="output directory (default $BLOWUP_LAB_OUT/<name>/<command>)")
    common.add_argument("-v", "--verbose", action="store_true")
    spec_flags = common.add_argument_group("experiment settings")
    for f in dataclasses.fields(hz.ExperimentSpec):
        if f.name == "out":
            continue
        spec_flags.add_argument(f"--{f.name.replace('_', '-')}", dest=f"spec_{f.name}",
                                metavar=f.name.upper(), help=f"(default {f.default})")

    p = argparse.ArgumentParser(prog="blowup-lab", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ground-state", parents=[common], help="ground state Q and its constants")
    lo = sub.add_parser("linops", parents=[common], help="linearized operator identities")
    lo.add_argument("--check", action="store_true", help="fail (exit 3) on an identity defect")
    pr = sub.add_parser("profile", parents=[common], help="solve the profile systems")
    pr.add_argument("--precision", type=int, help="mpfr bits for the profile grid")
    la = sub.add_parser("law", parents=[common], help="law constants and initial parameters")
    la.add_argument("--profile", help="saved profile directory")
    si = sub.add_parser("simulate", parents=[common], help="evolve and record samples")
    si.add_argument("--scenario", choices=("blowup", "minus"), default="blowup")
    si.add_argument("--profile", help="saved profile directory")
    de = sub.add_parser("decompose-run", parents=[common], help="decompose saved states")
    de.add_argument("--traj", required=True, help="directory written by simulate")
    de.add_argument("--profile", help="saved profile directory")
    de.add_argument("--mod-out", help="output CSV (default <out>/mod.csv)")
    fr = sub.add_parser("fit-rate", parents=[common], help="power-law fit of lambda and b")
    fr.add_argument("--mod", required=True, help="modulation CSV")
    fr.add_argument("--lambda1", type=float, help="lambda at t1 (default: first sample)")
    fr.add_argument("--window", help="t_lo,t_hi (default: automatic selection)")
    rp = sub.add_parser("report", parents=[common], help="full pipeline report, or --collect")
    rp.add_argument("--scenario", choices=("blowup", "minus"), default="blowup")
    rp.add_argument("--collect", help="summarize every report.json below this directory")
    mx = sub.add_parser("matrix", parents=[common], help="run the experiment matrix")
    mx.add_argument("--workers", type=int, default=1)
    mx.add_argument("--sigmas", default=",".join(str(s) for s in hz.MATRIX_SIGMAS))
    mx.add_argument("--energies", default=",".join(str(e) for e in hz.MATRIX_ENERGIES))
    return p


def build_spec(args, base: hz.ExperimentSpec | None = None) -> hz.ExperimentSpec:
    values = read_config(args.config) if args.config else {}
    for key, val in vars(args).items():
        if key.startswith("spec_") and val is not None:
            values[key[5:]] = val
    return hz.ExperimentSpec.from_mapping(values, base)


def out_dir(args, spec: hz.ExperimentSpec) -> Path:
    if args.out:
        return Path(args.out)
    return hz.output_root() / spec.name / args.command


def _print(obj) -> None:
    print(json.dumps(hz._jsonable(obj), indent=2, sort_keys=True))


def _expansion(args, spec):
    if getattr(args, "profile", None):
        with hz.stage("profile"):
            return load_expansion(args.profile)
    return hz.profile_stage(spec)


# ---------------------------------------------------------------------------
# commands

def cmd_ground_state(args, spec):
    d = out_dir(args, spec)
    with hz.stage("ground_state"):
        grid = RadialGrid(spec.dim, spec.profile_h, spec.profile_rmax)
        bundle = solve_ground_state(grid, sigma=spec.sigma)
    d.mkdir(parents=True, exist_ok=True)
    bundle.Q.save(d / "Q")
    hz.write_json(d / "ground_state.json", bundle.summary())
    hz.write_manifest(d, spec, "ground_state")
    _print(bundle.summary())


def cmd_linops(args, spec):
    d = out_dir(args, spec)
    with hz.stage("linops"):
        grid = RadialGrid(spec.dim, spec.profile_h, spec.profile_rmax)
        pair = LinearizedPair(solve_ground_state(grid, sigma=spec.sigma))
        tab = identity_table(pair)
        tab["coercivity_mu"] = coercivity_mu(pair)
    hz.write_json(d / "linops.json", tab)
    hz.write_manifest(d, spec, "linops")
    _print(tab)
    if args.check:
        worst = max(tab["relative"].values())
        if worst > 1e-5:
            raise hz.StageError("linops", ValueError(f"relative identity defect {worst:.2e}"))


def cmd_profile(args, spec):
    d = out_dir(args, spec)
    if args.precision:
        with hz.stage("profile"):
            grid = RadialGrid(spec.dim, spec.profile_h, spec.profile_rmax, args.precision)
            exp = build_expansion(solve_ground_state(grid, sigma=spec.sigma), spec.sigma,
                                  spec.K, spec.Kprime)
    else:
        exp = hz.profile_stage(spec)
    exp.save(d)
    hz.write_manifest(d, spec, "profile", {"precision": args.precision})
    b00 = float(exp.beta[0, 0])
    _print({"beta00": b00, "beta00_formula": exp.beta00_formula(),
            "beta00_relative_error": abs(b00 / exp.beta00_formula() - 1),
            "max_residual": exp.max_residual(), "max_relative_residual": exp.max_residual(True),
            "cplus": {f"{j},{k}": float(c) for (j, k), c in exp.cplus.items()}})


def cmd_law(args, spec):
    d = out_dir(args, spec)
    exp = _expansion(args, spec)
    lc, s1, lam1, b1 = hz.law_stage(spec, exp)
    out = lc.as_dict() | {"lambda_exponent": lc.lambda_exponent, "b_exponent": lc.b_exponent,
                          "s1": s1, "lambda1": lam1, "b1": b1}
    hz.write_json(d / "law.json", out)
    hz.write_manifest(d, spec, "law")
    _print(out)


def cmd_simulate(args, spec):
    d = out_dir(args, spec)
    if args.scenario == "minus":
        rep = hz.pipeline_nls_minus(spec, d)
        _print({k: v for k, v in rep.items() if not k.startswith("_")})
        return
    exp = _expansion(args, spec)
    lc, s1, lam1, b1 = hz.law_stage(spec, exp)
    traj = hz.simulate_blowup(spec, exp, lam1, b1)
    states = [smp.tap for smp in traj]
    _, rows = hz.modulation_table(states, exp, s1)
    every = spec.save_states_every or 10
    hz.write_manifest(d, spec, "simulate", {"s1": s1, "lambda1": lam1, "b1": b1,
                                            "states_every": every})
    hz.write_csv(d / "trajectory.csv", hz.TRAJ_HEADER, hz._trajectory_rows(traj))
    hz.write_csv(d / "modulation.csv", hz.MOD_HEADER, rows)
    hz.save_states(d, traj, every)
    exp.save(d / "profile")
    dr = traj.drifts()
    _print({"stop_reason": traj.stop_reason, "steps": traj.steps, "samples": len(traj),
            "t_final": traj[-1].t, "lambda_final": states[-1].lam,
            "blowup_declared": traj.stop_reason == "resolution_floor"} | dr)


def cmd_decompose_run(args, spec):
    traj_dir = Path(args.traj)
    man = json.loads((traj_dir / "manifest.json").read_text())
    run_spec = hz.ExperimentSpec.from_mapping(man["spec"])
    prof = args.profile or (traj_dir / "profile" if (traj_dir / "profile").exists() else None)
    with hz.stage("profile"):
        exp = load_expansion(prof) if prof else hz.profile_stage(run_spec)
    index = json.loads((traj_dir / "states" / "index.json").read_text())
    if len(index) < 3:
        raise hz.SpecError("need at least 3 saved states")
    with hz.stage("decompose"):
        first = RadialFunction.load(traj_dir / "states" / index[0]["stem"])
        guess = (man["lambda1"], man["b1"], 0.0) if "lambda1" in man else \
            initial_guess(first, float(exp.bundle.grad2))
        tap = DecompositionTap(exp, guess, run_spec.decomp_tol, run_spec.delta)
        states = [tap(item["t"], RadialFunction.load(traj_dir / "states" / item["stem"]))
                  for item in index]
    _, rows = hz.modulation_table(states, exp, man.get("s1", 0.0))
    path = Path(args.mod_out) if args.mod_out else out_dir(args, run_spec) / "mod.csv"
    hz.write_csv(path, hz.MOD_HEADER, rows)
    _print({"samples": len(states), "output": str(path)} | hz.decomposition_summary(states))


def cmd_fit_rate(args, spec):
    cols = hz.read_csv(args.mod)
    with hz.stage("fit"):
        grid = RadialGrid(spec.dim, spec.profile_h, spec.profile_rmax)
        exp = build_expansion(solve_ground_state(grid, sigma=spec.sigma), spec.sigma,
                              spec.K, spec.Kprime)
        lc = LawConstants.from_expansion(exp, spec.E0)
    lam1 = args.lambda1 if args.lambda1 else float(cols["lambda"][0])
    if args.window:
        lo, hi = (float(x) for x in args.window.split(","))
        with hz.stage("fit"):
            fl = hz.fit_rate(cols["t"], cols["lambda"], (lo, hi),
                             fit_blowup_time=spec.fit_blowup_time,
                             predicted_exponent=lc.lambda_exponent,
                             reference_amplitude=lc.C_lambda)
            fb = hz.fit_rate(cols["t"], cols["b"], (lo, hi), blowup_time=fl.blowup_time,
                             predicted_exponent=lc.b_exponent, reference_amplitude=lc.C_b)
        out = {"fit_lambda": fl.as_dict(), "fit_b": fb.as_dict()}
    else:
        out = hz.fit_columns(cols, spec, lc, lam1)
    d = out_dir(args, spec)
    hz.write_json(d / "fit.json", out)
    _print(out)


def cmd_report(args, spec):
    if args.collect:
        reps = hz.summarize_reports(args.collect)
        blowup, minus = [], []
        for r in reps:
            if r.get("kind") == "minimal_blowup":
                blowup.append((r["path"], r["constants"]["sigma"], r["constants"]["E0"],
                               r["fit_lambda"]["exponent"], r["constants"]["lambda_exponent"],
                               r["fit_b"]["exponent"], r["constants"]["b_exponent"],
                               r["window"]["decades"], r["mod"]["slope"]))
            elif r.get("kind") == "nls_minus":
                v = r["verdicts"]
                minus.append((r["path"], v["minus_bounded"], v["plus_exceeds_bound"],
                              v["plus_grows_more"], v["supercritical_ceiling"],
                              v["supercritical_negative_energy"]))
        d = Path(args.out) if args.out else Path(args.collect)
        tables = (("summary_blowup.csv", ["path", "sigma", "E0", "lambda_exponent",
                                          "lambda_predicted", "b_exponent", "b_predicted",
                                          "decades", "mod_slope"], blowup),
                  ("summary_minus.csv", ["path", "minus_bounded", "plus_exceeds_bound",
                                         "plus_grows_more", "supercritical_ceiling",
                                         "supercritical_negative_energy"], minus))
        for name, header, rows in tables:
            if rows:
                hz.write_csv(d / name, header, rows)
                print(",".join(header))
                for row in rows:
                    print(",".join(hz.fmt(v) for v in row))
        return
    d = out_dir(args, spec)
    if args.scenario == "minus":
        rep = hz.pipeline_nls_minus(spec, d)
    else:
        rep = hz.pipeline_minimal_blowup(spec, d)
    _print({k: v for k, v in rep.items() if not k.startswith("_")})


def cmd_matrix(args, spec):
    root = Path(args.out) if args.out else hz.output_root() / "matrix"
    sig = tuple(float(x) for x in args.sigmas.split(","))
    en = tuple(float(x) for x in args.energies.split(","))
    rows = hz.run_matrix(spec, root, workers=args.workers, sigmas=sig, energies=en)
    for r in rows:
        print(json.dumps(hz._jsonable(r), sort_keys=True))
    if any(r["status"] != "ok" for r in rows):
        raise hz.StageError("matrix", RuntimeError("some matrix entries failed"))


HANDLERS = {"ground-state": cmd_ground_state, "linops": cmd_linops, "profile": cmd_profile,
            "law": cmd_law, "simulate": cmd_simulate, "decompose-run": cmd_decompose_run,
            "fit-rate": cmd_fit_rate, "report": cmd_report, "matrix": cmd_matrix}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        base = hz.minus_defaults() if getattr(args, "scenario", None) == "minus" else None
        spec = build_spec(args, base)
        HANDLERS[args.command](args, spec)
    except hz.SpecError as exc:
        print(f"blowup-lab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except hz.StageError as exc:
        print(f"blowup-lab: stage={exc.stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"blowup-lab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
