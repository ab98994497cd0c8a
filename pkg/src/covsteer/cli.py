"""
Command-line interface::

    covsteer check     SCENARIO [--out DIR]
    covsteer solve     SCENARIO [--out DIR] [--emit-pi FILE] [--emit-gains FILE]
    covsteer simulate  SCENARIO [--paths N] [--dt H] [--seed S] [--out DIR]
    covsteer reproduce {example1,example2} [--paths N] [--dt H] [--seed S] [--out DIR]
    covsteer dump      SCENARIO

``SCENARIO`` is a YAML file or the name of a built-in example. Exit codes:
0 success, 2 validation error (including a system that is not certified
totally controllable), 3 solver failure, 4 simulation error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .controller import gain_schedule, optimal_cost
from .errors import (
    CovsteerError,
    InfeasibleProblemError,
    ModelValidationError,
    SimulationError,
    SolverError,
)
from .montecarlo import covariance_ode, empirical_moments, energy_estimate, simulate
from .propagation import check_controllability
from .scenario import BUILTIN, dump_scenario, load_scenario
from .steering import solve_pi0

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_SIMULATION = 4


def fmt(x):
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, (int, np.integer)) else str(v) for v in row])


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _vec_names(prefix, rows, cols):
    """Column-major names matching ``vec``."""
    return [f"{prefix}_{i + 1}{j + 1}" for j in range(cols) for i in range(rows)]


# ------------------------------------------------------------------ stages
def stage_check(sc, out=None, stream=None):
    sc.system.require_valid()
    report = check_controllability(sc.system)
    print(report.format_table(), file=stream)
    data = report.to_dict()
    summary = {k: data[k] for k in ("uniform", "total", "total_certification", "index_invariant")}
    print(json.dumps(summary, sort_keys=True), file=stream)
    if out is not None:
        write_json(Path(out) / "controllability.json", data)
    return report


def stage_solve(sc, out=None, emit_pi=None, emit_gains=None, stream=None):
    report = stage_check(sc, out, stream=stream)
    if not report.total:
        raise ModelValidationError("system is not certified totally controllable on the check grid")
    try:
        pi0, trace = solve_pi0(sc.system, sc.problem, tol=sc.solver["tol"], homotopy=sc.solver["homotopy"])
    except SolverError as exc:
        if out is not None and exc.trace is not None:
            write_json(Path(out) / "solver_trace.json", exc.trace.to_dict())
        raise
    schedule = gain_schedule(sc.system, pi0, sc.problem.mu0, sc.problem.mu1)
    n, p = sc.system.n, sc.system.p
    residual = float(trace.residual)
    result = {
        "scenario": sc.name,
        "pi0": pi0.tolist(),
        "residual": residual,
        "relative_residual": residual / max(1.0, float(np.linalg.norm(sc.problem.Sigma1))),
        "converged": trace.converged,
        "method": trace.method,
        "homotopy_used": trace.homotopy_used,
        "iterations": len(trace.iterates),
        "expected_cost": optimal_cost(sc.system, schedule, sc.problem.mu0, sc.problem.Sigma0),
    }
    print(json.dumps({k: result[k] for k in ("pi0", "residual", "converged", "method")}), file=stream)
    if out is not None:
        out = Path(out)
        write_json(out / "solve.json", result)
        write_json(out / "solver_trace.json", trace.to_dict())
        if sc.output.get("gains", True) and emit_gains is None:
            emit_gains = out / "gains.csv"
        if sc.output.get("pi", False) and emit_pi is None:
            emit_pi = out / "pi.csv"
    if emit_gains is not None:
        header = ["t"] + _vec_names("K", p, n) + [f"nu_{i + 1}" for i in range(p)]
        rows = (
            [t, *k.reshape(-1, order="F"), *nu]
            for t, k, nu in zip(schedule.grid, schedule.K, schedule.nu)
        )
        write_csv(emit_gains, header, rows)
    if emit_pi is not None:
        header = ["t"] + _vec_names("Pi", n, n)
        write_csv(emit_pi, header, ([t, *m.reshape(-1, order="F")] for t, m in zip(schedule.grid, schedule.pi)))
    return schedule, trace, result


def stage_simulate(sc, out, paths=None, dt=None, seed=None, stream=None, emit_pi=None, emit_gains=None):
    schedule, trace, result = stage_solve(sc, out, emit_pi=emit_pi, emit_gains=emit_gains, stream=stream)
    sim = dict(sc.simulation)
    paths = sim["paths"] if paths is None else paths
    dt = sim["dt"] if dt is None else dt
    seed = sim["seed"] if seed is None else seed
    ens = simulate(
        sc.system, schedule, sc.problem, paths, dt, seed, scheme=sim["scheme"], keep_paths=sim["keep_paths"]
    )
    n = sc.system.n
    out = Path(out)
    if sc.output.get("moments", True):
        header = (
            ["t"]
            + [f"mean_{i + 1}" for i in range(n)]
            + [f"cov_{i + 1}{j + 1}" for i in range(n) for j in range(n)]
            + [f"lower_{i + 1}" for i in range(n)]
            + [f"upper_{i + 1}" for i in range(n)]
        )
        rows = []
        for t in ens.times:
            m = empirical_moments(ens, float(t))
            band = 3.0 * np.sqrt(np.clip(np.diag(m.cov), 0.0, None))
            rows.append([t, *m.mean, *m.cov.ravel(), *(m.mean - band), *(m.mean + band)])
        write_csv(out / "moments.csv", header, rows)
    if sc.output.get("paths", True):
        header = ["t", "path"] + [f"x_{i + 1}" for i in range(n)]
        rows = (
            [t, j, *ens.paths[j, k]] for k, t in enumerate(ens.times) for j in range(ens.paths.shape[0])
        )
        write_csv(out / "paths.csv", header, rows)
    term = empirical_moments(ens, 1.0)
    ode = covariance_ode(sc.system, schedule, sc.problem.Sigma0, [1.0])[0]
    energy, energy_se = energy_estimate(ens)
    summary = {
        "scenario": sc.name,
        "paths": paths,
        "dt": dt,
        "seed": seed,
        "scheme": sim["scheme"],
        "terminal_mean": term.mean.tolist(),
        "terminal_mean_se": term.mean_se.tolist(),
        "terminal_cov": term.cov.tolist(),
        "terminal_cov_se": term.cov_se.tolist(),
        "target_mean": sc.problem.mu1.tolist(),
        "target_cov": sc.problem.Sigma1.tolist(),
        "covariance_ode_terminal": ode.tolist(),
        "energy_mc": energy,
        "energy_mc_se": energy_se,
        "expected_cost": result["expected_cost"],
        "mean_jumps_per_path": float(ens.jump_counts().mean()),
    }
    write_json(out / "simulation.json", summary)
    print(
        json.dumps({k: summary[k] for k in ("terminal_mean", "terminal_cov", "terminal_mean_se", "terminal_cov_se")}),
        file=stream,
    )
    return ens, summary


# ------------------------------------------------------------------ parser
def build_parser():
    ap = argparse.ArgumentParser(prog="covsteer", description="Optimal covariance steering for LTV systems.")
    ap.add_argument("--version", action="version", version=f"covsteer {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="controllability diagnostics")
    c.add_argument("scenario")
    c.add_argument("--out", default=None)

    s = sub.add_parser("solve", help="solve for Pi(0) and emit the gain schedule")
    s.add_argument("scenario")
    s.add_argument("--out", default=None)
    s.add_argument("--emit-pi", default=None, metavar="FILE")
    s.add_argument("--emit-gains", default=None, metavar="FILE")

    for name, helptext in (("simulate", "solve and run Monte Carlo"), ("reproduce", "run a built-in example end to end")):
        m = sub.add_parser(name, help=helptext)
        if name == "simulate":
            m.add_argument("scenario")
        else:
            m.add_argument("which", choices=sorted(BUILTIN))
        m.add_argument("--paths", type=int, default=None)
        m.add_argument("--dt", type=float, default=None)
        m.add_argument("--seed", type=int, default=None)
        m.add_argument("--out", default=None)
        m.add_argument("--emit-pi", default=None, metavar="FILE")
        m.add_argument("--emit-gains", default=None, metavar="FILE")

    d = sub.add_parser("dump", help="print a scenario as YAML")
    d.add_argument("scenario")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "reproduce":
            sc = load_scenario(args.which)
        else:
            sc = load_scenario(args.scenario)
        if args.command == "dump":
            sys.stdout.write(dump_scenario(sc))
            return EXIT_OK
        if args.command == "check":
            report = stage_check(sc, args.out)
            return EXIT_OK if report.total else EXIT_VALIDATION
        if args.command == "solve":
            stage_solve(sc, args.out, args.emit_pi, args.emit_gains)
            return EXIT_OK
        out = args.out or str(Path(sc.output["directory"]) / sc.name)
        stage_simulate(sc, out, args.paths, args.dt, args.seed, emit_pi=args.emit_pi, emit_gains=args.emit_gains)
        return EXIT_OK
    except (ModelValidationError, InfeasibleProblemError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except CovsteerError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
