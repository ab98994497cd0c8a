"""
Scenario files (YAML) and the two built-in reference examples.

Layout::

    name: example1
    system:
      A: [[[0.8, -0.1]]]        # entry lists are ascending polynomial coefficients
      B: [[1.0]]
      C: [[1.0]]
      R: [[1.0]]                # optional, identity by default
    noise:
      - {type: wiener, scale: [[2.0]]}
      - type: compound_poisson
        rate: [[[2.0, 1.0]]]    # q x 1 schedule of arrival rates
        jumps: [{law: constant, value: -4.0}]
        compensated: false      # raw jumps (their mean acts as a drift)
    problem: {mu0: [50.0], Sigma0: [[6.0]], mu1: [60.0], Sigma1: [[2.0]]}
    solver: {tol: 1.0e-10, homotopy: true}
    simulation: {paths: 100000, dt: 0.001, seed: 0, scheme: exponential, keep_paths: 10}
    output: {directory: out, moments: true, paths: true, gains: true, pi: false}

Schedules may also be ``{form: piecewise_constant, breaks: [...], values: [...]}``
or ``{form: table, times: [...], values: [...]}``. Jump laws are
``constant`` (value), ``normal`` (mean, std), ``exponential`` (mean) and
``two_point`` (low, high, p_low).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ModelValidationError
from .noise import noise_from_config, noise_to_config
from .schedules import schedule_from_config
from .system import LtvSystem, SteeringProblem

SOLVER_DEFAULTS = {"tol": 1e-10, "homotopy": True}
SIMULATION_DEFAULTS = {"paths": 100000, "dt": 1e-3, "seed": 0, "scheme": "exponential", "keep_paths": 10}
OUTPUT_DEFAULTS = {"directory": "out", "moments": True, "paths": True, "gains": True, "pi": False}


@dataclass(eq=False)
class Scenario:
    name: str
    system: LtvSystem
    problem: SteeringProblem
    solver: dict = field(default_factory=lambda: dict(SOLVER_DEFAULTS))
    simulation: dict = field(default_factory=lambda: dict(SIMULATION_DEFAULTS))
    output: dict = field(default_factory=lambda: dict(OUTPUT_DEFAULTS))


def _merged(defaults, given, block):
    given = dict(given or {})
    unknown = set(given) - set(defaults)
    if unknown:
        raise ModelValidationError(f"unknown keys in {block} block: {sorted(unknown)}")
    out = dict(defaults)
    out.update(given)
    return out


def scenario_from_dict(cfg) -> Scenario:
    if not isinstance(cfg, dict):
        raise ModelValidationError("scenario must be a mapping")
    for block in ("system", "noise", "problem"):
        if block not in cfg:
            raise ModelValidationError(f"scenario lacks the {block!r} block")
    sysc = cfg["system"]
    try:
        system = LtvSystem(
            schedule_from_config(sysc["A"]),
            schedule_from_config(sysc["B"]),
            schedule_from_config(sysc["C"]),
            noise_from_config(cfg["noise"]),
            schedule_from_config(sysc["R"]) if sysc.get("R") is not None else None,
        )
        pc = cfg["problem"]
        problem = SteeringProblem(pc["mu0"], pc["Sigma0"], pc["mu1"], pc["Sigma1"])
    except KeyError as exc:
        raise ModelValidationError(f"scenario lacks key {exc}") from exc
    sim = _merged(SIMULATION_DEFAULTS, cfg.get("simulation"), "simulation")
    sim["paths"] = int(sim["paths"])
    sim["seed"] = int(sim["seed"])
    sim["keep_paths"] = int(sim["keep_paths"])
    sim["dt"] = float(sim["dt"])
    solver = _merged(SOLVER_DEFAULTS, cfg.get("solver"), "solver")
    solver["tol"] = float(solver["tol"])
    solver["homotopy"] = bool(solver["homotopy"])
    return Scenario(
        name=str(cfg.get("name", "scenario")),
        system=system,
        problem=problem,
        solver=solver,
        simulation=sim,
        output=_merged(OUTPUT_DEFAULTS, cfg.get("output"), "output"),
    )


def scenario_to_dict(sc: Scenario):
    s = sc.system
    p = sc.problem
    return {
        "name": sc.name,
        "system": {
            "A": s.A.to_config(),
            "B": s.B.to_config(),
            "C": s.C.to_config(),
            "R": s.R.to_config(),
        },
        "noise": noise_to_config(s.noise),
        "problem": {
            "mu0": p.mu0.tolist(),
            "Sigma0": p.Sigma0.tolist(),
            "mu1": p.mu1.tolist(),
            "Sigma1": p.Sigma1.tolist(),
        },
        "solver": dict(sc.solver),
        "simulation": dict(sc.simulation),
        "output": dict(sc.output),
    }


def load_scenario(source) -> Scenario:
    """Load a scenario from a path, a built-in name or YAML text."""
    if isinstance(source, dict):
        return scenario_from_dict(copy.deepcopy(source))
    text = str(source)
    if text in BUILTIN:
        return builtin(text)
    if "\n" not in text and _is_file(text):
        text = Path(text).read_text()
    elif "\n" not in text and ":" not in text:
        raise ModelValidationError(f"scenario file {source!r} not found")
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelValidationError(f"invalid scenario YAML: {exc}") from exc
    return scenario_from_dict(cfg)


def _is_file(text):
    try:
        return Path(text).is_file()
    except OSError:
        # names too long for the filesystem cannot be files
        return False


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)


EXAMPLE1 = {
    "name": "example1",
    "system": {"A": [[[0.8, -0.1]]], "B": [[1.0]], "C": [[1.0]], "R": [[1.0]]},
    "noise": [
        {"type": "wiener", "scale": [[2.0]]},
        {
            "type": "compound_poisson",
            "rate": [[[2.0, 1.0]]],
            "jumps": [{"law": "constant", "value": -4.0}],
            "compensated": False,
        },
    ],
    "problem": {"mu0": [50.0], "Sigma0": [[6.0]], "mu1": [60.0], "Sigma1": [[2.0]]},
    "simulation": {"paths": 100000, "dt": 1e-3, "seed": 0},
}

EXAMPLE2 = {
    "name": "example2",
    "system": {
        "A": [[0.0, 1.0], [0.0, 0.0]],
        "B": [[0.0], [1.0]],
        "C": [[0.0], [1.0]],
        "R": [[1.0]],
    },
    "noise": [
        {"type": "wiener", "scale": [[0.2]]},
        {
            "type": "compound_poisson",
            "rate": [[[5.0, -1.0]]],
            "jumps": [{"law": "normal", "mean": -0.5, "std": 0.1}],
            "compensated": False,
        },
    ],
    "problem": {
        "mu0": [0.0, 0.0],
        "Sigma0": [[0.6, 0.0], [0.0, 0.6]],
        "mu1": [0.0, 0.0],
        "Sigma1": [[0.2, 0.0], [0.0, 0.1]],
    },
    "simulation": {"paths": 100000, "dt": 1e-3, "seed": 0},
}

BUILTIN = {"example1": EXAMPLE1, "example2": EXAMPLE2}


def builtin(name) -> Scenario:
    if name not in BUILTIN:
        raise ModelValidationError(f"unknown built-in scenario {name!r}; choose from {sorted(BUILTIN)}")
    return scenario_from_dict(copy.deepcopy(BUILTIN[name]))


def scenarios_equivalent(a: Scenario, b: Scenario) -> bool:
    """Structural equality through the plain-data form."""
    return _normalize(scenario_to_dict(a)) == _normalize(scenario_to_dict(b))


def _normalize(obj):
    if isinstance(obj, dict):
        return {k: _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, (np.floating, float, int)) and not isinstance(obj, bool):
        return float(obj)
    return obj


__all__ = [
    "BUILTIN",
    "Scenario",
    "builtin",
    "dump_scenario",
    "load_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "scenarios_equivalent",
]
