"""``singular-flow`` command line: analyze, integrate, homogenize, check.

Exit codes: 0 success, 1 input/schema errors, 2 inconsistent system,
3 max iterations / rank drift / rejected step, 4 initial point off the
constraint manifold, 5 a checked trajectory violates the equations.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import engine
from .autonomize import homogenize, jet_field_autonomize, second_order_reduce
from .errors import AlreadyAutonomous, OffManifold, SingularFlowError, StepRejected
from .integrator import integrate, read_csv, write_csv
from .mechanics import LagrangianSpec, SkinnerRuskSpec, lagrangian_system, skinner_rusk_system
from .system import ImplicitResiduals, LinSingSystem, SecondOrderSystem, check_solution_samples, load_system, serialize

EXIT_OK, EXIT_INPUT, EXIT_INCONSISTENT, EXIT_NUMERIC, EXIT_OFF_MANIFOLD, EXIT_CHECK = 0, 1, 2, 3, 4, 5
STATUS_EXIT = {
    engine.SOLVED: EXIT_OK,
    engine.INCONSISTENT: EXIT_INCONSISTENT,
    engine.MAX_ITERATIONS: EXIT_NUMERIC,
    engine.RANK_DRIFT: EXIT_NUMERIC,
}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    spec: Path
    seeds: list[list[float]] = field(default_factory=list)
    tol: float = engine.DEFAULT_TOL
    rank_tol: float = engine.DEFAULT_RANK_TOL
    mode: str | None = None
    gamma: list[str] | None = None
    x0: list[float] | None = None
    t0: float = 0.0
    t1: float | None = None
    dt: float | None = None
    project_every: int = 10
    traj: Path | None = None
    out: Path | None = None
    field_values: bool = False


# JSON with fixed float formatting ------------------------------------------------

def _fmt_float(v: float) -> str:
    if math.isnan(v) or math.isinf(v):
        return json.dumps(str(v))
    text = format(v, ".17g")
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON; floats always carry 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# pipeline ------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise UsageError(f"not a comma-separated list of numbers: {text!r}") from err


def _load(cfg: RunConfig):
    try:
        text = Path(cfg.spec).read_text()
    except OSError as err:
        raise UsageError(f"cannot read {cfg.spec}: {err}") from err
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise UsageError(f"{cfg.spec}: invalid JSON: {err}") from err
    return doc, load_system(doc)


def _autonomous(system, doc: dict, cfg: RunConfig):
    mode = cfg.mode or doc.get("mode", "jet_field")
    gamma = cfg.gamma if cfg.gamma is not None else doc.get("gamma")
    if isinstance(system, LagrangianSpec) and not isinstance(system, SkinnerRuskSpec):
        return lagrangian_system(system)
    if isinstance(system, SkinnerRuskSpec):
        return skinner_rusk_system(system)
    if isinstance(system, SecondOrderSystem):
        return second_order_reduce(system, mode, gamma)
    if isinstance(system, LinSingSystem):
        if not system.time_dependent:
            return system
        return homogenize(system) if mode == "vector_hull" else jet_field_autonomize(system, gamma)
    if isinstance(system, ImplicitResiduals):
        raise UsageError("implicit systems can only be checked, not analyzed")
    raise UsageError(f"unsupported system type {type(system).__name__}")


def _complete(point: Sequence[float], auto, t0: float) -> list[float]:
    p = list(point)
    ti = auto.time_index
    if ti is not None and len(p) == auto.dim - 1:
        p.insert(ti, t0)
    if len(p) != auto.dim:
        raise UsageError(f"point {list(point)} has {len(point)} entries; states are {list(auto.names)}")
    return p


def _seeds(cfg: RunConfig, doc: dict, auto) -> list[list[float]]:
    raw = cfg.seeds or doc.get("seeds") or ([cfg.x0] if cfg.x0 else None) or ([doc["x0"]] if "x0" in doc else None)
    if not raw:
        raise UsageError("no seed points: pass --seed or add 'seeds' to the system document")
    return [_complete(s, auto, cfg.t0) for s in raw]


def _analyze(cfg: RunConfig):
    doc, system = _load(cfg)
    auto = _autonomous(system, doc, cfg)
    result = engine.run_constraint_algorithm(auto, _seeds(cfg, doc, auto), tol=cfg.tol, rank_tol=cfg.rank_tol)
    return doc, system, auto, result


def _write(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")


def cmd_analyze(cfg: RunConfig) -> int:
    _, _, _, result = _analyze(cfg)
    _write(dumps(engine.report(result, cfg.field_values)), cfg.out)
    return STATUS_EXIT[result.status]


def cmd_integrate(cfg: RunConfig) -> int:
    doc, _, auto, result = _analyze(cfg)
    if result.status != engine.SOLVED:
        print(f"analysis status {result.status}: {result.message}", file=sys.stderr)
        return STATUS_EXIT[result.status]
    x0 = cfg.x0 if cfg.x0 is not None else doc.get("x0")
    if x0 is None:
        raise UsageError("no initial point: pass --x0 or add 'x0' to the system document")
    if cfg.t1 is None or cfg.dt is None:
        raise UsageError("integrate needs --t1 and --dt")
    x0 = _complete(x0, auto, cfg.t0)
    try:
        traj = integrate(result, x0, (cfg.t0, cfg.t1), cfg.dt, cfg.project_every)
    except OffManifold as err:
        print(f"OffManifold: {err}", file=sys.stderr)
        return EXIT_OFF_MANIFOLD
    except StepRejected as err:
        print(f"StepRejected: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    ts = getattr(auto, "time_state", None)
    if cfg.out is None:
        write_csv(traj, sys.stdout, ts)
    else:
        write_csv(traj, cfg.out, ts)
    print(f"max drift {traj.max_drift:.3e} over {len(traj.times) - 1} steps", file=sys.stderr)
    return EXIT_OK


def cmd_homogenize(cfg: RunConfig) -> int:
    doc, system = _load(cfg)
    if isinstance(system, (LagrangianSpec, ImplicitResiduals)):
        raise UsageError(f"kind {doc['kind']!r} has no expression form to homogenize")
    if isinstance(system, LinSingSystem) and not system.time_dependent:
        raise AlreadyAutonomous("system is already autonomous")
    auto = _autonomous(system, doc, cfg)
    _write(dumps(serialize(auto)), cfg.out)
    return EXIT_OK


def cmd_check(cfg: RunConfig) -> int:
    doc, system = _load(cfg)
    if cfg.traj is None:
        raise UsageError("check needs --traj")
    time_name = system.chart.time_name or doc.get("time_variable", "t")
    try:
        traj = read_csv(cfg.traj, time_name)
    except (OSError, ValueError) as err:
        raise UsageError(f"cannot read trajectory: {err}") from err
    reports = check_solution_samples(system, traj, cfg.tol)
    worst = max((r.residual for r in reports), default=0.0)
    failed = [r.time for r in reports if not r.ok]
    summary = {"samples": len(reports), "max_residual": worst, "tol": cfg.tol, "ok": not failed,
               "failed_times": failed[:20]}
    _write(dumps(summary), cfg.out)
    return EXIT_OK if not failed else EXIT_CHECK


COMMANDS = {"analyze": cmd_analyze, "integrate": cmd_integrate, "homogenize": cmd_homogenize, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="singular-flow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, analysis=True):
        sp.add_argument("spec", type=Path, help="system spec (JSON)")
        sp.add_argument("--out", type=Path, help="output path (default: stdout)")
        sp.add_argument("--mode", choices=["vector_hull", "jet_field"], help="autonomization")
        sp.add_argument("--gamma", help="jet field components, comma separated")
        if analysis:
            sp.add_argument("--seed", action="append", default=[], help="seed point v1,v2,... (repeatable)")
            sp.add_argument("--tol", type=float, default=engine.DEFAULT_TOL)
            sp.add_argument("--rank-tol", type=float, default=engine.DEFAULT_RANK_TOL)

    a = sub.add_parser("analyze", help="run the constraint algorithm")
    common(a)
    a.add_argument("--field", action="store_true", help="include field values at final samples")
    i = sub.add_parser("integrate", help="integrate the solution field")
    common(i)
    i.add_argument("--x0", help="initial point v1,v2,...")
    i.add_argument("--t0", type=float, default=0.0)
    i.add_argument("--t1", type=float)
    i.add_argument("--dt", type=float)
    i.add_argument("--project-every", type=int, default=10)
    h = sub.add_parser("homogenize", help="write the autonomized system")
    common(h, analysis=False)
    c = sub.add_parser("check", help="check a sampled trajectory against the equations")
    c.add_argument("spec", type=Path)
    c.add_argument("--traj", type=Path, required=True)
    c.add_argument("--tol", type=float, default=1e-6)
    c.add_argument("--out", type=Path)
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(ns.command, ns.spec, out=getattr(ns, "out", None))
    cfg.mode = getattr(ns, "mode", None)
    gamma = getattr(ns, "gamma", None)
    cfg.gamma = [g.strip() for g in gamma.split(",")] if gamma else None
    cfg.seeds = [_floats(s) for s in getattr(ns, "seed", [])]
    cfg.tol = getattr(ns, "tol", cfg.tol)
    cfg.rank_tol = getattr(ns, "rank_tol", cfg.rank_tol)
    cfg.field_values = getattr(ns, "field", False)
    if getattr(ns, "x0", None):
        cfg.x0 = _floats(ns.x0)
    cfg.t0 = getattr(ns, "t0", 0.0)
    cfg.t1 = getattr(ns, "t1", None)
    cfg.dt = getattr(ns, "dt", None)
    cfg.project_every = getattr(ns, "project_every", 10)
    cfg.traj = getattr(ns, "traj", None)
    if cfg.dt is not None and cfg.dt <= 0:
        raise UsageError("--dt must be positive")
    if cfg.project_every < 1:
        raise UsageError("--project-every must be at least 1")
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except AlreadyAutonomous as err:
        print(f"AlreadyAutonomous: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (UsageError, SingularFlowError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
