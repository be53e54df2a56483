"""``talenti-lab`` command line.

Exit codes: 0 success, 2 invalid input or usage, 3 numerical or
serialization failure, 4 a checked property or contract failed.
Machine-readable output is JSON (files or stdout); summaries go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .control import bathtub_optimize, spacetime_volume
from .errors import (
    ConfigurationError,
    ContractError,
    DomainError,
    FieldFormatError,
    NumericalError,
    SerializationError,
)
from .experiments import (
    CounterexampleConfig,
    profile_table,
    run_counterexample,
    sweep_experiment,
    talenti_experiment,
)
from .grid import RadialField, SpaceTimeField, TimeGrid
from .heat import SCHEMES, solve_adjoint, solve_heat
from .io import dumps_report, emit_report, load_field, save_field, write_table
from .rearrangement import dominates, schwarz_rearrange

log = logging.getLogger("talenti_lab")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_PROPERTY = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (x > 0.0 and np.isfinite(x)):
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return x


def _positive_int(text):
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return n


def _fraction(text):
    x = _positive_float(text)
    if x >= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1): {text!r}")
    return x


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="talenti-lab", description="Rearrangement and heat-equation control experiments on a ball.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("rearrange", help="Schwarz rearrangement of a field CSV (per time level)")
    s.add_argument("field", type=Path)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("compare", help="concentration-order test f < g, JSON verdict on stdout")
    s.add_argument("f", type=Path)
    s.add_argument("g", type=Path)
    s.add_argument("--tol", type=float, default=1e-9)
    s.add_argument("--level", type=int, default=None, help="time level for space-time fields (default: last)")

    s = sub.add_parser("solve", help="solve the heat equation for a source field")
    s.add_argument("source", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--scheme", choices=SCHEMES, default="implicit-euler")

    s = sub.add_parser("adjoint", help="backward heat equation from a terminal radial field")
    s.add_argument("terminal", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--T", type=_positive_float, default=1.0)
    s.add_argument("--nt", type=_positive_int, default=256)
    s.add_argument("--scheme", choices=SCHEMES, default="implicit-euler")

    s = sub.add_parser("optimize", help="bathtub optimal control for a terminal weight")
    s.add_argument("--terminal", type=Path, required=True)
    s.add_argument("--volume", type=_fraction, required=True, help="V0 as a fraction of Vol((0,T) x ball)")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--report", type=Path)
    s.add_argument("--T", type=_positive_float, default=1.0)
    s.add_argument("--nt", type=_positive_int, default=256)
    s.add_argument("--scheme", choices=SCHEMES, default="implicit-euler")

    s = sub.add_parser("experiment", help="run a packaged experiment")
    exp = s.add_subparsers(dest="experiment", required=True, parser_class=_Parser)

    e = exp.add_parser("talenti", help="parabolic Talenti comparison on random controls")
    e.add_argument("--samples", type=_positive_int, default=20)
    e.add_argument("--nr", type=_positive_int, default=128)
    e.add_argument("--nt", type=_positive_int, default=128)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--d", type=_positive_int, default=2)
    e.add_argument("--R", type=_positive_float, default=1.0)
    e.add_argument("--T", type=_positive_float, default=1.0)
    e.add_argument("--volume", type=_fraction, default=0.25)
    e.add_argument("--scheme", choices=SCHEMES, default="implicit-euler")
    e.add_argument("--out", type=Path)

    for name, helptext in (("counterexample", "two cutoff weights with different optimal controls"),
                           ("sweep", "try to falsify maximal-control candidates")):
        e = exp.add_parser(name, help=helptext)
        e.add_argument("--config", type=Path, help="JSON with keys R, d, T, V0_fraction, n_r, n_t, scheme, seed")
        e.add_argument("--out", type=Path)
        e.add_argument("--nr", type=_positive_int)
        e.add_argument("--nt", type=_positive_int)
        e.add_argument("--seed", type=int)
        if name == "counterexample":
            e.add_argument("--profiles-dir", type=Path)
        else:
            e.add_argument("--samples", type=_positive_int, default=4, help="random bang-bang adversaries")
            e.add_argument("--tol", type=float, default=1e-9)
    return p


# -------------------------------------------------------------- helpers


def _require_input(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"no such input file: {path}")


def _require_output(path: Path | None):
    if path is None:
        return
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")
    if not os.access(parent, os.W_OK):
        raise PermissionError(f"output directory is not writable: {parent}")


def _summary(msg: str):
    print(msg, file=sys.stderr)


def _emit_json(data, out: Path | None, required=()):
    if out is None:
        sys.stdout.write(dumps_report(data, required))
    else:
        emit_report(data, out, required)


def _counterexample_config(args) -> CounterexampleConfig:
    cfg = CounterexampleConfig.from_json(args.config) if args.config else CounterexampleConfig()
    overrides = {k: v for k, v in (("n_r", args.nr), ("n_t", args.nt), ("seed", args.seed)) if v is not None}
    return replace(cfg, **overrides) if overrides else cfg


# ------------------------------------------------------------- commands


def cmd_rearrange(args) -> int:
    _require_input(args.field)
    _require_output(args.out)
    field = load_field(args.field)
    sharp = schwarz_rearrange(field)
    save_field(sharp, args.out)
    _summary(f"rearranged {args.field} -> {args.out}")
    return EXIT_OK


def _radial_at(field, level):
    if isinstance(field, RadialField):
        return field
    return field.at(field.tgrid.n_t if level is None else level)


def cmd_compare(args) -> int:
    _require_input(args.f)
    _require_input(args.g)
    f, g = load_field(args.f), load_field(args.g)
    try:
        fr, gr = _radial_at(f, args.level), _radial_at(g, args.level)
    except IndexError:
        raise ConfigurationError(f"time level {args.level} out of range") from None
    dom = dominates(fr, gr, tol=args.tol)
    _emit_json({"dominates": dom.holds, "margin": dom.margin, "node": dom.node,
                "radius": dom.radius, "tol": args.tol}, None)
    _summary(f"f < g: {dom.holds} (margin {dom.margin:.3e} at r = {dom.radius:.4g})")
    return EXIT_OK


def cmd_solve(args) -> int:
    _require_input(args.source)
    _require_output(args.out)
    f = load_field(args.source)
    if not isinstance(f, SpaceTimeField):
        raise ConfigurationError("source must be a space-time field (n_t >= 1)")
    sol = solve_heat(f, args.scheme)
    save_field(sol.u, args.out)
    _summary(f"solved with {args.scheme}; step residual {sol.residual_norm:.3e}")
    return EXIT_OK


def _load_terminal(path):
    phi = load_field(path)
    if not isinstance(phi, RadialField):
        raise ConfigurationError("terminal weight must be a radial field (n_t = 0)")
    return phi


def cmd_adjoint(args) -> int:
    _require_input(args.terminal)
    _require_output(args.out)
    phi = _load_terminal(args.terminal)
    adj = solve_adjoint(phi, TimeGrid(args.T, args.nt), args.scheme)
    save_field(adj.p, args.out)
    _summary(f"adjoint solved; max dp/dr before T = {adj.slope_bound():.3e}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    _require_input(args.terminal)
    _require_output(args.out)
    _require_output(args.report)
    phi = _load_terminal(args.terminal)
    tgrid = TimeGrid(args.T, args.nt)
    V0 = args.volume * spacetime_volume(phi.grid, tgrid)
    sol = bathtub_optimize(phi, V0, tgrid, args.scheme)
    report = {
        "c": sol.multiplier,
        "c_interval": list(sol.multiplier_interval),
        "objective": sol.objective,
        "exact_objective": sol.exact_objective,
        "radius_curve": sol.radius_curve,
        "feasibility_residual": sol.feasibility_residual,
        "V0": V0,
        "iterations": sol.iterations,
    }
    text = dumps_report(report, ("c", "objective", "radius_curve", "feasibility_residual"))
    save_field(sol.control.f, args.out)
    if args.report:
        emit_report(report, args.report, ())
    else:
        sys.stdout.write(text)
    _summary(f"c = {sol.multiplier:.6g}, objective = {sol.objective:.6g}")
    return EXIT_OK


def cmd_talenti(args) -> int:
    _require_output(args.out)
    result = talenti_experiment(args.samples, args.nr, args.nt, args.seed, args.R, args.d, args.T,
                                args.volume, args.scheme)
    _emit_json(result, args.out)
    _summary(f"worst Talenti margin {result['worst_margin']:.3e} over {args.samples} samples; "
             f"all within tolerance: {result['all_hold']}")
    return EXIT_OK if result["all_hold"] else EXIT_PROPERTY


def cmd_counterexample(args) -> int:
    _require_output(args.out)
    if args.profiles_dir is not None:
        _require_output(args.profiles_dir / "x")
    cfg = _counterexample_config(args)
    run = run_counterexample(cfg)
    report = run.report.to_dict()
    text = dumps_report(report, ("c_phi", "c_psi", "control_distance", "cross_objectives"))
    if args.profiles_dir is not None:
        for name, (header, rows) in profile_table(run).items():
            write_table(args.profiles_dir / name, header, rows)
    if args.out is None:
        sys.stdout.write(text)
    else:
        emit_report(report, args.out)
    failed = [k for k, ok in run.report.invariants.items() if not ok]
    _summary(f"c_phi = {run.report.c_phi:.6g}, c_psi = {run.report.c_psi:.6g}, "
             f"control distance {run.report.control_distance:.4g}; "
             + ("all invariants hold" if not failed else f"failed: {', '.join(failed)}"))
    return EXIT_OK if not failed else EXIT_PROPERTY


def cmd_sweep(args) -> int:
    _require_output(args.out)
    cfg = _counterexample_config(args)
    run = run_counterexample(cfg)
    result = sweep_experiment(run, n_random=args.samples, seed=cfg.seed, tol=args.tol, scheme=cfg.scheme)
    result["config"] = run.report.config
    _emit_json(result, args.out)
    survivors = [k for k, v in result["candidates"].items() if not v["falsified"]]
    _summary("every candidate falsified" if not survivors else f"not falsified: {', '.join(survivors)}")
    return EXIT_OK if not survivors else EXIT_PROPERTY


COMMANDS = {
    "rearrange": cmd_rearrange,
    "compare": cmd_compare,
    "solve": cmd_solve,
    "adjoint": cmd_adjoint,
    "optimize": cmd_optimize,
}
EXPERIMENTS = {"talenti": cmd_talenti, "counterexample": cmd_counterexample, "sweep": cmd_sweep}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    handler = EXPERIMENTS[args.experiment] if args.command == "experiment" else COMMANDS[args.command]
    try:
        return handler(args)
    except ContractError as exc:
        _summary(f"contract failure: {exc}")
        return EXIT_PROPERTY
    except (NumericalError, SerializationError) as exc:
        _summary(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (FieldFormatError, ConfigurationError, DomainError, OSError, json.JSONDecodeError) as exc:
        _summary(f"invalid input: {exc}")
        return EXIT_INPUT


def main(argv=None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
