"""Command line front end.

Exit codes: 0 pass, 2 inequality violation / failed validation / solver
failure, 1 usage or configuration error.
"""

import argparse
import json
import os
import sys

from .exceptions import ConcaveEllipticError, NotAdmissible, SolverError
from .harness import CONFIG_HELP, RUNNERS, ConfigError, ExperimentConfig, format_csv, run_solve
from .torus import field_to_csv

EXIT_PASS, EXIT_USAGE, EXIT_FAIL = 0, 1, 2

SUBCOMMANDS = {
    "solve": "solve",
    "concavity": "concavity",
    "kt-check": "kt-suite",
    "identity-check": "identity-check",
    "validate": "validate",
}
CSV_NAMES = {
    "concavity": "concavity.csv",
    "kt-suite": "kt.csv",
    "identity-check": "identity.csv",
    "validate": "validation.csv",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="concave-elliptic", description="Concave elliptic equations on flat tori.",
                epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, epilog=CONFIG_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", help="output directory")
        s.add_argument("--grid", type=int, help="override geometry gridsize")
        s.add_argument("--tol", type=float, help="override tol_residual")
        s.add_argument("--seed", type=int, help="override seed")
        s.add_argument("--format", choices=("csv", "json"), default="json",
                       help="format printed to stdout (default json)")
    return p


def load_config(path, command, grid=None, tol=None, seed=None):
    """Read and validate a config file; CLI overrides win over file values."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg} "
                          f"(line {exc.lineno}, column {exc.colno})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    experiment = SUBCOMMANDS[command]
    given = raw.get("experiment")
    if given is not None and SUBCOMMANDS.get(given, given) != experiment:
        raise ConfigError(f"config experiment {given!r} does not match command {command!r}")
    raw = dict(raw, experiment=experiment)
    if grid is not None:
        raw["geometry"] = dict(raw.get("geometry") or {}, gridsize=grid)
    if tol is not None:
        raw["tolerances"] = dict(raw.get("tolerances") or {}, tol_residual=tol)
    if seed is not None:
        raw["seed"] = seed
    return ExperimentConfig.from_dict(raw)


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write(out, name, text):
    if out is None:
        return
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, name), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _emit(args, summary, csv_text):
    _write(args.out, "summary.json", _dump_json(summary))
    if csv_text is not None:
        _write(args.out, CSV_NAMES.get(summary["experiment"], "data.csv"), csv_text)
    if args.format == "csv" and csv_text is not None:
        sys.stdout.write(csv_text)
    else:
        sys.stdout.write(_dump_json(summary))


def _run_solve(args, config):
    try:
        report = run_solve(config)
    except SolverError as exc:
        state = getattr(exc, "state", None)
        summary = {"experiment": "solve", "error": f"{type(exc).__name__}: {exc}",
                   "verdict": "fail"}
        if state is not None:
            summary.update(state.to_dict())
        _emit(args, summary, None)
        return EXIT_FAIL
    summary = report.to_dict()
    summary["verdict"] = "pass" if report.passed else "fail"
    _write(args.out, "solve_result.json", _dump_json(report.result.to_dict()))
    if args.out is not None:
        with open(os.path.join(args.out, "phi.csv"), "w", encoding="utf-8", newline="\n") as fh:
            field_to_csv(report.result.phi, fh)
    _emit(args, summary, None)
    return EXIT_PASS if report.passed else EXIT_FAIL


def main(argv=None):
    """Entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
    except UsageError as exc:
        sys.stderr.write(f"{parser.format_usage()}error: {exc}\n\n{CONFIG_HELP}")
        return EXIT_USAGE
    try:
        config = load_config(args.config, args.command, args.grid, args.tol, args.seed)
        if config.experiment == "solve":
            return _run_solve(args, config)
        report = RUNNERS[config.experiment](config)
    except NotAdmissible as exc:
        sys.stderr.write(f"NotAdmissible: {exc}\n")
        return EXIT_USAGE
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n\n{CONFIG_HELP}")
        return EXIT_USAGE
    except ConcaveEllipticError as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return EXIT_USAGE
    csv_text = format_csv(report.csv_header, report.csv_rows())
    _emit(args, report.to_dict(), csv_text)
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
