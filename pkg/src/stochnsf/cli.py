"""Command line entry point: ``stochnsf <subcommand> [options]``.

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from .config import RunConfig
from .errors import ConfigError, StochNSFError
from .experiment import (
    compare_schemes,
    load_run_config,
    mc_budget_check,
    run_experiment,
    weak_strong_experiment,
)
from .generic import verify_generic
from .integrators import StabilityWarning
from .noise import increment_covariance, verify_stationarity
from .properties import all_passed, run_property_checks
from .spectral import TorusGrid

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2


def _common(parser: argparse.ArgumentParser, config_required: bool = True):
    parser.add_argument("--config", type=Path, required=config_required,
                        help="YAML run configuration, or metadata.json of a previous run")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--paths", type=int, help="override the configured number of paths")
    parser.add_argument("--quiet", action="store_true", help="suppress the report on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochnsf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="simulate an ensemble and write diagnostics"))
    _common(sub.add_parser("mc-budget", help="Monte Carlo dissipation budget against its bound"))
    p = sub.add_parser("weak-strong", help="relative energy of perturbed runs against the Gronwall envelope")
    _common(p)
    p.add_argument("--amplitude", type=float, default=1e-3, help="psi perturbation amplitude (default 1e-3)")
    p = sub.add_parser("compare-schemes", help="coupled-path convergence of scheme pairings")
    _common(p)
    p.add_argument("--dt", type=float, nargs="+", required=True, help="time steps, coarsest first")
    p.add_argument("--min-order", type=float, default=0.5, help="order required of each pairing (default 0.5)")
    _common(sub.add_parser("verify-noise", help="stationarity residuals and increment covariance"))
    p = sub.add_parser("verify-generic", help="structural identities of the L, M, B operators")
    _common(p, config_required=False)
    p.add_argument("--m", type=int, default=4, help="cutoff when no config is given (default 4)")
    p.add_argument("--samples", type=int, default=20)
    p = sub.add_parser("verify-properties", help="full invariant battery")
    _common(p)
    return parser


def _load(args) -> RunConfig:
    config = load_run_config(args.config)
    if args.seed is not None or args.paths is not None or args.out is not None:
        config = config.with_overrides(seed=args.seed, n_paths=args.paths, output=args.out)
    return config


def _emit(args, report: dict):
    if not args.quiet:
        print(json.dumps(report, indent=2, sort_keys=True))


def _write(args, name: str, report: dict):
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / name).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _run(args) -> int:
    config = _load(args)
    output = run_experiment(config, args.out)
    summary = output.summary
    report = {
        "directory": str(output.directory),
        "completed": summary["completed"],
        "failed": summary["failed"],
        "warnings": output.metadata["warnings"],
    }
    _emit(args, report)
    return EXIT_CHECK_FAILED if summary["all_failed"] else EXIT_OK


def _mc_budget(args) -> int:
    config = _load(args)
    report = mc_budget_check(config, args.out)
    _emit(args, report.as_dict())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def _weak_strong(args) -> int:
    config = _load(args)
    report = weak_strong_experiment(config, args.amplitude, out=args.out)
    _emit(args, report.as_dict())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def _compare(args) -> int:
    config = _load(args)
    result = compare_schemes(config, args.dt, out=args.out)
    report = result.as_dict()
    _emit(args, report)
    ok = result.galerkin_monotone
    for table in result.tables.values():
        ok = ok and table.monotone and table.order is not None and table.order >= args.min_order
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _verify_noise(args) -> int:
    config = _load(args)
    stationarity = verify_stationarity(config.basis)
    covariance = increment_covariance(seed=config.seed)
    report = {
        "stationarity": {"residuals": stationarity.residuals, "tolerance": stationarity.tol,
                         "passed": stationarity.passed},
        "covariance": {"max_z_score": covariance.max_z, "entries": int(covariance.z_scores.size),
                       "samples": covariance.n_samples, "passed": covariance.passed},
    }
    _emit(args, report)
    _write(args, "verify_noise.json", report)
    return EXIT_OK if stationarity.passed and covariance.passed else EXIT_CHECK_FAILED


def _verify_generic(args) -> int:
    grid = _load(args).grid if args.config is not None else TorusGrid(args.m)
    seed = args.seed if args.seed is not None else 0
    result = verify_generic(grid, samples=args.samples, seed=seed)
    report = result.as_dict()
    _emit(args, report)
    _write(args, "verify_generic.json", report)
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def _verify_properties(args) -> int:
    config = _load(args)
    checks = run_property_checks(config.basis, config.params, seed=config.seed)
    report = {"passed": all_passed(checks), "checks": [c.as_dict() for c in checks]}
    _emit(args, report)
    _write(args, "verify_properties.json", report)
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


COMMANDS = {
    "run": _run,
    "mc-budget": _mc_budget,
    "weak-strong": _weak_strong,
    "compare-schemes": _compare,
    "verify-noise": _verify_noise,
    "verify-generic": _verify_generic,
    "verify-properties": _verify_properties,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StabilityWarning)
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_USAGE
    except StochNSFError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
