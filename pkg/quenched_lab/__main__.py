"""
quenched-lab - Main Entry Point

This module provides the CLI interface: one subcommand per experiment, each loading an
INI config, validating the system and writing CSV data plus a JSON summary.
"""

import argparse
import logging
import sys

from . import __version__
from .config import LogConfig, load_config
from .errors import NumericalError, ValidationError
from .experiments import build_system, run_experiment, run_validate, worker_pool
from .logger import setup_logging
from .reports import ReportWriter
from .selftest import run_selftest
from .validation import ERROR

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

EXPERIMENTS = {
    "closed-spectrum": ("Closed equilibrium, multipliers and conformality", "expected_pressure"),
    "escape-rate": ("Quenched escape rate by two estimators", "decay"),
    "extremal-index": ("Extremal index along a shrinking hole schedule", "theta_mean"),
    "gumbel": ("Extreme value law for an observation", "gumbel_prediction"),
    "hitting-times": ("Scaled first hitting times against Exp(theta)", "ks_pvalue"),
    "bowen": ("Expected pressure curve and dimension of the survivor set", "h"),
    "raccim": ("Conditionally invariant density and its identities", "alpha"),
    "decay": ("Decay of correlations for the open cocycle", "kappa"),
}


def parse_args(argv=None):
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(
        prog="quenched-lab",
        description="quenched-lab - Thermodynamic formalism for random open interval maps",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  quenched-lab selftest
  quenched-lab validate --config configs/beta_iid.ini
  quenched-lab escape-rate --config configs/doubling.ini --out results/doubling
  quenched-lab extremal-index --config configs/doubling_left.ini --threads 4
  quenched-lab gumbel --config configs/three_branch_gumbel.ini --seed 7
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Path to configuration file")
    common.add_argument("--out", help="Output directory for CSV and JSON files")
    common.add_argument("--seed", type=int, help="Override the driving seed")
    common.add_argument("--threads", type=int, help="Worker threads")
    common.add_argument("--verbose", action="store_true", help="Enable debug logging")

    subparsers = parser.add_subparsers(dest="command", help="Command to run")
    subparsers.add_parser(
        "validate", parents=[common], help="Check structural hypotheses of a config"
    )
    for name, (text, _) in EXPERIMENTS.items():
        subparsers.add_parser(name, parents=[common], help=text)
    subparsers.add_parser("selftest", parents=[common], help="Run the built-in property suite")

    return parser.parse_args(argv)


def _load(args):
    config = load_config(
        config_path=args.config,
        seed=args.seed,
        threads=args.threads,
        output_dir=args.out,
        debug=args.verbose,
    )
    setup_logging(config.logging, args.command)
    logger.info("Starting quenched-lab v%s (%s)", __version__, args.command)
    return config


def _guarded(handler):
    """Map lab errors onto exit codes the same way for every command."""

    def wrapper(args):
        try:
            return handler(args)
        except FileNotFoundError as e:
            print(f"[ERROR] {e}")
            return EXIT_INVALID
        except (ValidationError, ValueError) as e:
            # Covers config parse errors as well
            print(f"[ERROR] Validation failed: {e}")
            return EXIT_INVALID
        except NumericalError as e:
            logger.error("Numerical failure: %s", e)
            print(f"[ERROR] Numerical failure: {e}")
            return EXIT_NUMERICAL
        except Exception as e:
            logger.exception("Fatal error: %s", e)
            print(f"[ERROR] Fatal error: {e}")
            return EXIT_ERROR

    wrapper.__doc__ = handler.__doc__
    return wrapper


@_guarded
def cmd_validate(args):
    """Handle the validate command: run every structural check and write validation.csv."""
    if args.config is None:
        print("[ERROR] validate needs --config")
        return EXIT_ERROR
    config = _load(args)
    system = build_system(config)
    writer = ReportWriter(config.run.output_dir, "validate", config)
    report = run_validate(system, writer)
    writer.write_summary(report.summary())

    for check in report.checks:
        if check.passed:
            continue
        tag = "[FAIL]" if check.severity == ERROR else "[WARN]"
        print(f"{tag} {check.name}: {check.detail}")
    if not report.ok:
        print(f"[FAIL] {len(report.failures)} check(s) failed")
        return EXIT_INVALID
    print(f"[OK] {len(report.checks)} checks, {len(report.warnings)} warning(s)")
    return EXIT_OK


@_guarded
def cmd_experiment(args):
    """Handle an experiment command: validate, run, write data files and the summary."""
    if args.config is None:
        print(f"[ERROR] {args.command} needs --config")
        return EXIT_ERROR
    config = _load(args)
    results, writer = run_experiment(args.command, config)

    headline = EXPERIMENTS[args.command][1]
    print(f"[OK] {args.command}: {headline} = {results.get(headline)}")
    print(f"     Wrote {len(writer.written)} file(s) to {writer.output_dir}")
    return EXIT_OK


@_guarded
def cmd_selftest(args):
    """
    Handle the selftest command.

    The suite builds its own systems; a config only contributes logging and threads.
    """
    if args.config is not None:
        config = _load(args)
        threads = config.run.threads
    else:
        setup_logging(
            LogConfig(level="DEBUG" if args.verbose else "INFO", file=None), args.command
        )
        threads = max(1, args.threads or 1)

    with worker_pool(threads) as run:
        results = run_selftest(run)

    for result in results:
        tag = "[OK]  " if result.passed else "[FAIL]"
        print(f"{tag} {result.name}: {result.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"[FAIL] {len(failed)} of {len(results)} properties violated")
        return EXIT_NUMERICAL
    print(f"[OK] all {len(results)} properties hold")
    return EXIT_OK


def main(argv=None):
    """Main entry point."""
    args = parse_args(argv)

    if args.command == "validate":
        return cmd_validate(args)
    elif args.command == "selftest":
        return cmd_selftest(args)
    elif args.command in EXPERIMENTS:
        return cmd_experiment(args)
    else:
        print("Usage: quenched-lab <command> [options]")
        print()
        print("Commands:")
        print("  validate         Check structural hypotheses of a config")
        for name, (text, _) in EXPERIMENTS.items():
            print(f"  {name:<16} {text}")
        print("  selftest         Run the built-in property suite")
        print()
        print("Run 'quenched-lab <command> --help' for more information.")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main() or 0)
