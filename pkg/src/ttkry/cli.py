"""
Command-line experiment runner.

    ttkry convdiff --n 64 --alpha 0.1 --eps 1e-5 --restart 80 --relax on --out run1/
    ttkry ppde --nx 64 --ny 16 --d 10 --eps 1e-4 --qtt off --out run2/
    ttkry proptests --seed 42

Exit status: 0 converged (or all properties pass), 1 not converged (or a property
failed), 2 invalid configuration.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from ttkry.experiments import run_convdiff, run_ppde, write_outputs
from ttkry.models.experiment import ExperimentConfig, ExperimentKind
from ttkry.operators import NewtonDivergenceError
from ttkry.proptests import run_proptests, write_report
from ttkry.tensor import RankGuardError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

# config-file spellings that differ from the ExperimentConfig field
KEY_ALIASES = {"restart": "restart_m", "relaxation": "relax", "output": "out"}


def parse_on_off(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("on", "true", "yes", "1"):
        return True
    if lowered in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def read_config_file(path: Path) -> Dict[str, str]:
    """
    Parse a flat ``key = value`` file.

    Blank lines and ``#`` comments are skipped; keys may use dashes or
    underscores.
    """
    values: Dict[str, str] = {}
    for number, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{number}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        values[KEY_ALIASES.get(key, key)] = value
    return values


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key = value file; flags win")
    parser.add_argument("--eps", type=float, help="rounding accuracy / stopping tolerance")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--timings", type=parse_on_off, metavar="on|off")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )


def _add_solver(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--restart", dest="restart_m", type=int, help="GMRES restart length")
    parser.add_argument("--max-restarts", dest="max_restarts", type=int)
    parser.add_argument("--rmax", type=int, help="TT rank cap")
    parser.add_argument("--relax", type=parse_on_off, metavar="on|off")
    parser.add_argument("--M", dest="M", type=int, help="exponential-sum half-width")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttkry",
        description="Relaxed TT-GMRES benchmark runs and property checks",
    )
    commands = parser.add_subparsers(dest="experiment", required=True)

    convdiff = commands.add_parser("convdiff", help="3D convection-diffusion benchmark")
    _add_common(convdiff)
    _add_solver(convdiff)
    convdiff.add_argument("--n", type=int, help="interior nodes per direction")
    convdiff.add_argument("--alpha", type=float, help="diffusion scale")
    convdiff.add_argument("--preconditioner", choices=["expsum", "identity"])

    ppde = commands.add_parser("ppde", help="parametric KL diffusion benchmark")
    _add_common(ppde)
    _add_solver(ppde)
    ppde.add_argument("--nx", type=int, help="spatial interior nodes")
    ppde.add_argument("--ny", type=int, help="collocation points per parameter")
    ppde.add_argument("--d", type=int, help="number of parameters")
    ppde.add_argument("--qtt", type=parse_on_off, metavar="on|off")
    ppde.add_argument("--rounding", choices=["svd", "dmrg"])
    ppde.add_argument("--newton-maxit", dest="newton_maxit", type=int)

    proptests = commands.add_parser("proptests", help="seeded property suite")
    _add_common(proptests)
    proptests.add_argument("--cases", type=int, help="generated cases per property")
    proptests.add_argument(
        "--inject-fault",
        dest="inject_fault",
        action="store_true",
        default=None,
        help="loosen the rounding thresholds to check that failures are reported",
    )
    return parser


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """File values first, then every flag that was given."""
    values: Dict[str, Any] = {}
    if args.config is not None:
        values.update(read_config_file(args.config))
    flags = {
        key: value
        for key, value in vars(args).items()
        if key not in ("config", "log_level", "experiment") and value is not None
    }
    values.update(flags)
    values["experiment"] = args.experiment
    return ExperimentConfig(**values)


def _run(cfg: ExperimentConfig) -> int:
    if cfg.experiment is ExperimentKind.PROPTESTS:
        report = run_proptests(cfg)
        path = write_report(report, cfg.out)
        for prop in report.properties:
            status = "pass" if prop.passed else "FAIL"
            print(f"{prop.name}: {status} {prop.failures}/{prop.cases} failures")
        print(f"Report written to {path}")
        return EXIT_OK if report.passed else EXIT_FAILED

    runner = run_convdiff if cfg.experiment is ExperimentKind.CONVDIFF else run_ppde
    result = runner(cfg)
    write_outputs(result, cfg.out, timings=cfg.timings)
    summary = result.summary
    print(
        f"{cfg.experiment.value}: {'converged' if summary.converged else 'NOT converged'} "
        f"in {summary.iterations} iterations, "
        f"true residual {summary.resid_true_rel:.3e}, "
        f"max solution rank {summary.rank_solution_max}"
    )
    print(f"Outputs written to {cfg.out}")
    return EXIT_OK if summary.converged else EXIT_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = build_config(args)
    except (ValidationError, ValueError, OSError) as e:
        print(f"Invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return _run(cfg)
    except (NewtonDivergenceError, RankGuardError) as e:
        logger.error("%s run failed: %s", cfg.experiment.value, e)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
