import argparse
import sys
from pathlib import Path
from typing import List, Optional

import structlog

from src.core.config import settings
from src.core.exceptions import InvariantViolation, ParseError, ScenarioValidationError, SchemaMismatch
from src.core.logging import configure_logging
from src.ingestion.extractors import audit_dirname, read_trace, trace_filename, write_audit, write_trace
from src.ingestion.loader import load_scenario
from src.schemas.scenario import Mode
from src.services.matrix_service import run_matrix
from src.services.report_service import write_reports
from src.services.simulation import run

log = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_INVARIANT = 2


def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"seeds must be non-negative: {value}")
    return value


def _int_list(text: str) -> List[int]:
    return [_seed(part) for part in text.split(",") if part.strip()]


def _mode_list(text: str) -> List[Mode]:
    return [Mode(part.strip()) for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="waan", description="Intent-aware handover simulator")
    parser.add_argument("--log-level", default=None)
    parser.add_argument("--log-json", action="store_true", default=None)
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", help="run one scenario in one mode")
    run_cmd.add_argument("scenario")
    run_cmd.add_argument("--seed", type=_seed, default=None)
    run_cmd.add_argument("--mode", type=Mode, choices=list(Mode), default=Mode.WAAN)
    run_cmd.add_argument("--out", default="out")

    matrix_cmd = commands.add_parser("matrix", help="run every (seed, mode) cell and write reports")
    matrix_cmd.add_argument("scenario")
    matrix_cmd.add_argument("--seeds", type=_int_list, default=None)
    matrix_cmd.add_argument("--modes", type=_mode_list, default=[Mode.WAAN, Mode.BASELINE])
    matrix_cmd.add_argument("--out", default="out")
    matrix_cmd.add_argument("--workers", type=int, default=1)
    matrix_cmd.add_argument("--ledger", nargs="?", const=settings.ledger_url, default=None)

    report_cmd = commands.add_parser("report", help="build report tables from trace files")
    report_cmd.add_argument("traces", nargs="*")
    report_cmd.add_argument("--out", default="out")

    validate_cmd = commands.add_parser("validate", help="parse and validate a scenario file")
    validate_cmd.add_argument("scenario")
    return parser


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else scenario.knobs.seeds[0]
    result = run(scenario.with_mode(args.mode), seed)
    out = Path(args.out)
    path = write_trace(out / trace_filename(scenario.name, args.mode.value, seed), result.trace)
    for node_id, records in sorted(result.audits.items()):
        write_audit(out / audit_dirname(scenario.name, args.mode.value, seed), node_id, records)
    print(path)
    return EXIT_OK


def cmd_matrix(args) -> int:
    scenario = load_scenario(args.scenario)
    cells = run_matrix(
        scenario,
        seeds=args.seeds,
        modes=args.modes,
        out_dir=args.out,
        ledger_url=args.ledger,
        workers=args.workers,
    )
    for cell in cells:
        status = "ok" if cell.ok else f"FAILED: {cell.error}"
        print(f"{cell.scenario} seed={cell.seed} mode={cell.mode.value} {status}")
    if any(cell.invariant_violated for cell in cells):
        return EXIT_INVARIANT
    return EXIT_OK if all(cell.ok for cell in cells) else EXIT_INVALID


def cmd_report(args) -> int:
    traces = [read_trace(path) for path in args.traces]
    paths = write_reports(traces, args.out)
    for path in paths.values():
        print(path)
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    print(f"{scenario.name}: ok ({len(scenario.nodes)} nodes, {len(scenario.users)} users)")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "matrix": cmd_matrix, "report": cmd_report, "validate": cmd_validate}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_json)
    try:
        return COMMANDS[args.command](args)
    except ScenarioValidationError as exc:
        for violation in exc.violations:
            print(f"invalid: {violation}", file=sys.stderr)
        return EXIT_INVALID
    except (ParseError, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InvariantViolation as exc:
        log.error("invariant.violated", error=str(exc), trace_records=len(exc.trace_prefix))
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
