import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import structlog
from sqlalchemy.orm import sessionmaker

from src.core.config import Settings
from src.core.database import init_db, make_engine, make_session_factory
from src.core.exceptions import InvariantViolation, WaanError
from src.core.models import SimRun
from src.ingestion.extractors import audit_dirname, trace_filename, write_audit, write_trace
from src.schemas.audit import AuditRecord
from src.schemas.report import RunReport
from src.schemas.scenario import Mode, Scenario
from src.services.report_service import build_run_report, write_reports
from src.services.simulation import run, scenario_hash
from src.simkernel.kernel import EventTrace

log = structlog.get_logger(__name__)


@dataclass
class CellResult:
    scenario: str
    seed: int
    mode: Mode
    report: Optional[RunReport] = None
    trace: Optional[EventTrace] = None
    audits: Dict[str, List[AuditRecord]] = field(default_factory=dict)
    events_processed: int = 0
    duration_ms: int = 0
    error: Optional[str] = None
    invariant_violated: bool = False

    @property
    def ok(self) -> bool:
        return self.error is None


def run_cell(scenario: Scenario, seed: int, mode: Mode, config: Optional[Settings] = None) -> CellResult:
    """Runs one (scenario, seed, mode) cell. Failures are captured on the result, never raised."""
    start_ms = int(time.time() * 1000)
    cell = CellResult(scenario=scenario.name, seed=seed, mode=mode)
    try:
        result = run(scenario.with_mode(mode), seed, config)
        cell.trace = result.trace
        cell.audits = result.audits
        cell.events_processed = result.events_processed
        cell.report = build_run_report(result.trace.records)
    except InvariantViolation as exc:
        cell.error = str(exc)
        cell.invariant_violated = True
    except WaanError as exc:
        cell.error = str(exc)
    except Exception as exc:
        # Bad input from a validator or a numeric helper fails this cell only.
        cell.error = f"{type(exc).__name__}: {exc}"
    cell.duration_ms = int(time.time() * 1000) - start_ms
    return cell


def _run_cell_args(args) -> CellResult:
    return run_cell(*args)


def _ledger_start(factory: sessionmaker, scenario: Scenario, seed: int, mode: Mode) -> str:
    with factory() as db:
        entry = SimRun(
            scenario_name=scenario.name,
            scenario_hash=scenario_hash(scenario.with_mode(mode)),
            seed=seed,
            mode=mode.value,
            status="RUNNING",
        )
        db.add(entry)
        db.commit()
        db.refresh(entry)
        return entry.run_id


def _ledger_finish(factory: sessionmaker, run_id: str, cell: CellResult, out_dir: Optional[Path]) -> None:
    with factory() as db:
        entry = db.query(SimRun).filter(SimRun.run_id == run_id).one()
        entry.end_time = datetime.now(timezone.utc)
        entry.duration_ms = cell.duration_ms
        entry.events_processed = cell.events_processed
        if cell.ok:
            entry.status = "SUCCESS"
            entry.metadata_json = {
                "intents": len(cell.report.intents),
                "trace": str(out_dir / trace_filename(cell.scenario, cell.mode.value, cell.seed)) if out_dir else None,
            }
        else:
            entry.status = "FAILURE"
            entry.error_message = cell.error
        db.commit()


def _write_cell(out_dir: Path, cell: CellResult) -> None:
    write_trace(out_dir / trace_filename(cell.scenario, cell.mode.value, cell.seed), cell.trace)
    audit_dir = out_dir / audit_dirname(cell.scenario, cell.mode.value, cell.seed)
    for node_id, records in sorted(cell.audits.items()):
        write_audit(audit_dir, node_id, records)


def run_matrix(
    scenario: Scenario,
    seeds: Optional[Sequence[int]] = None,
    modes: Sequence[Mode] = (Mode.WAAN, Mode.BASELINE),
    out_dir: Optional[Union[str, Path]] = None,
    ledger_url: Optional[str] = None,
    workers: int = 1,
    config: Optional[Settings] = None,
) -> List[CellResult]:
    """
    Runs every (seed, mode) cell of a scenario. Cells are independent, so
    they may run in worker processes; results come back in (seed, mode) order.
    """
    # 1. Cells and RUNNING ledger rows
    seeds = list(seeds if seeds is not None else scenario.knobs.seeds)
    cells = [(seed, mode) for seed in seeds for mode in modes]
    out = Path(out_dir) if out_dir is not None else None

    factory = None
    if ledger_url:
        engine = make_engine(ledger_url)
        init_db(engine)
        factory = make_session_factory(engine)
    run_ids = {cell: _ledger_start(factory, scenario, *cell) for cell in cells} if factory else {}

    # 2. Run, in worker processes when asked
    args = [(scenario, seed, mode, config) for seed, mode in cells]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_args, args))
    else:
        results = [run_cell(*a) for a in args]

    # 3. Files, ledger status, reports
    for (seed, mode), cell in zip(cells, results):
        if cell.ok and out is not None:
            _write_cell(out, cell)
        if factory:
            _ledger_finish(factory, run_ids[(seed, mode)], cell, out)
        if cell.ok:
            log.info("cell.finished", scenario=cell.scenario, seed=seed, mode=mode.value, duration_ms=cell.duration_ms)
        else:
            log.error("cell.failed", scenario=cell.scenario, seed=seed, mode=mode.value, error=cell.error)

    if out is not None:
        write_reports([c.trace.records for c in results if c.ok], out)
    return results
