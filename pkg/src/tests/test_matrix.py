from unittest.mock import patch

from sqlalchemy.orm import Session

from src.core.database import make_engine, make_session_factory
from src.core.exceptions import InvariantViolation, NotConnected
from src.core.models import SimRun
from src.ingestion.extractors import audit_dirname, read_audit, trace_filename
from src.schemas.scenario import Mode
from src.services.simulation import run as real_run
from src.services import matrix_service
from src.services.matrix_service import run_cell, run_matrix


def ledger_rows(url):
    factory = make_session_factory(make_engine(url))
    db: Session = factory()
    try:
        return db.query(SimRun).order_by(SimRun.id).all()
    finally:
        db.close()


def fail_baseline(scenario, seed, config=None):
    if scenario.mode == Mode.BASELINE:
        raise NotConnected("no node in range")
    return real_run(scenario, seed, config)


def test_matrix_writes_traces_audits_and_reports(tmp_path, casestudy):
    cells = run_matrix(casestudy, out_dir=tmp_path)

    assert [(c.seed, c.mode) for c in cells] == [(1, Mode.WAAN), (1, Mode.BASELINE)]
    assert all(c.ok for c in cells)
    for mode in ("waan", "baseline"):
        assert (tmp_path / trace_filename("casestudy", mode, 1)).exists()
    for name in ("runs.csv", "comparison.csv", "summary.json"):
        assert (tmp_path / name).exists()

    audit = read_audit(tmp_path / audit_dirname("casestudy", "waan", 1) / "audit_R.jsonl")
    assert audit, "WAAN run should cache checkpoints at R"
    assert audit == cells[0].audits["R"]


def test_ledger_tracks_success(tmp_path, casestudy):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    run_matrix(casestudy, seeds=[1, 2], modes=[Mode.WAAN], ledger_url=url)

    rows = ledger_rows(url)
    assert [(r.seed, r.mode, r.status) for r in rows] == [(1, "waan", "SUCCESS"), (2, "waan", "SUCCESS")]
    assert all(r.events_processed > 0 for r in rows)
    assert rows[0].metadata_json["intents"] == 1
    assert rows[0].error_message is None


@patch("src.services.matrix_service.run", side_effect=fail_baseline)
def test_failed_cell_is_recorded_and_the_rest_still_run(mock_run, tmp_path, casestudy):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    cells = run_matrix(casestudy, out_dir=tmp_path / "out", ledger_url=url)

    assert mock_run.call_count == 2
    waan, baseline = cells
    assert waan.ok and not baseline.ok
    assert baseline.error == "no node in range"
    assert not baseline.invariant_violated

    rows = ledger_rows(url)
    assert [r.status for r in rows] == ["SUCCESS", "FAILURE"]
    assert rows[1].error_message == "no node in range"
    assert not (tmp_path / "out" / trace_filename("casestudy", "baseline", 1)).exists()


@patch.object(matrix_service, "run", side_effect=InvariantViolation("executed 51 units, expected 52"))
def test_invariant_violation_is_flagged(mock_run, casestudy):
    cell = run_cell(casestudy, 1, Mode.WAAN)
    assert not cell.ok
    assert cell.invariant_violated
    assert cell.report is None


def crash_waan(scenario, seed, config=None):
    if scenario.mode == Mode.WAAN:
        raise ValueError("executed_units must equal floor(progress * work_units)")
    return real_run(scenario, seed, config)


@patch("src.services.matrix_service.run", side_effect=crash_waan)
def test_unexpected_error_fails_only_its_cell(mock_run, tmp_path, casestudy):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    cells = run_matrix(casestudy, seeds=[1, 2], out_dir=tmp_path / "out", ledger_url=url)

    assert [(c.seed, c.mode, c.ok) for c in cells] == [
        (1, Mode.WAAN, False),
        (1, Mode.BASELINE, True),
        (2, Mode.WAAN, False),
        (2, Mode.BASELINE, True),
    ]
    assert cells[0].error.startswith("ValueError: ")
    assert not cells[0].invariant_violated

    rows = ledger_rows(url)
    assert [r.status for r in rows] == ["FAILURE", "SUCCESS", "FAILURE", "SUCCESS"]
    assert (tmp_path / "out" / "summary.json").exists()
