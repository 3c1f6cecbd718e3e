import json

import pandas as pd
import pytest

from src.core.exceptions import SchemaMismatch
from src.ingestion.extractors import parse_trace_lines, read_trace, trace_filename, write_trace
from src.services.report_service import build_run_report, completion_delta, comparison_frame, runs_frame, write_reports
from src.tests.trace_oracle import intent_numbers


@pytest.fixture
def traces(casestudy_waan, casestudy_baseline):
    return [casestudy_waan.trace.records, casestudy_baseline.trace.records]


def test_report_numbers_match_the_independent_oracle(casestudy_waan, casestudy_baseline):
    for result in (casestudy_waan, casestudy_baseline):
        report = build_run_report(result.trace.records)
        oracle = intent_numbers(result.trace.lines())
        assert len(report.intents) == len(oracle) == 1
        for intent in report.intents:
            expected = oracle[intent.intent_id]
            assert intent.total_executed_units == expected["executed"]
            assert intent.recomputed_units == expected["recomputed"]
            assert len(intent.handover_outcomes) == expected["handovers"]
            assert sum(o != "Abort" for o in intent.handover_outcomes) == expected["successes"]
            assert intent.stale_discards == expected["stale"]
            assert intent.completion_time_ms == expected["completion"]


def test_trace_file_round_trip_keeps_the_report(tmp_path, casestudy_waan):
    path = write_trace(tmp_path / trace_filename("casestudy", "waan", 1), casestudy_waan.trace)
    assert path.read_bytes() == casestudy_waan.trace.to_bytes()
    assert build_run_report(read_trace(path)) == build_run_report(casestudy_waan.trace.records)


def test_reports_are_byte_identical_across_writes(tmp_path, traces):
    first = write_reports(traces, tmp_path / "a")
    second = write_reports(list(reversed(traces)), tmp_path / "b")
    for name in ("runs", "comparison", "summary"):
        assert first[name].read_bytes() == second[name].read_bytes()


def test_comparison_puts_modes_side_by_side(traces, casestudy_waan, casestudy_baseline):
    runs = runs_frame([build_run_report(t) for t in traces])
    assert list(runs["mode"]) == ["baseline", "waan"]
    comparison = comparison_frame(runs)
    assert len(comparison) == 1
    row = comparison.iloc[0]
    assert row["recomputed_units_waan"] == 0
    assert row["recomputed_units_baseline"] == 32
    delta = completion_delta(build_run_report(traces[0]), build_run_report(traces[1]), "u1")
    assert delta == row["completion_time_ms_baseline"] - row["completion_time_ms_waan"]
    assert delta > 0


def test_summary_groups_by_mode(tmp_path, traces):
    paths = write_reports(traces, tmp_path)
    summary = json.loads(paths["summary"].read_text())
    assert sorted(summary["modes"]) == ["baseline", "waan"]
    assert summary["modes"]["waan"]["completed"] == 1
    assert summary["modes"]["waan"]["handover_success_rate"] == 1.0
    assert summary["modes"]["baseline"]["handover_success_rate"] is None
    assert [r["mode"] for r in summary["runs"]] == ["baseline", "waan"]


def test_empty_trace_set_writes_headers_only(tmp_path):
    paths = write_reports([], tmp_path)
    assert pd.read_csv(paths["runs"]).empty
    assert json.loads(paths["summary"].read_text()) == {"modes": {}, "runs": []}


def test_unknown_schema_version_is_rejected():
    header = json.dumps({"seq": 0, "t": 0, "kind": "Start", "payload": {"schema_version": 99}})
    with pytest.raises(SchemaMismatch):
        parse_trace_lines([header])


def test_garbage_lines_are_rejected():
    with pytest.raises(SchemaMismatch):
        parse_trace_lines(["{not json"])
    with pytest.raises(SchemaMismatch):
        parse_trace_lines([json.dumps({"seq": 0, "t": 0, "kind": "UserMoved", "payload": {}})])


def test_report_needs_a_start_header():
    with pytest.raises(SchemaMismatch):
        build_run_report([])
