import json
import math
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import pandas as pd
import structlog

from src.core.exceptions import SchemaMismatch
from src.schemas.report import IntentReport, RunReport

log = structlog.get_logger(__name__)

RUN_COLUMNS = [
    "scenario",
    "seed",
    "mode",
    "intent_id",
    "user_id",
    "work_units",
    "completion_time_ms",
    "total_executed_units",
    "recomputed_units",
    "recompute_pct",
    "handovers",
    "handover_successes",
    "stale_discards",
    "qoe_met",
]
COMPARISON_METRICS = ["completion_time_ms", "total_executed_units", "recomputed_units", "recompute_pct", "stale_discards"]


def build_run_report(records: Sequence[Dict]) -> RunReport:
    """Derives every report number from trace records alone."""
    if not records or records[0]["kind"] != "Start":
        raise SchemaMismatch("trace has no Start header")
    header = records[0]["payload"]
    scenario, seed, mode = header["scenario"], header["seed"], header["mode"]

    intents: Dict[str, Dict] = {}
    for record in records:
        kind, payload = record["kind"], record["payload"]
        intent_id = payload.get("intent_id")
        if kind == "IntentSubmitted":
            intents[intent_id] = {
                "user_id": payload["user_id"],
                "work_units": payload["work_units"],
                "submitted_at": record["t"],
                "max_latency": payload["max_latency"],
                "executed": 0,
                "recomputed": 0,
                "outcomes": [],
                "stale": 0,
                "completion": None,
                "qoe_met": None,
            }
            continue
        entry = intents.get(intent_id)
        if entry is None:
            continue
        if kind == "ComputeQuantumDone":
            entry["executed"] += 1
        elif kind == "WorkDiscarded":
            entry["recomputed"] += payload["units"]
        elif kind == "HandoverOutcome":
            entry["outcomes"].append(payload["result"])
        elif kind == "StaleDiscard":
            entry["stale"] += 1
        elif kind == "ResultDelivered" and entry["completion"] is None:
            entry["completion"] = record["t"] - entry["submitted_at"]
            entry["qoe_met"] = entry["completion"] <= entry["max_latency"]

    return RunReport(
        scenario=scenario,
        scenario_hash=header["scenario_hash"],
        seed=seed,
        mode=mode,
        intents=[
            IntentReport(
                scenario=scenario,
                seed=seed,
                mode=mode,
                intent_id=intent_id,
                user_id=e["user_id"],
                work_units=e["work_units"],
                completion_time_ms=e["completion"],
                total_executed_units=e["executed"],
                recomputed_units=e["recomputed"],
                handover_outcomes=e["outcomes"],
                stale_discards=e["stale"],
                qoe_met=e["qoe_met"],
            )
            for intent_id, e in intents.items()
        ],
    )


def runs_frame(reports: Sequence[RunReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        for intent in report.intents:
            rows.append(
                {
                    "scenario": intent.scenario,
                    "seed": intent.seed,
                    "mode": intent.mode,
                    "intent_id": intent.intent_id,
                    "user_id": intent.user_id,
                    "work_units": intent.work_units,
                    "completion_time_ms": intent.completion_time_ms,
                    "total_executed_units": intent.total_executed_units,
                    "recomputed_units": intent.recomputed_units,
                    "recompute_pct": intent.recompute_pct,
                    "handovers": len(intent.handover_outcomes),
                    "handover_successes": sum(1 for o in intent.handover_outcomes if o != "Abort"),
                    "stale_discards": intent.stale_discards,
                    "qoe_met": intent.qoe_met,
                }
            )
    frame = pd.DataFrame(rows, columns=RUN_COLUMNS)
    return frame.sort_values(["scenario", "seed", "mode", "user_id"], kind="mergesort").reset_index(drop=True)


def comparison_frame(runs: pd.DataFrame) -> pd.DataFrame:
    """One row per (scenario, seed, user): the metrics of each mode side by side."""
    if runs.empty:
        return pd.DataFrame(columns=["scenario", "seed", "user_id"])
    wide = runs.pivot_table(
        index=["scenario", "seed", "user_id"],
        columns="mode",
        values=COMPARISON_METRICS,
        aggfunc="first",
        dropna=False,
    )
    wide.columns = [f"{metric}_{mode}" for metric, mode in wide.columns]
    return wide.reset_index().sort_values(["scenario", "seed", "user_id"], kind="mergesort").reset_index(drop=True)


def _clean(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if hasattr(value, "item"):
        return _clean(value.item())
    return value


def summary(reports: Sequence[RunReport], runs: pd.DataFrame) -> Dict:
    by_mode: Dict[str, Dict] = {}
    for mode, group in runs.groupby("mode", sort=True):
        outcomes = int(group["handovers"].sum())
        by_mode[mode] = {
            "runs": int(group[["scenario", "seed"]].drop_duplicates().shape[0]),
            "intents": int(len(group)),
            "completed": int(group["completion_time_ms"].notna().sum()),
            "mean_completion_time_ms": _clean(group["completion_time_ms"].mean()),
            "mean_total_executed_units": _clean(group["total_executed_units"].mean()),
            "mean_recompute_pct": _clean(group["recompute_pct"].mean()),
            "handover_success_rate": _clean(group["handover_successes"].sum() / outcomes) if outcomes else None,
            "stale_discards": int(group["stale_discards"].sum()),
            "per_seed": {
                str(seed): {
                    "completion_time_ms": _clean(rows["completion_time_ms"].mean()),
                    "recomputed_units": int(rows["recomputed_units"].sum()),
                }
                for seed, rows in group.groupby("seed", sort=True)
            },
        }
    return {
        "runs": [
            {"scenario": r.scenario, "scenario_hash": r.scenario_hash, "seed": r.seed, "mode": r.mode}
            for r in sorted(reports, key=lambda r: (r.scenario, r.seed, r.mode))
        ],
        "modes": by_mode,
    }


def write_reports(traces: Sequence[Sequence[Dict]], out_dir: Union[str, Path]) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = [build_run_report(records) for records in traces if records]
    runs = runs_frame(reports)
    paths = {
        "runs": out / "runs.csv",
        "comparison": out / "comparison.csv",
        "summary": out / "summary.json",
    }
    runs.to_csv(paths["runs"], index=False, float_format="%.6f", lineterminator="\n")
    comparison_frame(runs).to_csv(paths["comparison"], index=False, float_format="%.6f", lineterminator="\n")
    paths["summary"].write_text(json.dumps(summary(reports, runs), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    log.info("report.written", out_dir=str(out), runs=len(reports))
    return paths


def completion_delta(waan: RunReport, baseline: RunReport, user_id: str) -> Optional[int]:
    """Baseline completion time minus WAAN completion time for one user, if both finished."""
    def pick(report: RunReport) -> Optional[int]:
        return next((i.completion_time_ms for i in report.intents if i.user_id == user_id), None)

    w, b = pick(waan), pick(baseline)
    return None if w is None or b is None else b - w
