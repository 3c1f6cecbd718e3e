"""
Stand-alone recomputation of report numbers from raw trace lines.

Reads JSON Lines with the json module only and shares no code with the
report builder, so the two can be checked against each other.
"""

import json
from typing import Dict, Iterable


def intent_numbers(lines: Iterable[str]) -> Dict[str, Dict]:
    numbers: Dict[str, Dict] = {}
    for line in lines:
        if not line.strip():
            continue
        record = json.loads(line)
        payload = record["payload"]
        kind = record["kind"]
        intent_id = payload.get("intent_id")
        if kind == "IntentSubmitted":
            numbers[intent_id] = {
                "user_id": payload["user_id"],
                "work_units": payload["work_units"],
                "submitted_at": record["t"],
                "executed": 0,
                "recomputed": 0,
                "handovers": 0,
                "successes": 0,
                "stale": 0,
                "completion": None,
            }
        if intent_id not in numbers:
            continue
        entry = numbers[intent_id]
        if kind == "ComputeQuantumDone":
            entry["executed"] += 1
        elif kind == "WorkDiscarded":
            entry["recomputed"] += payload["units"]
        elif kind == "HandoverOutcome":
            entry["handovers"] += 1
            entry["successes"] += payload["result"] in ("Success", "FallbackSuccess")
        elif kind == "StaleDiscard":
            entry["stale"] += 1
        elif kind == "ResultDelivered" and entry["completion"] is None:
            entry["completion"] = record["t"] - entry["submitted_at"]
    return numbers
