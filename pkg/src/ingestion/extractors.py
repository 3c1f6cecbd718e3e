import json
from pathlib import Path
from typing import Dict, List, Sequence, Union

import structlog
from pydantic import ValidationError

from src.core.exceptions import SchemaMismatch
from src.schemas.audit import AuditRecord
from src.schemas.trace import AUDIT_SCHEMA_VERSION, SCHEMA_VERSION, TraceRecord, encode_line
from src.simkernel.kernel import EventTrace

log = structlog.get_logger(__name__)

PathLike = Union[str, Path]


def trace_filename(scenario: str, mode: str, seed: int) -> str:
    return f"{scenario}_{mode}_seed{seed}.trace.jsonl"


def audit_filename(node_id: str) -> str:
    return f"audit_{node_id}.jsonl"


def audit_dirname(scenario: str, mode: str, seed: int) -> str:
    return f"{scenario}_{mode}_seed{seed}.audit"


def write_trace(path: PathLike, trace: EventTrace) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(trace.to_bytes())
    log.info("trace.written", path=str(path), records=len(trace.records))
    return path


def parse_trace_lines(lines: Sequence[str], source: str = "<trace>") -> List[Dict]:
    """Decodes JSON Lines records and checks the Start header's schema version."""
    records: List[Dict] = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = TraceRecord.model_validate(json.loads(line)).model_dump()
        except (json.JSONDecodeError, ValidationError) as exc:
            raise SchemaMismatch(f"{source}:{number}: not a trace record ({exc.__class__.__name__})") from exc
        records.append(record)
    if not records:
        return records
    header = records[0]
    if header["kind"] != "Start":
        raise SchemaMismatch(f"{source}: first record is {header['kind']}, expected Start")
    version = header["payload"].get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(f"{source}: schema_version {version}, this build reads {SCHEMA_VERSION}")
    return records


def read_trace(path: PathLike) -> List[Dict]:
    path = Path(path)
    return parse_trace_lines(path.read_text(encoding="utf-8").splitlines(), source=path.name)


def write_audit(out_dir: PathLike, node_id: str, records: Sequence[AuditRecord]) -> Path:
    path = Path(out_dir) / audit_filename(node_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [encode_line({"schema_version": AUDIT_SCHEMA_VERSION, "node_id": node_id})]
    lines.extend(encode_line(r.model_dump(mode="json")) for r in records)
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return path


def read_audit(path: PathLike) -> List[AuditRecord]:
    path = Path(path)
    lines = [line for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        return []
    header = json.loads(lines[0])
    if header.get("schema_version") != AUDIT_SCHEMA_VERSION:
        raise SchemaMismatch(f"{path.name}: audit schema_version {header.get('schema_version')}")
    return [AuditRecord.model_validate(json.loads(line)) for line in lines[1:]]
