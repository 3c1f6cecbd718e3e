import json
from enum import Enum
from typing import Any, Dict

from pydantic import BaseModel, ConfigDict, Field

SCHEMA_VERSION = 1
AUDIT_SCHEMA_VERSION = 1


class EventKind(str, Enum):
    INTENT_SUBMITTED = "IntentSubmitted"
    COMPUTE_QUANTUM_DONE = "ComputeQuantumDone"
    USER_MOVED = "UserMoved"
    LINK_LOST = "LinkLost"
    LINK_ESTABLISHED = "LinkEstablished"
    HANDOVER_TRIGGERED = "HandoverTriggered"
    METRIC_QUERY = "MetricQuery"
    METRIC_REPLY = "MetricReply"
    PACKAGE_SENT = "PackageSent"
    PACKAGE_DELIVERED = "PackageDelivered"
    PACKAGE_LOST = "PackageLost"
    TTL_EXPIRED = "TTLExpired"
    RESULT_DELIVERED = "ResultDelivered"
    CHECKPOINT_DUE = "CheckpointDue"
    # Kernel-internal kinds beyond the protocol vocabulary above.
    SWARM_RANKED = "SwarmRanked"
    ACK_RECEIVED = "AckReceived"
    ACK_TIMEOUT = "AckTimeout"
    FAULT = "Fault"
    INTENT_REVISED = "IntentRevised"


class TraceRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seq: int = Field(ge=0)
    t: int = Field(ge=0)
    kind: str
    payload: Dict[str, Any] = Field(default_factory=dict)


def encode_line(record: Dict[str, Any]) -> str:
    """Canonical JSON Lines form: sorted keys, no whitespace. Stable across runs and platforms."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
