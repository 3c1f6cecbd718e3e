from enum import Enum
from typing import Any, Dict

from pydantic import Field

from src.schemas.intent import FrozenModel


class AuditAction(str, Enum):
    CACHE = "Cache"
    FETCH = "Fetch"
    EVICT = "Evict"
    HANDOVER_DECISION = "HandoverDecision"
    TTL_VERDICT = "TTLVerdict"


class AuditRecord(FrozenModel):
    at: int = Field(ge=0)
    actor: str
    action: AuditAction
    intent_id: str
    detail: Dict[str, Any] = Field(default_factory=dict)
