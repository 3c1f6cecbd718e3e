from enum import Enum
from typing import Dict, List, Optional

from pydantic import Field, field_serializer, field_validator, model_validator

from src.schemas.intent import FrozenModel, SemanticTTL, TaskState
from src.schemas.node import RankingWeights


class Phase(str, Enum):
    EXECUTING = "Executing"
    HANDOVER_PREPARING = "HandoverPreparing"
    TRANSFERRING = "Transferring"
    AWAITING_ACK = "AwaitingAck"
    RESUMING = "Resuming"
    COMPLETED = "Completed"
    FAILED = "Failed"


TERMINAL_PHASES = frozenset({Phase.COMPLETED, Phase.FAILED})

ALLOWED_TRANSITIONS: Dict[Phase, frozenset] = {
    Phase.EXECUTING: frozenset({Phase.HANDOVER_PREPARING, Phase.COMPLETED, Phase.FAILED}),
    # Back to Executing when the swarm finds no candidate for a proactive trigger.
    Phase.HANDOVER_PREPARING: frozenset({Phase.TRANSFERRING, Phase.EXECUTING, Phase.FAILED}),
    Phase.TRANSFERRING: frozenset({Phase.AWAITING_ACK, Phase.FAILED}),
    Phase.AWAITING_ACK: frozenset({Phase.RESUMING, Phase.TRANSFERRING, Phase.FAILED}),
    Phase.RESUMING: frozenset({Phase.EXECUTING, Phase.FAILED}),
    Phase.COMPLETED: frozenset(),
    Phase.FAILED: frozenset(),
}


class TransferKind(str, Enum):
    STATE_TRANSFER = "StateTransfer"
    FULL_OFFLOAD = "FullOffload"


class HandoverResult(str, Enum):
    SUCCESS = "Success"
    FALLBACK_SUCCESS = "FallbackSuccess"
    ABORT = "Abort"


class PolicySnapshot(FrozenModel):
    """Learned policy shipped with a package: canonical weights plus per-bucket (successes, failures)."""

    weights: RankingWeights
    causality_stats: Dict[str, List[int]] = Field(default_factory=dict)


class HandoverPackage(FrozenModel):
    package_id: str
    intent_id: str
    task_state: TaskState
    completed_units: int = Field(default=0, ge=0)  # units of subtasks finished before task_state's subtask
    policy_snapshot: PolicySnapshot
    policy_size: int = Field(ge=0)
    ttl: SemanticTTL
    link_params: bytes
    ranked_fallbacks: List[str] = Field(default_factory=list)
    source_node: str
    transfer_kind: TransferKind = TransferKind.STATE_TRANSFER
    state_size: int = Field(ge=0)
    size_bytes: int = Field(gt=0)

    @field_serializer("link_params")
    def link_params_hex(self, value: bytes) -> str:
        return value.hex()

    @field_validator("link_params", mode="before")
    @classmethod
    def link_params_from_hex(cls, value):
        if isinstance(value, str):
            return bytes.fromhex(value)
        return value

    @model_validator(mode="after")
    def fallbacks_exclude_source(self):
        if self.source_node in self.ranked_fallbacks:
            raise ValueError("ranked_fallbacks must exclude the source node")
        return self

    @property
    def checkpoint_units(self) -> int:
        return self.completed_units + self.task_state.executed_units


class HandoverOutcome(FrozenModel):
    intent_id: str
    source: str
    target: Optional[str] = None
    attempt_index: int = Field(ge=1)
    started_at: int = Field(ge=0)
    finished_at: int = Field(ge=0)
    result: HandoverResult
    progress_at_transfer: float = Field(ge=0.0, le=1.0)
    recomputed_units: int = Field(ge=0)
    transfer_kind: TransferKind = TransferKind.STATE_TRANSFER
    via_rendezvous: Optional[str] = None

    @model_validator(mode="after")
    def result_coherence(self):
        if self.result == HandoverResult.FALLBACK_SUCCESS and self.attempt_index < 2:
            raise ValueError("FallbackSuccess requires attempt_index >= 2")
        if (
            self.result == HandoverResult.SUCCESS
            and self.transfer_kind == TransferKind.STATE_TRANSFER
            and self.via_rendezvous is None
            and self.recomputed_units != 0
        ):
            raise ValueError("a direct state-transfer Success never recomputes")
        if self.finished_at < self.started_at:
            raise ValueError("finished_at precedes started_at")
        return self
