import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class SubTaskKind(str, Enum):
    SENSOR_FUSION = "SensorFusion"
    MULTIMODAL_SUMMARIZATION = "MultimodalSummarization"
    ENVIRONMENT_CONTROL = "EnvironmentControl"
    GENERIC = "Generic"


class TrafficType(str, Enum):
    INTERACTIVE = "Interactive"
    BULK = "Bulk"
    STREAMING = "Streaming"


class ContextTag(FrozenModel):
    zone: Optional[str] = None
    intent_version: int = Field(default=1, ge=1)


class SemanticTTL(FrozenModel):
    created_at: int = Field(ge=0)
    time_budget: int = Field(gt=0)
    context_tag: ContextTag
    relevance_threshold: float = Field(ge=0.0, le=1.0)


class QoERequirements(FrozenModel):
    max_latency: int = Field(gt=0)
    min_accuracy: float = Field(default=0.0, ge=0.0, le=1.0)
    traffic_type: TrafficType = TrafficType.INTERACTIVE


class StateSizeFn(FrozenModel):
    """Affine state size: base + slope * progress, in bytes."""

    base: int = Field(ge=0)
    slope: int

    @model_validator(mode="after")
    def non_negative_on_unit_interval(self):
        if self.base + self.slope < 0:
            raise ValueError("state_size_fn(p) must be >= 0 for p in [0,1]")
        return self

    def __call__(self, progress: float) -> int:
        return int(math.floor(self.base + self.slope * progress + 1e-9))


class SubTask(FrozenModel):
    # Invariants are checked by validate_intent rather than at construction so a
    # malformed intent can still be inspected and reported on.
    subtask_id: str
    kind: SubTaskKind = SubTaskKind.GENERIC
    work_units: int
    input_size: int = Field(default=0, ge=0)
    state_size_fn: StateSizeFn
    depends_on: List[str] = Field(default_factory=list)


class Intent(FrozenModel):
    intent_id: str
    user_id: str
    submitted_at: int
    subtasks: List[SubTask]
    qoe: QoERequirements
    ttl: SemanticTTL

    @property
    def work_units(self) -> int:
        return sum(st.work_units for st in self.subtasks)


class SubTaskTemplate(FrozenModel):
    kind: SubTaskKind = SubTaskKind.GENERIC
    work_units: int = Field(ge=1)
    input_size: int = Field(default=0, ge=0)
    state_base: int = Field(default=0, ge=0)
    state_slope: int = 0
    depends_on_previous: bool = True


class IntentTemplate(FrozenModel):
    name: str = "intent"
    subtasks: List[SubTaskTemplate] = Field(default_factory=list)
    qoe: QoERequirements
    time_budget: int = Field(gt=0)
    relevance_threshold: float = Field(default=0.5, ge=0.0, le=1.0)


class TaskState(FrozenModel):
    subtask_id: str
    work_units: int = Field(ge=1)
    progress: float = Field(ge=0.0, le=1.0)
    executed_units: int = Field(ge=0)
    host_agent: str
    checkpoint_time: int = Field(ge=0)
    context_tag: ContextTag

    @model_validator(mode="after")
    def units_match_progress(self):
        if self.executed_units != math.floor(self.progress * self.work_units + 1e-9):
            raise ValueError("executed_units must equal floor(progress * work_units)")
        return self

    @classmethod
    def at(cls, subtask: SubTask, executed: int, host: str, now: int, tag: ContextTag) -> "TaskState":
        return cls(
            subtask_id=subtask.subtask_id,
            work_units=subtask.work_units,
            progress=executed / subtask.work_units,
            executed_units=executed,
            host_agent=host,
            checkpoint_time=now,
            context_tag=tag,
        )


class ValidationResult(FrozenModel):
    violations: List[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations
