from enum import Enum
from typing import List

from pydantic import Field

from src.schemas.handover import HandoverOutcome
from src.schemas.intent import FrozenModel, TrafficType
from src.schemas.node import CapabilityClass, Components


class SpeedBand(str, Enum):
    SLOW = "slow"
    MEDIUM = "medium"
    FAST = "fast"

    @classmethod
    def of(cls, speed: float) -> "SpeedBand":
        if speed < 1.0:
            return cls.SLOW
        if speed <= 5.0:
            return cls.MEDIUM
        return cls.FAST


class BucketKey(FrozenModel):
    traffic_type: TrafficType
    speed_band: SpeedBand
    capability_class: CapabilityClass

    @property
    def label(self) -> str:
        return f"{self.traffic_type.value}/{self.speed_band.value}/{self.capability_class.value}"


class BucketStats(FrozenModel):
    successes: int = Field(default=0, ge=0)
    failures: int = Field(default=0, ge=0)
    mean_completion_latency: float = Field(default=0.0, ge=0.0)

    @property
    def total(self) -> int:
        return self.successes + self.failures


class OutcomeRecord(FrozenModel):
    outcome: HandoverOutcome
    context_bucket: BucketKey
    components: Components
    qoe_met: bool


class BucketSnapshot(FrozenModel):
    key: BucketKey
    stats: BucketStats


class AdaptDump(FrozenModel):
    """Per-agent learning state written into the trace footer."""

    node_id: str
    weights: List[float]
    records: int
    buckets: List[BucketSnapshot]
