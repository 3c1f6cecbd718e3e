from enum import Enum
from typing import Dict, Tuple

from pydantic import Field, model_validator

from src.schemas.intent import FrozenModel, TrafficType


class CapabilityClass(str, Enum):
    MICROCONTROLLER = "Microcontroller"
    SMARTPHONE = "Smartphone"
    EDGE_NODE = "EdgeNode"
    CLOUD = "Cloud"


# Concurrent sessions a node of each class can host.
SESSION_CAPACITY: Dict[CapabilityClass, int] = {
    CapabilityClass.MICROCONTROLLER: 1,
    CapabilityClass.SMARTPHONE: 2,
    CapabilityClass.EDGE_NODE: 4,
    CapabilityClass.CLOUD: 16,
}


class NodeProfile(FrozenModel):
    node_id: str
    position: Tuple[float, float]
    coverage_radius: float = Field(gt=0)
    capability_class: CapabilityClass = CapabilityClass.EDGE_NODE
    cpu_capacity: float = Field(gt=0)
    mem_capacity: int = Field(default=1 << 30, gt=0)
    is_rendezvous: bool = False
    zone: str = ""
    bandwidth: float = Field(default=1_000_000.0, gt=0)
    background_load: float = Field(default=0.0, ge=0.0, le=1.0)
    background_mem: float = Field(default=0.0, ge=0.0, le=1.0)
    traffic_type: TrafficType = TrafficType.INTERACTIVE

    @model_validator(mode="after")
    def integral_quantum(self):
        quantum = 1000.0 / self.cpu_capacity
        if abs(quantum - round(quantum)) > 1e-9 or round(quantum) < 1:
            raise ValueError("1000 / cpu_capacity must be a whole number of milliseconds")
        return self

    @property
    def quantum_ms(self) -> int:
        return int(round(1000.0 / self.cpu_capacity))

    @property
    def session_capacity(self) -> int:
        return SESSION_CAPACITY[self.capability_class]

    @property
    def zone_id(self) -> str:
        return self.zone or self.node_id


class NodeMetrics(FrozenModel):
    node_id: str
    sampled_at: int = Field(ge=0)
    cpu_load: float = Field(ge=0.0, le=1.0)
    mem_used: float = Field(ge=0.0, le=1.0)
    bandwidth_avail: float = Field(ge=0.0)
    rssi: float
    snr: float
    mobility_speed: float = Field(ge=0.0)
    traffic_type: TrafficType


WEIGHT_FIELDS = ("w_bandwidth", "w_cpu_headroom", "w_mem_headroom", "w_snr", "w_residence", "w_traffic_match")
COMPONENT_FIELDS = ("bandwidth", "cpu_headroom", "mem_headroom", "snr", "residence", "traffic_match")


class RankingWeights(FrozenModel):
    w_bandwidth: float = Field(default=1.0, ge=0.0)
    w_cpu_headroom: float = Field(default=1.0, ge=0.0)
    w_mem_headroom: float = Field(default=1.0, ge=0.0)
    w_snr: float = Field(default=1.0, ge=0.0)
    w_residence: float = Field(default=1.0, ge=0.0)
    w_traffic_match: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def some_weight_positive(self):
        if not any(v > 0 for v in self.as_tuple()):
            raise ValueError("at least one ranking weight must be > 0")
        return self

    def as_tuple(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in WEIGHT_FIELDS)

    @classmethod
    def from_values(cls, values) -> "RankingWeights":
        return cls(**{name: float(v) for name, v in zip(WEIGHT_FIELDS, values)})

    def canonical(self) -> "RankingWeights":
        total = sum(self.as_tuple())
        return RankingWeights.from_values(v / total for v in self.as_tuple())


class Components(FrozenModel):
    bandwidth: float = Field(ge=0.0, le=1.0)
    cpu_headroom: float = Field(ge=0.0, le=1.0)
    mem_headroom: float = Field(ge=0.0, le=1.0)
    snr: float = Field(ge=0.0, le=1.0)
    residence: float = Field(ge=0.0, le=1.0)
    traffic_match: float = Field(ge=0.0, le=1.0)

    def as_tuple(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in COMPONENT_FIELDS)


class CandidateScore(FrozenModel):
    node_id: str
    score: float = Field(ge=0.0, le=1.0)
    components: Components
    metrics_staleness: int = Field(ge=0)
