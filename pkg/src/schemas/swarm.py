from typing import List, Tuple

from pydantic import Field

from src.schemas.intent import FrozenModel, TrafficType
from src.schemas.node import NodeMetrics


class SwarmQuery(FrozenModel):
    query_id: str
    origin_node: str
    candidate_set: List[str] = Field(min_length=1)
    issued_at: int = Field(ge=0)
    deadline: int = Field(gt=0)  # ms after issued_at


class MetricReply(FrozenModel):
    metrics: NodeMetrics
    arrives_at: int = Field(ge=0)


class UserState(FrozenModel):
    position: Tuple[float, float]
    velocity: Tuple[float, float] = (0.0, 0.0)  # m/s
    traffic_type: TrafficType = TrafficType.INTERACTIVE
