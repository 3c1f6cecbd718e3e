from enum import Enum
from typing import Annotated, List, Optional, Tuple

from pydantic import Field, model_validator

from src.core.config import Settings
from src.core.exceptions import UnknownNode
from src.schemas.intent import FrozenModel, IntentTemplate
from src.schemas.node import NodeProfile, RankingWeights


class Mode(str, Enum):
    WAAN = "waan"
    BASELINE = "baseline"


class RadioModel(FrozenModel):
    tx_power: float = 20.0  # dBm
    pathloss_exponent: float = Field(default=3.0, gt=0)
    ref_distance: float = Field(default=1.0, gt=0)  # meters
    ref_loss: float = 40.0  # dB
    noise_floor: float = -95.0  # dBm
    connect_threshold_rssi: float = -90.0  # dBm
    base_link_latency: int = Field(default=5, ge=0)  # ms
    backhaul_range: float = Field(default=500.0, gt=0)  # meters, node-to-node

    @model_validator(mode="after")
    def threshold_above_noise(self):
        if self.connect_threshold_rssi <= self.noise_floor:
            raise ValueError("connect_threshold_rssi must be above noise_floor")
        return self


class WorldBounds(FrozenModel):
    min_x: float = 0.0
    min_y: float = 0.0
    max_x: float
    max_y: float

    @model_validator(mode="after")
    def non_empty(self):
        if self.max_x <= self.min_x or self.max_y <= self.min_y:
            raise ValueError("world bounds must have max > min")
        return self

    def contains(self, position: Tuple[float, float]) -> bool:
        x, y = position
        return self.min_x <= x <= self.max_x and self.min_y <= y <= self.max_y


class Waypoint(FrozenModel):
    x: float
    y: float
    at: int = Field(ge=0)

    @property
    def position(self) -> Tuple[float, float]:
        return (self.x, self.y)


class MobilityMode(str, Enum):
    SCRIPTED = "Scripted"
    RANDOM_WAYPOINT = "RandomWaypoint"


class RandomWaypointSpec(FrozenModel):
    seed: int = 0
    speed_min: float = Field(gt=0)  # m/s
    speed_max: float = Field(gt=0)
    pause_min_ms: int = Field(default=0, ge=0)
    pause_max_ms: int = Field(default=0, ge=0)
    start: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def ordered_ranges(self):
        if self.speed_max < self.speed_min or self.pause_max_ms < self.pause_min_ms:
            raise ValueError("random waypoint ranges need max >= min")
        return self


class MobilityPath(FrozenModel):
    user_id: str
    waypoints: List[Waypoint] = Field(default_factory=list)
    mode: MobilityMode = MobilityMode.SCRIPTED
    random_waypoint: Optional[RandomWaypointSpec] = None


class UserSpec(FrozenModel):
    user_id: str
    path: MobilityPath
    template: IntentTemplate
    submit_at: int = Field(ge=0)
    revisions: List[int] = Field(default_factory=list)  # times at which the user revises the intent


class FaultAction(str, Enum):
    LINK_DOWN = "LinkDown"
    LINK_UP = "LinkUp"
    NODE_DOWN = "NodeDown"


class FaultInjection(FrozenModel):
    at: int = Field(ge=0)
    node_id: str
    action: FaultAction


class MetricBounds(FrozenModel):
    min: float
    max: float


class NormalizationBounds(FrozenModel):
    bandwidth: MetricBounds = MetricBounds(min=0.0, max=2_000_000.0)
    snr: MetricBounds = MetricBounds(min=0.0, max=40.0)
    residence: MetricBounds = MetricBounds(min=0.0, max=30_000.0)  # ms


class Knobs(FrozenModel):
    t_prepare_ms: Optional[int] = Field(default=None, gt=0)
    staleness_max_ms: Optional[int] = Field(default=None, ge=0)
    checkpoint_interval: Optional[int] = Field(default=None, ge=1)
    eta: Optional[float] = Field(default=None, ge=0.0)
    k_min: Optional[int] = Field(default=None, ge=1)
    swarm_deadline_ms: Optional[int] = Field(default=None, gt=0)
    swarm_jitter_max_ms: Optional[int] = Field(default=None, ge=0)
    user_moved_tick_ms: Optional[int] = Field(default=None, ge=1)
    rendezvous_capacity: Optional[int] = Field(default=None, ge=1)
    policy_overhead_bytes: Optional[int] = Field(default=None, ge=0)
    link_params_bytes: Optional[int] = Field(default=None, ge=0)
    link_latency_bonus_pct: Optional[int] = Field(default=None, ge=0, le=100)
    shadowing_sigma_db: Optional[float] = Field(default=None, ge=0.0)
    normalization: NormalizationBounds = NormalizationBounds()
    initial_weights: RankingWeights = RankingWeights()
    seeds: List[Annotated[int, Field(ge=0)]] = Field(default_factory=lambda: [1])

    def resolved(self, defaults: Settings) -> "Knobs":
        """Fills every unset knob from the settings defaults. t_prepare_ms may stay None (derived at run time)."""
        filled = {}
        for name in type(self).model_fields:
            value = getattr(self, name)
            if value is None and hasattr(defaults, name):
                value = getattr(defaults, name)
            filled[name] = value
        return Knobs(**filled)


class Scenario(FrozenModel):
    name: str
    world: WorldBounds
    nodes: List[NodeProfile]
    radio: RadioModel = RadioModel()
    users: List[UserSpec] = Field(default_factory=list)
    mode: Mode = Mode.WAAN
    knobs: Knobs = Knobs()
    end_time: int = Field(gt=0)
    fault_injections: List[FaultInjection] = Field(default_factory=list)

    def node(self, node_id: str) -> NodeProfile:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        raise UnknownNode(node_id)

    def with_mode(self, mode: Mode) -> "Scenario":
        return self.model_copy(update={"mode": mode})
