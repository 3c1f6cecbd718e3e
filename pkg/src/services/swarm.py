import math
import random
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

from src.core.exceptions import BadBounds, UnknownNode
from src.schemas.node import CandidateScore, Components, NodeMetrics, NodeProfile, RankingWeights
from src.schemas.scenario import MetricBounds, NormalizationBounds, RadioModel
from src.schemas.swarm import MetricReply, SwarmQuery, UserState
from src.simkernel.radio import distance

# sample(node_id, sampled_at) -> metrics, or None when the node cannot answer.
MetricSampler = Callable[[str, int], Optional[NodeMetrics]]


def discover_neighbors(node: str, topology: Sequence[NodeProfile], radio: RadioModel) -> List[str]:
    """Nodes within backhaul range of `node` (closed boundary), sorted by id."""
    by_id = {n.node_id: n for n in topology}
    if node not in by_id:
        raise UnknownNode(node)
    origin = by_id[node]
    return sorted(
        n.node_id
        for n in topology
        if n.node_id != node and distance(origin.position, n.position) <= radio.backhaul_range
    )


def collect_metrics(
    query: SwarmQuery,
    sample: MetricSampler,
    radio: RadioModel,
    rng: random.Random,
    jitter_max: int = 0,
) -> List[MetricReply]:
    replies: List[MetricReply] = []
    if query.deadline <= 0:
        return replies
    sampled_at = query.issued_at + radio.base_link_latency
    for node_id in query.candidate_set:
        # One draw per candidate, reachable or not, so the stream does not depend on faults.
        jitter = rng.randint(0, jitter_max) if jitter_max > 0 else 0
        metrics = sample(node_id, sampled_at)
        if metrics is None:
            continue
        arrives_at = query.issued_at + 2 * radio.base_link_latency + jitter
        if arrives_at - query.issued_at > query.deadline:
            continue
        replies.append(MetricReply(metrics=metrics, arrives_at=arrives_at))
    return replies


def discard_stale(metrics: Iterable[NodeMetrics], now: int, staleness_max: int) -> List[NodeMetrics]:
    return [m for m in metrics if m.sampled_at <= now and now - m.sampled_at <= staleness_max]


def check_bounds(bounds: NormalizationBounds) -> None:
    for name in ("bandwidth", "snr", "residence"):
        b: MetricBounds = getattr(bounds, name)
        if not (math.isfinite(b.min) and math.isfinite(b.max)) or b.min >= b.max:
            raise BadBounds(f"{name} bounds need finite min < max, got [{b.min}, {b.max}]")


def _scale(value: float, b: MetricBounds) -> float:
    return min(1.0, max(0.0, (value - b.min) / (b.max - b.min)))


def residence_time_ms(
    position: Tuple[float, float], velocity: Tuple[float, float], center: Tuple[float, float], radius: float
) -> float:
    """Time the user stays inside the disc moving along its current velocity (inf if stationary inside)."""
    px, py = position[0] - center[0], position[1] - center[1]
    vx, vy = velocity
    a = vx * vx + vy * vy
    inside = px * px + py * py <= radius * radius
    if a == 0.0:
        return math.inf if inside else 0.0
    b = 2.0 * (px * vx + py * vy)
    c = px * px + py * py - radius * radius
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return 0.0
    root = math.sqrt(disc)
    s_in, s_out = (-b - root) / (2.0 * a), (-b + root) / (2.0 * a)
    if s_out <= 0:
        return 0.0
    return (s_out - max(s_in, 0.0)) * 1000.0


def normalize_metrics(
    m: NodeMetrics, user_state: UserState, bounds: NormalizationBounds, candidate: NodeProfile
) -> Components:
    check_bounds(bounds)
    residence = residence_time_ms(user_state.position, user_state.velocity, candidate.position, candidate.coverage_radius)
    return Components(
        bandwidth=_scale(m.bandwidth_avail, bounds.bandwidth),
        cpu_headroom=1.0 - m.cpu_load,
        mem_headroom=1.0 - m.mem_used,
        snr=_scale(m.snr, bounds.snr),
        residence=1.0 if math.isinf(residence) else _scale(residence, bounds.residence),
        traffic_match=1.0 if m.traffic_type == user_state.traffic_type else 0.0,
    )


def weighted_score(components: Components, weights: RankingWeights) -> float:
    canonical = weights.canonical()
    raw = sum(w * c for w, c in zip(canonical.as_tuple(), components.as_tuple()))
    # Quantized so summation-order noise cannot reorder equal candidates.
    return round(min(1.0, max(0.0, raw)), 12)


def rank_candidates(
    scores_input: Sequence[Tuple[NodeMetrics, Components]],
    weights: RankingWeights,
    now: Optional[int] = None,
) -> List[CandidateScore]:
    scored = [
        CandidateScore(
            node_id=metrics.node_id,
            score=weighted_score(components, weights),
            components=components,
            metrics_staleness=0 if now is None else now - metrics.sampled_at,
        )
        for metrics, components in scores_input
    ]
    return sorted(scored, key=lambda c: (-c.score, -c.components.bandwidth, c.node_id))
