import math
from typing import Tuple

from src.schemas.node import NodeProfile
from src.schemas.scenario import RadioModel

Position = Tuple[float, float]


def distance(a: Position, b: Position) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def rssi(model: RadioModel, d: float) -> float:
    """Log-distance path loss. Distances below ref_distance clamp to it."""
    d = max(d, model.ref_distance)
    return model.tx_power - (model.ref_loss + 10.0 * model.pathloss_exponent * math.log10(d / model.ref_distance))


def snr(model: RadioModel, d: float) -> float:
    return rssi(model, d) - model.noise_floor


def rssi_range(model: RadioModel) -> float:
    """Largest distance at which rssi still meets the connect threshold."""
    margin = model.tx_power - model.ref_loss - model.connect_threshold_rssi
    return model.ref_distance * 10.0 ** (margin / (10.0 * model.pathloss_exponent))


def effective_radius(model: RadioModel, node: NodeProfile) -> float:
    return min(node.coverage_radius, rssi_range(model))


def connected(model: RadioModel, user_pos: Position, node: NodeProfile, shadowing_db: float = 0.0) -> bool:
    d = distance(user_pos, node.position)
    return d <= node.coverage_radius and rssi(model, d) + shadowing_db >= model.connect_threshold_rssi


def transfer_time(size_bytes: int, src_bw: float, dst_bw: float, model: RadioModel) -> int:
    """Whole-message transfer delay in ms over the slower of the two endpoints."""
    bottleneck = min(src_bw, dst_bw)
    if bottleneck <= 0:
        raise ValueError("bandwidths must be > 0")
    serialization = math.ceil(8 * size_bytes * 1000 / bottleneck - 1e-9) if size_bytes > 0 else 0
    return int(serialization) + model.base_link_latency
