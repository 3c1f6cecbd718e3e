import math
import random
from typing import List, Optional, Tuple

from src.core.exceptions import BeforePathStart
from src.schemas.scenario import MobilityMode, MobilityPath, RandomWaypointSpec, Waypoint, WorldBounds
from src.simkernel.rng import derive_seed

Position = Tuple[float, float]
Velocity = Tuple[float, float]


def _bracket(path: MobilityPath, t: int) -> int:
    """Index i of the segment [wp[i], wp[i+1]) containing t, or len-1 once the path has ended."""
    waypoints = path.waypoints
    if not waypoints or t < waypoints[0].at:
        raise BeforePathStart(f"t={t} precedes the path of user '{path.user_id}'")
    for i in range(len(waypoints) - 1):
        if waypoints[i].at <= t < waypoints[i + 1].at:
            return i
    return len(waypoints) - 1


def position_at(path: MobilityPath, t: int) -> Position:
    i = _bracket(path, t)
    waypoints = path.waypoints
    if i == len(waypoints) - 1:
        return waypoints[-1].position
    a, b = waypoints[i], waypoints[i + 1]
    frac = (t - a.at) / (b.at - a.at)
    return (a.x + (b.x - a.x) * frac, a.y + (b.y - a.y) * frac)


def velocity_at(path: MobilityPath, t: int) -> Velocity:
    """Velocity in m/s of the segment starting at or before t; zero after the last waypoint."""
    i = _bracket(path, t)
    waypoints = path.waypoints
    if i == len(waypoints) - 1:
        return (0.0, 0.0)
    a, b = waypoints[i], waypoints[i + 1]
    seconds = (b.at - a.at) / 1000.0
    return ((b.x - a.x) / seconds, (b.y - a.y) / seconds)


def speed_at(path: MobilityPath, t: int) -> float:
    vx, vy = velocity_at(path, t)
    return math.hypot(vx, vy)


def segments(path: MobilityPath, start: int) -> List[Tuple[int, int, Position, Position]]:
    """Piecewise-linear pieces of the path from `start` on, as (t0, t1, p0, p1). The user rests at the last waypoint afterwards."""
    waypoints = path.waypoints
    pieces = []
    for a, b in zip(waypoints, waypoints[1:]):
        if b.at <= start:
            continue
        t0 = max(a.at, start)
        pieces.append((t0, b.at, position_at(path, t0), b.position))
    return pieces


def generate_random_waypoints(
    spec: RandomWaypointSpec,
    user_id: str,
    bounds: WorldBounds,
    start_at: int,
    end_time: int,
    run_seed: int,
) -> List[Waypoint]:
    rng = random.Random(derive_seed(run_seed, f"mobility:{user_id}:{spec.seed}"))
    if spec.start is not None:
        x, y = spec.start
    else:
        x = rng.uniform(bounds.min_x, bounds.max_x)
        y = rng.uniform(bounds.min_y, bounds.max_y)
    t = start_at
    waypoints = [Waypoint(x=x, y=y, at=t)]
    while t < end_time:
        tx = rng.uniform(bounds.min_x, bounds.max_x)
        ty = rng.uniform(bounds.min_y, bounds.max_y)
        speed = rng.uniform(spec.speed_min, spec.speed_max)
        travel = max(1, math.ceil(math.hypot(tx - x, ty - y) / speed * 1000.0))
        t += travel
        x, y = tx, ty
        waypoints.append(Waypoint(x=x, y=y, at=t))
        pause = rng.randint(spec.pause_min_ms, spec.pause_max_ms)
        if pause >= 1:
            t += pause
            waypoints.append(Waypoint(x=x, y=y, at=t))
    return waypoints


def materialize(path: MobilityPath, bounds: WorldBounds, end_time: int, run_seed: int, start_at: int = 0) -> MobilityPath:
    """Turns a RandomWaypoint description into concrete waypoints; scripted paths pass through."""
    if path.mode != MobilityMode.RANDOM_WAYPOINT:
        return path
    spec: Optional[RandomWaypointSpec] = path.random_waypoint
    if spec is None:
        raise ValueError(f"user '{path.user_id}' has RandomWaypoint mode without parameters")
    waypoints = generate_random_waypoints(spec, path.user_id, bounds, start_at, end_time, run_seed)
    return path.model_copy(update={"waypoints": waypoints})
