import math
import random

import pytest

from src.core.exceptions import BeforePathStart
from src.schemas.node import NodeProfile
from src.schemas.scenario import MobilityMode, MobilityPath, RadioModel, RandomWaypointSpec, Waypoint, WorldBounds
from src.simkernel.mobility import materialize, position_at, segments, speed_at, velocity_at
from src.simkernel.radio import connected, effective_radius, rssi, rssi_range, snr, transfer_time

RADIO = RadioModel()
PATH = MobilityPath(user_id="u1", waypoints=[Waypoint(x=0, y=0, at=0), Waypoint(x=300, y=0, at=30000)])


# =========================================================================
# Radio
# =========================================================================

def test_log_distance_path_loss():
    assert rssi(RADIO, 1.0) == pytest.approx(-20.0)
    assert rssi(RADIO, 10.0) == pytest.approx(-50.0)
    assert rssi(RADIO, 100.0) == pytest.approx(-80.0)
    # below the reference distance the loss is clamped
    assert rssi(RADIO, 0.1) == pytest.approx(-20.0)
    assert snr(RADIO, 10.0) == pytest.approx(45.0)


def test_rssi_range_meets_threshold_exactly():
    reach = rssi_range(RADIO)
    assert reach == pytest.approx(10 ** (70 / 30))
    assert rssi(RADIO, reach) == pytest.approx(RADIO.connect_threshold_rssi)


def test_coverage_boundary_is_closed():
    node = NodeProfile(node_id="A", position=(0, 0), coverage_radius=50, cpu_capacity=4)
    assert connected(RADIO, (50.0, 0.0), node)
    assert not connected(RADIO, (50.001, 0.0), node)
    assert effective_radius(RADIO, node) == 50


def test_effective_radius_is_capped_by_radio_reach():
    node = NodeProfile(node_id="A", position=(0, 0), coverage_radius=1000, cpu_capacity=4)
    assert effective_radius(RADIO, node) == pytest.approx(rssi_range(RADIO))
    assert not connected(RADIO, (300.0, 0.0), node)


def test_transfer_time_uses_the_bottleneck_and_rounds_up():
    assert transfer_time(4264, 1_000_000, 1_000_000, RADIO) == 40
    assert transfer_time(4014, 1_000_000, 1_000_000, RADIO) == 38
    assert transfer_time(4264, 1_000_000, 500_000, RADIO) == 74
    assert transfer_time(0, 1_000_000, 1_000_000, RADIO) == RADIO.base_link_latency
    # exact multiples do not pick up an extra millisecond
    assert transfer_time(1000, 1_000_000, 1_000_000, RADIO) == 8 + 5


def test_transfer_time_is_monotonic_in_size():
    sizes = sorted(random.Random(3).randrange(0, 200_000) for _ in range(200))
    times = [transfer_time(s, 1_000_000, 2_000_000, RADIO) for s in sizes]
    assert times == sorted(times)


def test_cpu_capacity_must_give_whole_quanta():
    assert NodeProfile(node_id="A", position=(0, 0), coverage_radius=1, cpu_capacity=4).quantum_ms == 250
    with pytest.raises(ValueError):
        NodeProfile(node_id="A", position=(0, 0), coverage_radius=1, cpu_capacity=3)


# =========================================================================
# Mobility
# =========================================================================

def test_position_is_piecewise_linear_and_rests_at_the_end():
    assert position_at(PATH, 0) == (0.0, 0.0)
    assert position_at(PATH, 8150) == pytest.approx((81.5, 0.0))
    assert position_at(PATH, 30000) == (300.0, 0.0)
    assert position_at(PATH, 45000) == (300.0, 0.0)
    assert velocity_at(PATH, 100) == pytest.approx((10.0, 0.0))
    assert velocity_at(PATH, 30000) == (0.0, 0.0)
    assert speed_at(PATH, 5000) == pytest.approx(10.0)


def test_position_before_the_path_raises():
    late = MobilityPath(user_id="u1", waypoints=[Waypoint(x=0, y=0, at=100)])
    with pytest.raises(BeforePathStart):
        position_at(late, 99)


def test_segments_start_mid_segment():
    pieces = segments(PATH, 8005)
    assert len(pieces) == 1
    t0, t1, p0, p1 = pieces[0]
    assert (t0, t1) == (8005, 30000)
    assert p0 == pytest.approx((80.05, 0.0))
    assert p1 == (300.0, 0.0)


def test_random_waypoints_are_seeded_and_in_bounds():
    bounds = WorldBounds(max_x=500, max_y=300)
    spec = RandomWaypointSpec(seed=4, speed_min=1.0, speed_max=3.0, pause_max_ms=500)
    path = MobilityPath(user_id="u1", mode=MobilityMode.RANDOM_WAYPOINT, random_waypoint=spec)

    first = materialize(path, bounds, 60000, run_seed=9)
    again = materialize(path, bounds, 60000, run_seed=9)
    other = materialize(path, bounds, 60000, run_seed=10)

    assert first.waypoints == again.waypoints
    assert first.waypoints != other.waypoints
    assert first.waypoints[-1].at >= 60000
    assert all(bounds.contains(w.position) for w in first.waypoints)
    times = [w.at for w in first.waypoints]
    assert all(b > a for a, b in zip(times, times[1:]))
    for a, b in zip(first.waypoints, first.waypoints[1:]):
        speed = math.hypot(b.x - a.x, b.y - a.y) / ((b.at - a.at) / 1000.0)
        assert speed <= spec.speed_max + 1e-6


def test_scripted_paths_pass_through_materialize():
    assert materialize(PATH, WorldBounds(max_x=400, max_y=10), 1000, run_seed=1) is PATH
