import random
from typing import List

from src.schemas.intent import IntentTemplate, QoERequirements, SubTaskTemplate
from src.schemas.node import NodeProfile
from src.schemas.scenario import (
    MobilityPath,
    RandomWaypointSpec,
    Scenario,
    UserSpec,
    WorldBounds,
)
from src.simkernel.mobility import generate_random_waypoints
from src.simkernel.rng import derive_seed

GRID_SPACING = 200.0
COVERAGE_RADIUS = 200.0
INPUT_SIZE = 200_000  # bytes; large enough that shipping state always beats a full offload


def grid_nodes(columns: int, rows: int, cpu_capacity: float = 10.0) -> List[NodeProfile]:
    """Compute nodes on a square grid whose discs cover the whole world, plus two rendezvous nodes."""
    nodes = []
    for i in range(columns):
        for j in range(rows):
            nodes.append(
                NodeProfile(
                    node_id=f"E{i}{j}",
                    position=(GRID_SPACING / 2 + i * GRID_SPACING, GRID_SPACING / 2 + j * GRID_SPACING),
                    coverage_radius=COVERAGE_RADIUS,
                    cpu_capacity=cpu_capacity,
                    zone="grid",
                )
            )
    width, height = columns * GRID_SPACING, rows * GRID_SPACING
    for k, x in enumerate((width / 4, 3 * width / 4)):
        nodes.append(
            NodeProfile(
                node_id=f"R{k}",
                position=(x, height / 2),
                coverage_radius=1.0,
                cpu_capacity=100.0,
                is_rendezvous=True,
                zone="grid",
            )
        )
    return nodes


def random_scenario(
    seed: int,
    columns: int = 4,
    rows: int = 4,
    mobility_horizon_ms: int = 20_000,
    name: str = "random",
) -> Scenario:
    """
    A fault-free scenario with one mobile user on a fully covered grid.

    The user wanders until `mobility_horizon_ms` and rests afterwards, so
    both protocols eventually finish; end_time leaves room for the baseline
    to redo all of its work after the last move.
    """
    rng = random.Random(derive_seed(seed, "scenario"))
    world = WorldBounds(max_x=columns * GRID_SPACING, max_y=rows * GRID_SPACING)
    nodes = grid_nodes(columns, rows)

    spec = RandomWaypointSpec(
        seed=rng.randrange(1 << 16),
        speed_min=rng.choice([5.0, 10.0, 15.0]),
        speed_max=rng.choice([20.0, 30.0]),
        pause_min_ms=0,
        pause_max_ms=rng.choice([0, 500, 2000]),
    )
    waypoints = generate_random_waypoints(spec, "u1", world, 0, mobility_horizon_ms, seed)
    path = MobilityPath(user_id="u1", waypoints=waypoints)

    subtasks = [
        SubTaskTemplate(
            work_units=rng.randint(20, 80),
            input_size=INPUT_SIZE,
            state_base=rng.randint(1000, 8000),
            state_slope=rng.randint(0, 4000),
        )
        for _ in range(rng.randint(1, 3))
    ]
    work = sum(st.work_units for st in subtasks)
    quantum = nodes[0].quantum_ms
    end_time = waypoints[-1].at + 4 * work * quantum + 10_000
    template = IntentTemplate(
        name="wander",
        subtasks=subtasks,
        qoe=QoERequirements(max_latency=end_time),
        time_budget=10 * end_time,
        relevance_threshold=0.5,
    )
    return Scenario(
        name=f"{name}{seed}",
        world=world,
        nodes=nodes,
        users=[UserSpec(user_id="u1", path=path, template=template, submit_at=rng.randint(0, 2000))],
        end_time=end_time,
    )
