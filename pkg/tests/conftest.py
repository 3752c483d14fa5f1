import numpy as np
import pytest

from atsc.network import FlowSpec, FlowVehicle, generate_grid
from atsc.simulator import SimConfig, Simulator, Vehicle


def route_through(network, lane_id):
    """Shortest route that continues from ``lane_id`` using one of its turns."""
    lane = network.lane(lane_id)
    road = lane.road
    if network.is_exit(road):
        return (road,)
    turn = sorted(lane.turns)[0]
    m = [m for m in network.movements_from(road) if m.turn == turn][0]
    return (road, m.out_road)


def place(sim, world, lane_id, position, speed, vid=None, route=None, entry_time=0):
    """Drop a vehicle directly onto a lane (bypassing injection)."""
    route = route or route_through(sim.network, lane_id)
    links = [sim.links[(a, b)] for a, b in zip(route, route[1:])]
    vid = vid if vid is not None else 10_000 + sum(1 for _ in world.vehicles())
    v = Vehicle(vid, route, links, 5.0, 2.5, entry_time)
    k = sim.lane_index[lane_id]
    v.lane, v.position, v.speed = k, float(position), float(speed)
    world.lanes[k].append(v)
    world.lanes[k].sort(key=lambda x: -x.position)
    world.entered += 1
    return v


def random_world(seed, max_vehicles=40):
    """Small random world: 1 or 2 intersections, random road lengths, random
    vehicles with speeds that straddle the stop-speed threshold."""
    rng = np.random.default_rng(seed)
    cols = int(rng.integers(1, 3))
    net = generate_grid(1, cols, float(rng.integers(60, 400)), float(rng.integers(60, 400)))
    sim = Simulator(net, FlowSpec(), SimConfig())
    world = sim.new_world([int(rng.integers(4)) for _ in net.intersections])
    n = int(rng.integers(0, max_vehicles + 1))
    lanes = sim.lane_ids
    for i in range(n):
        lid = lanes[int(rng.integers(len(lanes)))]
        length = net.road(net.lane(lid).road).length
        pos = float(rng.uniform(0, length))
        speed = float(rng.choice([0.0, 0.05, 0.0999, 0.1, float(rng.uniform(0, 11.11))]))
        place(sim, world, lid, pos, speed, vid=i)
    return sim, world


@pytest.fixture
def grid1():
    return generate_grid(1, 1, 300, 300, 3, 11.11)


def single_flow(route, t=0):
    return FlowSpec((FlowVehicle(t, tuple(route)),))


def pytest_terminal_summary(terminalreporter):
    import acceptance_report
    if acceptance_report.LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(acceptance_report.LINES):
            terminalreporter.write_line(acceptance_report.LINES[k])
