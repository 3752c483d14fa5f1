"""Road-network data model, synthetic grid generator and Poisson demand generator.

Intersections are four-way.  Each one exposes its 12 movements in a fixed
order (approach N, E, S, W; turn left, straight, right) and 4 signal phases
in the order NS-straight, EW-straight, NS-left, EW-left.  Right turns are
never part of a phase: they are always permitted.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

TURNS = ("left", "straight", "right")
SIDES = ("N", "E", "S", "W")

# (approach side, turn) pairs making up each phase, in action-index order.
PHASE_LAYOUT = (
    (("N", "straight"), ("S", "straight")),
    (("E", "straight"), ("W", "straight")),
    (("N", "left"), ("S", "left")),
    (("E", "left"), ("W", "left")),
)
PHASE_NAMES = ("NS-straight", "EW-straight", "NS-left", "EW-left")

# CityFlow road direction suffix: 0 east, 1 north, 2 west, 3 south.
_HEADINGS = {0: (1, 0), 1: (0, 1), 2: (-1, 0), 3: (0, -1)}


class NetworkError(ValueError):
    """Raised for structurally invalid networks or flows."""


class UnsupportedTopologyError(NetworkError):
    """Raised for signalized nodes that are not standard four-way intersections."""


@dataclass(frozen=True)
class Lane:
    id: str
    road: str
    index: int
    turns: frozenset

    def __post_init__(self):
        if not self.turns:
            raise NetworkError(f"lane {self.id} has no turn permission")


@dataclass(frozen=True)
class Road:
    id: str
    start: str
    end: str
    length: float
    max_speed: float
    lanes: tuple

    def __post_init__(self):
        if self.length <= 0 or self.max_speed <= 0:
            raise NetworkError(f"road {self.id}: length and max_speed must be positive")
        if not self.lanes:
            raise NetworkError(f"road {self.id} has no lanes")

    @property
    def lane_ids(self) -> tuple:
        return tuple(lane.id for lane in self.lanes)


@dataclass(frozen=True)
class Movement:
    in_road: str
    out_road: str
    turn: str
    in_lanes: tuple   # used incoming lanes (M of the efficient pressure)
    out_lanes: tuple  # used outgoing lanes (N of the efficient pressure)

    @property
    def signalized(self) -> bool:
        return self.turn != "right"


@dataclass(frozen=True)
class Phase:
    index: int
    movements: tuple

    @property
    def name(self) -> str:
        return PHASE_NAMES[self.index]


@dataclass(frozen=True)
class Intersection:
    id: str
    in_roads: tuple   # one road id per side, SIDES order
    out_roads: tuple  # one road id per side, SIDES order
    movements: tuple  # 12 movements, canonical order
    phases: tuple     # 4 phases, PHASE_LAYOUT order

    @property
    def right_turns(self) -> tuple:
        return tuple(m for m in self.movements if m.turn == "right")


@dataclass(frozen=True)
class FlowVehicle:
    t: float
    route: tuple


@dataclass(frozen=True)
class FlowSpec:
    vehicles: tuple = ()
    vehicle_length: float = 5.0
    min_gap: float = 2.5

    def __len__(self):
        return len(self.vehicles)

    def to_dict(self) -> dict:
        return {
            "vehicle_length": self.vehicle_length,
            "min_gap": self.min_gap,
            "vehicles": [{"t": v.t, "route": list(v.route)} for v in self.vehicles],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FlowSpec":
        return cls(
            vehicles=tuple(FlowVehicle(v["t"], tuple(v["route"])) for v in data["vehicles"]),
            vehicle_length=data.get("vehicle_length", 5.0),
            min_gap=data.get("min_gap", 2.5),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class TrafficNetwork:
    intersections: tuple
    roads: tuple
    boundary_nodes: frozenset
    node_xy: dict = field(default_factory=dict, compare=False)
    provenance: str = ""

    def __post_init__(self):
        roads = {r.id: r for r in self.roads}
        if len(roads) != len(self.roads):
            raise NetworkError("duplicate road id")
        lanes = {}
        for road in self.roads:
            for lane in road.lanes:
                if lane.road != road.id or lane.id in lanes:
                    raise NetworkError(f"lane {lane.id} must belong to exactly one road")
                lanes[lane.id] = lane
        nodes = {i.id for i in self.intersections} | set(self.boundary_nodes)
        for road in self.roads:
            if road.start not in nodes or road.end not in nodes:
                raise NetworkError(f"road {road.id} has an unknown endpoint")
        moves = {}
        for inter in self.intersections:
            for m in inter.movements:
                if roads[m.in_road].end != inter.id or roads[m.out_road].start != inter.id:
                    raise NetworkError(f"movement {m.in_road}->{m.out_road} is not at {inter.id}")
                moves[(m.in_road, m.out_road)] = (inter, m)
        object.__setattr__(self, "_roads", roads)
        object.__setattr__(self, "_lanes", lanes)
        object.__setattr__(self, "_moves", moves)
        object.__setattr__(self, "_inters", {i.id: i for i in self.intersections})

    def road(self, road_id: str) -> Road:
        return self._roads[road_id]

    def lane(self, lane_id: str) -> Lane:
        return self._lanes[lane_id]

    def intersection(self, inter_id: str) -> Intersection:
        return self._inters[inter_id]

    def has_lane(self, lane_id: str) -> bool:
        return lane_id in self._lanes

    def movement(self, in_road: str, out_road: str) -> Optional[Movement]:
        hit = self._moves.get((in_road, out_road))
        return hit[1] if hit else None

    def movements_from(self, road_id: str) -> list:
        inter = self._inters.get(self._roads[road_id].end)
        if inter is None:
            return []
        return [m for m in inter.movements if m.in_road == road_id]

    def is_entry(self, road_id: str) -> bool:
        return self._roads[road_id].start in self.boundary_nodes

    def is_exit(self, road_id: str) -> bool:
        return self._roads[road_id].end in self.boundary_nodes

    @property
    def entry_roads(self) -> list:
        return [r.id for r in self.roads if r.start in self.boundary_nodes]

    @property
    def exit_roads(self) -> list:
        return [r.id for r in self.roads if r.end in self.boundary_nodes]

    @property
    def lane_ids(self) -> list:
        return [lane.id for road in self.roads for lane in road.lanes]

    def incoming_lanes(self, inter: Intersection) -> list:
        return [lid for rid in inter.in_roads for lid in self._roads[rid].lane_ids]

    def outgoing_lanes(self, inter: Intersection) -> list:
        return [lid for rid in inter.out_roads for lid in self._roads[rid].lane_ids]

    @property
    def bbox(self) -> tuple:
        if not self.node_xy:
            return (0.0, 0.0, 0.0, 0.0)
        xs = [p[0] for p in self.node_xy.values()]
        ys = [p[1] for p in self.node_xy.values()]
        return (min(xs), min(ys), max(xs), max(ys))

    @property
    def max_speed(self) -> float:
        return max(r.max_speed for r in self.roads)

    def validate_route(self, route: Sequence[str], index: int = 0) -> None:
        if not route:
            raise NetworkError(f"route {index} is empty")
        for rid in route:
            if rid not in self._roads:
                raise NetworkError(f"route {index} references unknown road {rid}")
        for a, b in zip(route, route[1:]):
            if (a, b) not in self._moves:
                raise NetworkError(f"route {index} is disconnected between {a} and {b}")

    # canonical serialization

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance,
            "boundary_nodes": sorted(self.boundary_nodes),
            "node_xy": {k: list(v) for k, v in sorted(self.node_xy.items())},
            "roads": [
                {
                    "id": r.id, "start": r.start, "end": r.end,
                    "length": r.length, "max_speed": r.max_speed,
                    "lanes": [{"id": l.id, "index": l.index, "turns": sorted(l.turns)} for l in r.lanes],
                }
                for r in self.roads
            ],
            "intersections": [
                {
                    "id": i.id,
                    "in_roads": list(i.in_roads),
                    "out_roads": list(i.out_roads),
                    "movements": [
                        {"in_road": m.in_road, "out_road": m.out_road, "turn": m.turn,
                         "in_lanes": list(m.in_lanes), "out_lanes": list(m.out_lanes)}
                        for m in i.movements
                    ],
                }
                for i in self.intersections
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "TrafficNetwork":
        roads = tuple(
            Road(r["id"], r["start"], r["end"], r["length"], r["max_speed"],
                 tuple(Lane(l["id"], r["id"], l["index"], frozenset(l["turns"])) for l in r["lanes"]))
            for r in data["roads"]
        )
        inters = []
        for i in data["intersections"]:
            movements = tuple(
                Movement(m["in_road"], m["out_road"], m["turn"], tuple(m["in_lanes"]), tuple(m["out_lanes"]))
                for m in i["movements"]
            )
            inters.append(Intersection(i["id"], tuple(i["in_roads"]), tuple(i["out_roads"]),
                                       movements, _phases(movements, tuple(i["in_roads"]))))
        return cls(tuple(inters), roads, frozenset(data["boundary_nodes"]),
                   {k: tuple(v) for k, v in data.get("node_xy", {}).items()}, data.get("provenance", ""))

    @classmethod
    def from_json(cls, text: str) -> "TrafficNetwork":
        return cls.from_dict(json.loads(text))


def side_of_heading(dx: float, dy: float, arriving: bool) -> str:
    """Side of an intersection a road touches, given its travel heading.

    A road heading south arrives from the N side; a road heading south leaves
    through the S side.
    """
    if dx == 0 and dy == 0:
        raise UnsupportedTopologyError("degenerate road heading")
    angle = math.degrees(math.atan2(dy, dx)) % 360
    toward = ("E", "N", "W", "S")[int(((angle + 45) % 360) // 90)]
    if not arriving:
        return toward
    return SIDES[(SIDES.index(toward) + 2) % 4]


def exit_side(approach: str, turn: str) -> str:
    k = SIDES.index(approach)
    return SIDES[(k + {"straight": 2, "left": 1, "right": 3}[turn]) % 4]


def _phases(movements: tuple, in_roads: tuple) -> tuple:
    by_key = {}
    for m in movements:
        by_key[(SIDES[in_roads.index(m.in_road)], m.turn)] = m
    return tuple(Phase(k, tuple(by_key[key] for key in layout)) for k, layout in enumerate(PHASE_LAYOUT))


def assemble_intersection(node_id: str, in_by_side: dict, out_by_side: dict,
                          roads: dict, links: Optional[Iterable] = None) -> Intersection:
    """Build the 12 movements and 4 phases of a four-way node.

    ``in_by_side`` / ``out_by_side`` map each of N, E, S, W to a road id.
    ``links`` optionally restricts which (in_road, out_road, turn) triples exist;
    when omitted every geometric turn exists.  Incoming used lanes are the lanes
    whose permission includes the turn; outgoing used lanes are all lanes.
    """
    if set(in_by_side) != set(SIDES) or set(out_by_side) != set(SIDES):
        raise UnsupportedTopologyError(f"{node_id} is not a four-way intersection")
    allowed = None if links is None else {(a, b): t for a, b, t in links}
    movements = []
    for side in SIDES:
        in_road = roads[in_by_side[side]]
        for turn in TURNS:
            out_road = roads[out_by_side[exit_side(side, turn)]]
            if allowed is not None:
                if allowed.get((in_road.id, out_road.id)) != turn:
                    raise UnsupportedTopologyError(
                        f"{node_id}: missing {turn} movement from {in_road.id}")
            used = tuple(l.id for l in in_road.lanes if turn in l.turns)
            if not used:
                raise UnsupportedTopologyError(f"{node_id}: no lane of {in_road.id} permits {turn}")
            movements.append(Movement(in_road.id, out_road.id, turn, used, out_road.lane_ids))
    movements = tuple(movements)
    in_roads = tuple(in_by_side[s] for s in SIDES)
    return Intersection(node_id, in_roads, tuple(out_by_side[s] for s in SIDES),
                        movements, _phases(movements, in_roads))


def generate_grid(rows: int, cols: int, ew_length: float = 300.0, ns_length: float = 300.0,
                  lanes_per_road: int = 3, max_speed: float = 11.11) -> TrafficNetwork:
    """Grid of rows x cols four-way intersections with CityFlow-style naming.

    Signalized nodes are ``intersection_{x}_{y}`` with x in 1..cols and y in
    1..rows; the ring of boundary nodes sits at x in {0, cols+1} or y in
    {0, rows+1}.  East-west road segments are ``ew_length`` long, north-south
    ones ``ns_length``.  With 3 lanes, lane 0 turns left, 1 goes straight and
    2 turns right.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid needs at least one row and one column")
    if ew_length <= 0 or ns_length <= 0 or max_speed <= 0:
        raise ValueError("lengths and max_speed must be positive")
    if lanes_per_road < 1:
        raise ValueError("lanes_per_road must be >= 1")

    def node(x, y):
        return f"intersection_{x}_{y}"

    def lane_turns(k):
        if lanes_per_road == 3:
            return frozenset([TURNS[k]])
        if lanes_per_road == 1:
            return frozenset(TURNS)
        # leftmost lane also turns left, rightmost also turns right
        turns = {"straight"}
        if k == 0:
            turns.add("left")
        if k == lanes_per_road - 1:
            turns.add("right")
        return frozenset(turns)

    signalized = {(x, y) for x in range(1, cols + 1) for y in range(1, rows + 1)}
    boundary = set()
    for x in range(1, cols + 1):
        boundary |= {(x, 0), (x, rows + 1)}
    for y in range(1, rows + 1):
        boundary |= {(0, y), (cols + 1, y)}

    roads = {}
    for (x, y) in sorted(signalized | boundary):
        for d, (dx, dy) in _HEADINGS.items():
            to = (x + dx, y + dy)
            if (x, y) in boundary and to not in signalized:
                continue
            if to not in signalized and to not in boundary:
                continue
            length = ew_length if dy == 0 else ns_length
            rid = f"road_{x}_{y}_{d}"
            lanes = tuple(Lane(f"{rid}_{k}", rid, k, lane_turns(k)) for k in range(lanes_per_road))
            roads[rid] = Road(rid, node(x, y), node(*to), float(length), float(max_speed), lanes)

    inters = []
    for (x, y) in sorted(signalized, key=lambda p: (p[1], p[0])):
        in_by_side, out_by_side = {}, {}
        for rid, road in roads.items():
            d = int(rid.rsplit("_", 1)[1])
            if road.end == node(x, y):
                in_by_side[side_of_heading(*_HEADINGS[d], arriving=True)] = rid
            if road.start == node(x, y):
                out_by_side[side_of_heading(*_HEADINGS[d], arriving=False)] = rid
        inters.append(assemble_intersection(node(x, y), in_by_side, out_by_side, roads))

    xy = {node(x, y): (x * ew_length, y * ns_length) for (x, y) in signalized | boundary}
    return TrafficNetwork(
        tuple(inters), tuple(roads[k] for k in sorted(roads)),
        frozenset(node(*p) for p in boundary), xy,
        provenance=f"generate_grid(rows={rows}, cols={cols}, ew={ew_length}, ns={ns_length}, "
                   f"lanes={lanes_per_road}, vmax={max_speed})",
    )


def _continue_straight(network: TrafficNetwork, road_id: str) -> list:
    route = [road_id]
    while not network.is_exit(route[-1]):
        nxt = [m for m in network.movements_from(route[-1]) if m.turn == "straight"]
        if not nxt:
            break
        route.append(nxt[0].out_road)
    return route


def sample_route(network: TrafficNetwork, entry: str, turn_probs: Sequence[float], rng) -> tuple:
    """One-turn route from ``entry``: straight on, optionally one left or right
    turn at a uniformly chosen intersection on the way, then straight to an exit.
    Such a route is a shortest path in a grid."""
    line = _continue_straight(network, entry)
    turn = TURNS[rng.choice(3, p=turn_probs)]
    if turn == "straight":
        return tuple(line)
    turning_roads = [rid for rid in line if not network.is_exit(rid)]
    at = int(rng.integers(len(turning_roads)))
    head = line[: line.index(turning_roads[at]) + 1]
    m = [m for m in network.movements_from(head[-1]) if m.turn == turn][0]
    return tuple(head + _continue_straight(network, m.out_road))


def generate_poisson_flow(network: TrafficNetwork, rate_per_entry: float, horizon: float, seed: int,
                          turn_probs: Sequence[float] = (0.2, 0.6, 0.2),
                          entry_rates: Optional[dict] = None) -> FlowSpec:
    """Per-second Poisson arrivals at every entry road.

    ``turn_probs`` are (left, straight, right) weights.  ``entry_rates`` may
    override the rate of individual entry roads.
    """
    if rate_per_entry < 0:
        raise ValueError("rate must be non-negative")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    probs = np.asarray(turn_probs, dtype=float)
    probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    seconds = int(math.ceil(horizon))
    arrivals = []
    for k, entry in enumerate(sorted(network.entry_roads)):
        rate = (entry_rates or {}).get(entry, rate_per_entry)
        counts = rng.poisson(rate, size=seconds) if rate > 0 else np.zeros(seconds, dtype=int)
        for t in np.flatnonzero(counts):
            for _ in range(int(counts[t])):
                arrivals.append((int(t), k, sample_route(network, entry, probs, rng)))
    arrivals.sort(key=lambda a: (a[0], a[1]))
    return FlowSpec(tuple(FlowVehicle(t, route) for t, _, route in arrivals))
