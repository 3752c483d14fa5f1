"""Discrete-time (1 s tick) lane-based traffic simulator.

Each tick, in order:

1. pending signal commands are applied (a change starts yellow + all-red),
2. arrivals due at the current second enter their first road if the chosen
   entry lane has room, otherwise they wait at the boundary,
3. the leader of every lane that can reach its stop line this tick crosses if
   its movement is admitted and the downstream lane has room,
4. all remaining vehicles advance by ``min(max_speed, gap to obstruction)``,
5. crossing vehicles are appended to their downstream lanes,
6. transition countdowns tick down, and the clock advances by one second.

Positions are measured from the lane start to the vehicle front; the stop
line sits at ``position == lane length``.
"""
from __future__ import annotations

import copy
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .network import FlowSpec, NetworkError, TrafficNetwork


class CommandError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    tick: int = 1
    yellow: int = 3
    all_red: int = 2
    vehicle_length: float = 5.0
    min_gap: float = 2.5
    stop_speed: float = 0.1
    horizon: int = 3600
    seed: int = 0

    def __post_init__(self):
        if self.tick != 1:
            raise ValueError("the tick is fixed at 1 second")
        if self.yellow <= 0 or self.all_red <= 0 or self.horizon <= 0:
            raise ValueError("durations must be positive")
        if self.stop_speed <= 0:
            raise ValueError("stop_speed must be positive")

    @property
    def transition(self) -> int:
        return self.yellow + self.all_red


class Vehicle:
    __slots__ = ("id", "route", "cursor", "lane", "position", "speed", "length", "min_gap",
                 "entry_time", "exit_time", "links")

    def __init__(self, vid, route, links, length, min_gap, entry_time):
        self.id = vid
        self.route = route        # road ids
        self.links = links        # per route hop: (intersection index, phase bitmask, signalized)
        self.cursor = 0
        self.lane = -1
        self.position = 0.0
        self.speed = 0.0
        self.length = length
        self.min_gap = min_gap
        self.entry_time = entry_time
        self.exit_time = None

    def __repr__(self):
        return (f"Vehicle({self.id}, lane={self.lane}, pos={self.position:.2f}, "
                f"v={self.speed:.2f})")


@dataclass
class SignalState:
    phase: int = 0
    pending: Optional[int] = None
    countdown: int = 0
    elapsed: int = 0

    @property
    def in_transition(self) -> bool:
        return self.countdown > 0


@dataclass
class WorldState:
    clock: int
    lanes: list                    # per lane index: vehicles ordered front first
    signals: list                  # per intersection index: SignalState
    pending: dict                  # entry road id -> deque of vehicles waiting to enter
    flow_cursor: int = 0           # next not-yet-released FlowSpec index
    departed: list = field(default_factory=list)
    released: int = 0
    entered: int = 0
    queue_series: list = field(default_factory=list)
    last_crossings: list = field(default_factory=list)
    transition_violations: int = 0

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)

    @property
    def on_network(self) -> int:
        return sum(len(q) for q in self.lanes)

    @property
    def waiting(self) -> int:
        return sum(len(q) for q in self.pending.values())

    def vehicles(self):
        for q in self.lanes:
            yield from q

    def state_key(self) -> tuple:
        """Hashable summary of the full dynamic state (for determinism checks)."""
        lanes = tuple(tuple((v.id, v.position, v.speed) for v in q) for q in self.lanes)
        sig = tuple((s.phase, s.pending, s.countdown, s.elapsed) for s in self.signals)
        pend = tuple((k, tuple(v.id for v in q)) for k, q in sorted(self.pending.items()))
        dep = tuple((v.id, v.exit_time) for v in self.departed)
        return (self.clock, lanes, sig, pend, dep, self.flow_cursor, self.released)


class Simulator:
    """Static tables for one (network, flow, config) plus the tick logic."""

    def __init__(self, network: TrafficNetwork, flow: FlowSpec, config: SimConfig = SimConfig()):
        self.network = network
        self.flow = flow
        self.config = config
        self.lane_ids = network.lane_ids
        self.lane_index = {lid: k for k, lid in enumerate(self.lane_ids)}
        self.lane_len = [0.0] * len(self.lane_ids)
        self.lane_vmax = [0.0] * len(self.lane_ids)
        self.lane_exit = [False] * len(self.lane_ids)
        self.road_lanes = {}
        self.turn_lanes = {}
        for road in network.roads:
            idx = [self.lane_index[l.id] for l in road.lanes]
            self.road_lanes[road.id] = idx
            for lane, k in zip(road.lanes, idx):
                self.lane_len[k] = road.length
                self.lane_vmax[k] = road.max_speed
                self.lane_exit[k] = network.is_exit(road.id)
                for turn in lane.turns:
                    self.turn_lanes.setdefault((road.id, turn), []).append(k)
        self.inter_ids = [i.id for i in network.intersections]
        self.n_phases = [len(i.phases) for i in network.intersections]
        self.links = {}
        for k, inter in enumerate(network.intersections):
            for m in inter.movements:
                mask = 0
                for ph in inter.phases:
                    if m in ph.movements:
                        mask |= 1 << ph.index
                self.links[(m.in_road, m.out_road)] = (k, mask, m.signalized, m.turn)
        for k, v in enumerate(flow.vehicles):
            if not network.is_entry(v.route[0]):
                raise NetworkError(f"route {k} does not start at a boundary road")
            network.validate_route(v.route, k)
        self._order = sorted(range(len(flow.vehicles)), key=lambda k: (flow.vehicles[k].t, k))

    def new_world(self, initial_phases=None) -> WorldState:
        phases = list(initial_phases) if initial_phases is not None else [0] * len(self.inter_ids)
        return WorldState(
            clock=0,
            lanes=[[] for _ in self.lane_ids],
            signals=[SignalState(phase=p) for p in phases],
            pending={rid: deque() for rid in self.network.entry_roads},
        )

    # helpers

    def _target_lane(self, veh: Vehicle, road: str, cursor: int, lanes, reserved) -> int:
        if cursor + 1 < len(veh.route):
            turn = veh.links[cursor][3]
            cands = self.turn_lanes[(road, turn)]
        else:
            cands = self.road_lanes[road]
        best, best_n = -1, None
        for k in cands:
            n = len(lanes[k]) + reserved.get(k, (0, 0))[0]
            if best_n is None or n < best_n:
                best, best_n = k, n
        return best

    def _free_space(self, lanes, k: int, reserved) -> float:
        """Room in front of the entry point of lane ``k`` (negative: no room)."""
        if k in reserved:
            return reserved[k][1]
        q = lanes[k]
        if not q:
            return self.lane_len[k]
        tail = q[-1]
        return tail.position - tail.length - tail.min_gap

    def _admitted(self, world: WorldState, link) -> bool:
        inter, mask, signalized, _ = link
        if not signalized:
            return True
        sig = world.signals[inter]
        return sig.countdown == 0 and (mask >> sig.phase) & 1 == 1

    # operations

    def apply_commands(self, world: WorldState, commands) -> None:
        if not commands:
            return
        items = commands.items() if isinstance(commands, dict) else enumerate(commands)
        for key, target in items:
            if target is None:
                continue
            k = self.inter_ids.index(key) if isinstance(key, str) else key
            if not 0 <= target < self.n_phases[k]:
                raise CommandError(f"invalid phase {target} for {self.inter_ids[k]}")
            sig = world.signals[k]
            if sig.countdown > 0:
                sig.pending = target
            elif target != sig.phase:
                sig.pending = target
                sig.countdown = self.config.transition

    def inject_arrivals(self, world: WorldState, flow: Optional[FlowSpec] = None) -> WorldState:
        """Release arrivals due at the current second and let waiting ones enter.

        Safe to call more than once per second: released arrivals are tracked
        by a cursor, and entry needs room at the lane start.
        """
        flow = flow if flow is not None else self.flow
        order = self._order if flow is self.flow else sorted(range(len(flow.vehicles)),
                                                              key=lambda k: (flow.vehicles[k].t, k))
        while world.flow_cursor < len(order):
            k = order[world.flow_cursor]
            spec = flow.vehicles[k]
            if spec.t > world.clock:
                break
            if not self.network.is_entry(spec.route[0]):
                raise NetworkError(f"route {k} does not start at a boundary road")
            links = [self.links[(a, b)] for a, b in zip(spec.route, spec.route[1:])]
            veh = Vehicle(k, spec.route, links, flow.vehicle_length, flow.min_gap, spec.t)
            world.pending[spec.route[0]].append(veh)
            world.flow_cursor += 1
            world.released += 1
        reserved = {}
        for road in sorted(world.pending):
            waiting = world.pending[road]
            while waiting:
                veh = waiting[0]
                k = self._target_lane(veh, road, 0, world.lanes, reserved)
                if self._free_space(world.lanes, k, reserved) < 0:
                    break
                waiting.popleft()
                veh.lane = k
                veh.position = 0.0
                veh.speed = 0.0
                world.lanes[k].append(veh)
                reserved[k] = (reserved.get(k, (0, 0))[0], -veh.length - veh.min_gap)
                world.entered += 1
        return world

    def step(self, world: WorldState, commands=None) -> WorldState:
        """Advance ``world`` by one second in place and return it."""
        self.apply_commands(world, commands)
        self.inject_arrivals(world)
        lanes = world.lanes
        clock_after = world.clock + 1
        stop = self.config.stop_speed

        # decide stop-line crossings against start-of-tick state
        crossing = {}
        reserved = {}
        for k, q in enumerate(lanes):
            if not q or self.lane_exit[k]:
                continue
            lead = q[0]
            vmax = self.lane_vmax[k]
            length = self.lane_len[k]
            if lead.position + vmax < length:
                continue
            link = lead.links[lead.cursor]
            if not self._admitted(world, link):
                continue
            road = lead.route[lead.cursor + 1]
            target = self._target_lane(lead, road, lead.cursor + 1, lanes, reserved)
            free = self._free_space(lanes, target, reserved)
            if free < 0:
                continue
            overshoot = lead.position + vmax - length
            place = min(overshoot, free)
            n = reserved.get(target, (0, 0))[0]
            reserved[target] = (n + 1, place - lead.length - lead.min_gap)
            crossing[k] = (target, overshoot, link)

        # move everything that stays on its lane
        moved_in = []
        world.last_crossings = []
        queued = 0
        for k, q in enumerate(lanes):
            if not q:
                continue
            vmax = self.lane_vmax[k]
            length = self.lane_len[k]
            front = length         # obstruction for the current vehicle
            start = 0
            if k in crossing:
                lead = q[0]
                target, overshoot, link = crossing[k]
                moved_in.append((target, lead, length - lead.position, overshoot))
                inter, _, signalized, _ = link
                if signalized and world.signals[inter].countdown > 0:
                    world.transition_violations += 1
                world.last_crossings.append((self.inter_ids[inter], lead.route[lead.cursor],
                                             lead.route[lead.cursor + 1], lead.id))
                start = 1
            exiting = self.lane_exit[k]
            keep = []
            for veh in q[start:]:
                if exiting and front == length and veh.position + vmax >= length:
                    veh.speed = min(vmax, length - veh.position)
                    veh.exit_time = clock_after
                    veh.lane = -1
                    world.departed.append(veh)
                    continue
                new_pos = veh.position + vmax
                if new_pos > front:
                    new_pos = front
                if new_pos < veh.position:
                    new_pos = veh.position
                veh.speed = new_pos - veh.position
                veh.position = new_pos
                if veh.speed < stop:
                    queued += 1
                front = new_pos - veh.length - veh.min_gap
                keep.append(veh)
            lanes[k] = keep

        # place crossing vehicles on their downstream lanes
        for target, veh, before, overshoot in moved_in:
            q = lanes[target]
            free = self.lane_len[target]
            if q:
                tail = q[-1]
                free = tail.position - tail.length - tail.min_gap
            pos = min(overshoot, free)
            veh.cursor += 1
            veh.lane = target
            veh.position = pos
            veh.speed = before + pos
            if veh.speed < stop:
                queued += 1
            q.append(veh)

        for sig in world.signals:
            if sig.countdown > 0:
                sig.countdown -= 1
                if sig.countdown == 0:
                    if sig.pending is not None and sig.pending != sig.phase:
                        sig.phase = sig.pending
                        sig.elapsed = 0
                    sig.pending = None
                    continue
            sig.elapsed += 1

        world.clock = clock_after
        world.queue_series.append(queued + sum(
            1 for q in world.pending.values() for v in q if v.entry_time < clock_after))
        return world

    def snapshot_lane(self, world: WorldState, lane_id: str) -> list:
        if lane_id not in self.lane_index:
            raise KeyError(f"unknown lane {lane_id}")
        return [(v.position, v.speed) for v in world.lanes[self.lane_index[lane_id]]]

    def trace_record(self, world: WorldState) -> str:
        return json.dumps({
            "clock": world.clock,
            "phases": {i: s.phase for i, s in zip(self.inter_ids, world.signals)},
            "transition": {i: s.countdown for i, s in zip(self.inter_ids, world.signals)},
            "lanes": {lid: len(q) for lid, q in zip(self.lane_ids, world.lanes) if q},
        }, sort_keys=True)


def step(sim: Simulator, world: WorldState, commands=None) -> WorldState:
    """Functional form of :meth:`Simulator.step`: ``world`` is left untouched."""
    return sim.step(world.copy(), commands)


def snapshot_lane(sim: Simulator, world: WorldState, lane_id: str) -> list:
    return sim.snapshot_lane(world, lane_id)
