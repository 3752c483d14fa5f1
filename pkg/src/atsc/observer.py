"""Traffic-state observables computed from a world snapshot.

Per lane: queue length (vehicles slower than the stop-speed threshold) and
running vehicles within an effective range of the stop line.  Per movement:
efficient pressure (lane-averaged upstream minus downstream queue) and
effective running count.  Per phase: pressure and demand.  Per intersection:
queue pressure.

Averages are evaluated with exact rationals and only then converted to
float, so equal quantities always compare equal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .network import Intersection, Movement, Phase
from .simulator import Simulator, WorldState

OBS_MODES = ("default", "config1", "config2", "config3")
_FIXED_RANGE = {"config1": 100.0, "config2": 200.0, "config3": math.inf}


@dataclass(frozen=True)
class LaneStats:
    lane_id: str
    queue_length: int
    effective_running: int
    total_running: int


@dataclass(frozen=True)
class EffectiveRange:
    v_max: float
    t_duration: float

    @property
    def L(self) -> float:
        return self.v_max * self.t_duration


@dataclass(frozen=True)
class MovementState:
    movement: Movement
    efficient_pressure: float
    effective_running: int


@dataclass(frozen=True)
class IntersectionObservation:
    intersection: str
    phase: int
    movements: tuple              # MovementState per movement, canonical order
    phase_pressure: tuple         # p(s), efficient pressure per phase
    phase_demand: tuple           # d(s)
    intersection_pressure: int    # P_i
    mp_pressure: tuple            # unaveraged queue pressure per phase (classic max-pressure)
    incoming_queue: int
    obs_range: float

    def ats(self) -> list:
        """Flat [e, r, e, r, ...] over the canonical movement order."""
        out = []
        for ms in self.movements:
            out.extend((ms.efficient_pressure, float(ms.effective_running)))
        return out


def effective_range(v_max: float, t_duration: float) -> float:
    return EffectiveRange(v_max, t_duration).L


def observation_range(mode: str, v_max: float, t_duration: float) -> float:
    mode = mode.lower()
    if mode not in OBS_MODES:
        raise ValueError(f"unknown observation mode {mode!r}; expected one of {OBS_MODES}")
    if mode == "default":
        return effective_range(v_max, t_duration)
    return _FIXED_RANGE[mode]


def lane_stats(sim: Simulator, world: WorldState, lane_id: str, L: float,
               stop_threshold: Optional[float] = None) -> LaneStats:
    if lane_id not in sim.lane_index:
        raise KeyError(f"unknown lane {lane_id}")
    if L < 0:
        raise ValueError("L must be non-negative")
    thr = sim.config.stop_speed if stop_threshold is None else stop_threshold
    k = sim.lane_index[lane_id]
    q, eff, run = _count(world.lanes[k], sim.lane_len[k], L, thr)
    return LaneStats(lane_id, q, eff, run)


def _count(vehicles, length, L, thr):
    q = eff = run = 0
    for v in vehicles:
        if v.speed < thr:
            q += 1
        else:
            run += 1
            if length - v.position <= L:
                eff += 1
    return q, eff, run


class _LaneTable:
    """Lane counts for one intersection, gathered once per observation."""

    def __init__(self, sim: Simulator, world: WorldState, inter: Intersection, L: float):
        net = sim.network
        thr = sim.config.stop_speed
        self.queue = {}
        self.eff = {}
        for rid in inter.in_roads + inter.out_roads:
            sink = net.is_exit(rid) and rid in inter.out_roads
            for lid in net.road(rid).lane_ids:
                k = sim.lane_index[lid]
                q, eff, _ = _count(world.lanes[k], sim.lane_len[k], L, thr)
                # vehicles on a road into a sink never queue for long; sinks absorb
                self.queue[lid] = 0 if sink else q
                self.eff[lid] = eff


def _efficient_pressure(table: _LaneTable, m: Movement) -> Fraction:
    up = sum(table.queue[l] for l in m.in_lanes)
    down = sum(table.queue[l] for l in m.out_lanes)
    return Fraction(up * len(m.out_lanes) - down * len(m.in_lanes), len(m.in_lanes) * len(m.out_lanes))


def efficient_pressure(sim: Simulator, world: WorldState, movement: Movement) -> float:
    """Mean queue over the movement's used incoming lanes minus mean queue over
    its outgoing lanes."""
    inter = sim.network.intersection(sim.inter_ids[sim.links[(movement.in_road, movement.out_road)][0]])
    return float(_efficient_pressure(_LaneTable(sim, world, inter, 0.0), movement))


def phase_pressure(pressures: dict, phase: Phase) -> float:
    """Sum of movement efficient pressures over ``phase``.

    ``pressures`` maps movement -> efficient pressure (float or Fraction).
    """
    total = sum((Fraction(pressures[m]) for m in phase.movements), Fraction(0))
    return float(total)


def intersection_pressure(sim: Simulator, world: WorldState, inter: Intersection) -> int:
    table = _LaneTable(sim, world, inter, 0.0)
    net = sim.network
    up = sum(table.queue[l] for l in net.incoming_lanes(inter))
    down = sum(table.queue[l] for l in net.outgoing_lanes(inter))
    return up - down


def movement_running(table_eff: dict, sim: Simulator, m: Movement, lanes: str = "road") -> int:
    """Effective running vehicles of a movement: summed over every lane of its
    incoming road (``lanes="road"``) or only over its used lanes (``"used"``)."""
    ids = sim.network.road(m.in_road).lane_ids if lanes == "road" else m.in_lanes
    return sum(table_eff[l] for l in ids)


def phase_demand(running: dict, phase: Phase) -> int:
    """Sum of movement effective running counts over ``phase``."""
    return sum(running[m] for m in phase.movements)


def observe(sim: Simulator, world: WorldState, inter: Intersection, t_duration: float,
            mode: str = "default", v_max: Optional[float] = None,
            demand_lanes: str = "road") -> IntersectionObservation:
    v_max = sim.network.max_speed if v_max is None else v_max
    L = observation_range(mode, v_max, t_duration)
    table = _LaneTable(sim, world, inter, L)
    net = sim.network
    e = {m: _efficient_pressure(table, m) for m in inter.movements}
    r = {m: movement_running(table.eff, sim, m, demand_lanes) for m in inter.movements}
    classic = {
        m: sum(table.queue[l] for l in m.in_lanes) - sum(table.queue[l] for l in m.out_lanes)
        for m in inter.movements
    }
    in_q = sum(table.queue[l] for l in net.incoming_lanes(inter))
    out_q = sum(table.queue[l] for l in net.outgoing_lanes(inter))
    sig = world.signals[sim.inter_ids.index(inter.id)]
    return IntersectionObservation(
        intersection=inter.id,
        phase=sig.phase if sig.pending is None else sig.pending,
        movements=tuple(MovementState(m, float(e[m]), r[m]) for m in inter.movements),
        phase_pressure=tuple(phase_pressure(e, ph) for ph in inter.phases),
        phase_demand=tuple(phase_demand(r, ph) for ph in inter.phases),
        intersection_pressure=in_q - out_q,
        mp_pressure=tuple(sum(classic[m] for m in ph.movements) for ph in inter.phases),
        incoming_queue=in_q,
        obs_range=L,
    )


def observe_all(sim: Simulator, world: WorldState, t_duration: float, mode: str = "default",
                v_max: Optional[float] = None, demand_lanes: str = "road") -> list:
    return [observe(sim, world, inter, t_duration, mode, v_max, demand_lanes)
            for inter in sim.network.intersections]
