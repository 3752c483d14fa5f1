"""Signal controllers sharing one decision interface, and the episode runner.

Every controller maps (observation, current phase, clock, config) to a
:class:`Decision`.  Ties prefer the current phase, then the lowest index.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

from .metrics import EpisodeMetrics, compute_metrics
from .network import FlowSpec, TrafficNetwork
from .observer import IntersectionObservation, observe
from .simulator import SimConfig, Simulator

CONTROLLERS = ("fixedtime", "maxpressure", "efficientmp", "advancedmp")


@dataclass(frozen=True)
class ControllerConfig:
    t_duration: int = 15
    w1: float = 1.0
    split: tuple = (30, 30, 30, 30)
    tie_break: str = "current-then-lowest"
    exclude_current_in_max: bool = False
    obs_mode: str = "default"

    def __post_init__(self):
        if self.t_duration <= 0:
            raise ValueError("t_duration must be positive")
        if self.w1 < 0:
            raise ValueError("W1 must be non-negative")
        if any(s <= 0 for s in self.split):
            raise ValueError("phase split entries must be positive")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass(frozen=True)
class Decision:
    phase: int
    keep: bool
    info: dict = field(default_factory=dict, compare=False)


def argmax(values: Sequence[float], current: Optional[int] = None) -> int:
    best = max(values)
    if current is not None and values[current] == best:
        return current
    return values.index(best)


def fixed_time_decide(clock: int, config: ControllerConfig) -> Decision:
    cycle = sum(config.split)
    t = clock % cycle
    for k, dur in enumerate(config.split):
        if t < dur:
            return Decision(k, False, {"cycle_time": t})
        t -= dur
    raise AssertionError("unreachable")


def max_pressure_decide(obs: IntersectionObservation, current: Optional[int] = None) -> Decision:
    pressures = list(obs.mp_pressure)
    target = argmax(pressures, current)
    return Decision(target, target == current, {"max_pressure": pressures[target]})


def efficient_mp_decide(obs: IntersectionObservation, current: Optional[int] = None) -> Decision:
    pressures = list(obs.phase_pressure)
    target = argmax(pressures, current)
    return Decision(target, target == current, {"max_pressure": pressures[target]})


def advanced_mp_decide(obs: IntersectionObservation, current: int, config: ControllerConfig) -> Decision:
    """Keep ``current`` while its weighted demand beats every phase pressure,
    otherwise move to the max-pressure phase.

    A zero weighted demand never keeps the phase, so ``w1 == 0`` reduces
    exactly to efficient max-pressure.
    """
    pressures = list(obs.phase_pressure)
    if config.exclude_current_in_max:
        others = [p for k, p in enumerate(pressures) if k != current]
        competing = max(others) if others else float("-inf")
    else:
        competing = max(pressures)
    request = obs.phase_demand[current] * config.w1
    info = {"demand_request": request, "pressure_request": competing}
    if request > 0 and request > competing:
        return Decision(current, True, info)
    target = argmax(pressures, current)
    info["max_pressure"] = pressures[target]
    return Decision(target, target == current, info)


def decide(kind: str, obs: IntersectionObservation, current: int, clock: int,
           config: ControllerConfig) -> Decision:
    if kind == "fixedtime":
        return fixed_time_decide(clock, config)
    if kind == "maxpressure":
        return max_pressure_decide(obs, current)
    if kind == "efficientmp":
        return efficient_mp_decide(obs, current)
    if kind == "advancedmp":
        return advanced_mp_decide(obs, current, config)
    raise ValueError(f"unknown controller {kind!r}; expected one of {CONTROLLERS}")


def run_episode(network: TrafficNetwork, flow: FlowSpec, policy: Callable, t_duration: int,
                sim_config: SimConfig = SimConfig(), obs_mode: str = "default",
                on_decision: Optional[Callable] = None, on_tick: Optional[Callable] = None,
                observe_state: bool = True):
    """Drive one episode; ``policy(clock, observations, current_phases)`` returns
    one target phase per intersection every ``t_duration`` seconds.

    With ``observe_state=False`` the policy receives ``None`` observations.
    ``on_tick(sim, world)`` runs after every simulated second.
    Returns the final world state and the simulator.
    """
    sim = Simulator(network, flow, sim_config)
    world = sim.new_world()
    inters = network.intersections
    current = [0] * len(inters)
    for clock in range(sim_config.horizon):
        commands = None
        if clock % t_duration == 0:
            obs = ([observe(sim, world, i, t_duration, obs_mode) for i in inters]
                   if observe_state else [None] * len(inters))
            targets = policy(clock, obs, list(current))
            if clock == 0:
                # start directly in the chosen phases, no transition at t = 0
                for sig, tgt in zip(world.signals, targets):
                    sig.phase = tgt
            else:
                commands = list(targets)
            current = list(targets)
            if on_decision is not None:
                on_decision(clock, obs, targets, world)
        sim.step(world, commands)
        if on_tick is not None:
            on_tick(sim, world)
    return world, sim


def run_policy(network: TrafficNetwork, flow: FlowSpec, controller: str,
               config: ControllerConfig = ControllerConfig(), horizon: Optional[int] = None,
               sim_config: Optional[SimConfig] = None, decisions: Optional[list] = None,
               on_tick: Optional[Callable] = None) -> EpisodeMetrics:
    """Run ``controller`` for one episode and return its metrics.

    At t = 0 the adaptive controllers start in the phase of maximum pressure.
    ``decisions``, when given, collects ``(clock, [Decision, ...])`` tuples.
    """
    sim_config = sim_config or SimConfig()
    if horizon is not None:
        sim_config = SimConfig(**{**asdict(sim_config), "horizon": horizon})
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}; expected one of {CONTROLLERS}")

    def policy(clock, observations, current):
        out = []
        for obs, cur in zip(observations, current):
            if clock == 0 and controller != "fixedtime":
                d = Decision(argmax(list(obs.phase_pressure if controller != "maxpressure"
                                         else obs.mp_pressure)), False, {"initial": True})
            else:
                d = decide(controller, obs, cur, clock, config)
            out.append(d)
        if decisions is not None:
            decisions.append((clock, out))
        return [d.phase for d in out]

    if controller == "fixedtime":
        # the cycle only changes phase on split boundaries
        interval = math.gcd(*(int(d) for d in config.split))
        world, _ = run_episode(network, flow, policy, interval, sim_config, on_tick=on_tick,
                               observe_state=False)
    else:
        world, _ = run_episode(network, flow, policy, config.t_duration, sim_config,
                               config.obs_mode, on_tick=on_tick)
    return compute_metrics(world, sim_config.horizon, seed=sim_config.seed,
                           config_hash=config.digest())
