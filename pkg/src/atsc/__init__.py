"""Deterministic traffic-signal-control simulator, pressure-based controllers
and a parameter-shared deep-Q agent on the advanced traffic state."""
from .cityflow import CityFlowParseError, load_cityflow
from .controllers import (CONTROLLERS, ControllerConfig, Decision, advanced_mp_decide, efficient_mp_decide,
                          fixed_time_decide, max_pressure_decide, run_episode, run_policy)
from .metrics import EpisodeMetrics, compute_metrics, travel_time_metrics
from .network import (FlowSpec, FlowVehicle, NetworkError, TrafficNetwork, UnsupportedTopologyError,
                      generate_grid, generate_poisson_flow)
from .observer import (IntersectionObservation, LaneStats, effective_range, efficient_pressure,
                       intersection_pressure, lane_stats, observe, phase_demand, phase_pressure)
from .simulator import CommandError, SimConfig, Simulator, WorldState, snapshot_lane, step

__version__ = "0.1.0"
