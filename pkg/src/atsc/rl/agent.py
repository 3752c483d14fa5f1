"""Parameter-shared deep-Q signal control on the pressure + running-vehicle state.

Every ``t_duration`` seconds each intersection builds its state (current phase
one-hot followed by per-movement efficient pressure and effective running
count), the single shared Q-network picks a phase, and the transition from
the previous decision is stored with reward ``-|P_i|`` ("pressure") or minus
the incoming queue ("queue").  Training runs between episodes.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..controllers import run_episode
from ..metrics import EpisodeMetrics, compute_metrics
from ..network import FlowSpec, TrafficNetwork
from ..observer import IntersectionObservation
from ..simulator import SimConfig
from .qnet import N_ACTIONS, STATE_SIZE, Adam, QNetwork, ReplayBuffer, Transition, act, train_step

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.8
    lr: float = 1e-3
    eps_start: float = 0.5
    eps_end: float = 0.02
    eps_decay: float = 0.9          # multiplicative, per episode
    replay_capacity: int = 20000
    batch_size: int = 64
    updates_per_episode: int = 200
    episodes: int = 50
    target_sync: int = 100          # train steps between target-network syncs
    reward_mode: str = "pressure"
    feature_scale: float = 20.0     # ATS features are divided by this
    reward_scale: float = 0.05
    hidden: tuple = (64, 64)
    t_duration: int = 15
    obs_mode: str = "default"
    eval_last: int = 10
    init: str = "he"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.replay_capacity <= 0 or self.batch_size <= 0:
            raise ValueError("replay capacity and batch size must be positive")
        if self.reward_mode not in ("pressure", "queue"):
            raise ValueError("reward_mode must be 'pressure' or 'queue'")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def epsilon(self, episode: int) -> float:
        return max(self.eps_end, self.eps_start * self.eps_decay ** episode)


def agent_state(obs: IntersectionObservation, feature_scale: float = 20.0) -> tuple:
    onehot = [0.0] * N_ACTIONS
    onehot[obs.phase] = 1.0
    state = tuple(onehot + [x / feature_scale for x in obs.ats()])
    if len(state) != STATE_SIZE:
        raise ValueError(f"state has {len(state)} features; a four-way intersection gives {STATE_SIZE}")
    return state


def reward_of(obs: IntersectionObservation, mode: str) -> float:
    if mode == "pressure":
        return -float(abs(obs.intersection_pressure))
    return -float(obs.incoming_queue)


@dataclass
class EpisodeLog:
    episode: int
    epsilon: float
    mean_reward: float
    loss: float
    eval_travel_time: float


@dataclass
class XLightResult:
    net: QNetwork
    metrics: EpisodeMetrics         # final evaluation episode
    eval_travel_time: float         # mean over the last ``eval_last`` evaluation episodes
    curve: list = field(default_factory=list)


def rollout(network: TrafficNetwork, flow: FlowSpec, net: QNetwork, config: TrainConfig,
            epsilon: float, rng, sim_config: SimConfig, buffer: Optional[ReplayBuffer] = None,
            on_tick=None):
    """One episode driven by ``net``; returns (world, rewards)."""
    prev = {}
    rewards = []

    def policy(clock, observations, current):
        targets = []
        for k, obs in enumerate(observations):
            state = agent_state(obs, config.feature_scale)
            if k in prev:
                r = reward_of(obs, config.reward_mode)
                rewards.append(r)
                if buffer is not None:
                    s, a = prev[k]
                    buffer.push(Transition(s, a, r, state, False))
            a = act(net, state, epsilon, rng)
            prev[k] = (state, a)
            targets.append(a)
        return targets

    world, _ = run_episode(network, flow, policy, config.t_duration, sim_config, config.obs_mode,
                           on_tick=on_tick)
    return world, rewards


def evaluate(network: TrafficNetwork, flow: FlowSpec, net: QNetwork, config: TrainConfig,
             sim_config: SimConfig = SimConfig(), on_tick=None) -> EpisodeMetrics:
    """Greedy (epsilon = 0) episode with a frozen network."""
    world, _ = rollout(network, flow, net, config, 0.0, np.random.default_rng(0), sim_config,
                       on_tick=on_tick)
    return compute_metrics(world, sim_config.horizon, seed=config.seed, config_hash=config.digest())


def run_xlight(network: TrafficNetwork, flow: FlowSpec, config: TrainConfig = TrainConfig(),
               sim_config: SimConfig = SimConfig(), net: Optional[QNetwork] = None) -> XLightResult:
    """Train one shared Q-network for ``config.episodes`` episodes.

    After every training episode a greedy evaluation episode is run; the
    reported travel time averages the last ``config.eval_last`` of them.
    With zero episodes the (given or freshly initialised) network is only
    evaluated.
    """
    rng = np.random.default_rng(config.seed)
    if net is None:
        net = QNetwork((STATE_SIZE,) + tuple(config.hidden) + (N_ACTIONS,), rng, config.init)
    target = net.copy()
    optimizer = Adam(config.lr)
    buffer = ReplayBuffer(config.replay_capacity)
    curve = []
    evals = []
    metrics = None
    steps = 0
    for ep in range(config.episodes):
        eps = config.epsilon(ep)
        _, rewards = rollout(network, flow, net, config, eps, rng, sim_config, buffer)
        losses = []
        if len(buffer) >= config.batch_size:
            for _ in range(config.updates_per_episode):
                batch = buffer.sample(config.batch_size, rng)
                losses.append(train_step(net, target, batch, optimizer, config.gamma, config.reward_scale))
                steps += 1
                if steps % config.target_sync == 0:
                    target = net.copy()
        metrics = evaluate(network, flow, net, config, sim_config)
        evals.append(metrics.average_travel_time)
        curve.append(EpisodeLog(ep, eps, float(np.mean(rewards)) if rewards else 0.0,
                                float(np.mean(losses)) if losses else 0.0, metrics.average_travel_time))
        log.info("episode %d eps=%.3f reward=%.2f loss=%.4f eval_tt=%.1f", ep, eps,
                 curve[-1].mean_reward, curve[-1].loss, metrics.average_travel_time)
    if metrics is None:
        metrics = evaluate(network, flow, net, config, sim_config)
        evals.append(metrics.average_travel_time)
    tail = evals[-config.eval_last:]
    return XLightResult(net, metrics, float(np.mean(tail)), curve)


def transfer_eval(trained: QNetwork, network: TrafficNetwork, flow: FlowSpec,
                  config: TrainConfig = TrainConfig(), sim_config: SimConfig = SimConfig()) -> float:
    """Travel time of the frozen ``trained`` policy on the target scenario divided by
    that of a policy trained directly on it with the same configuration.

    Both sides are scored by one greedy evaluation episode of the final network.
    """
    t_transfer = evaluate(network, flow, trained, config, sim_config).average_travel_time
    direct = run_xlight(network, flow, config, sim_config)
    t_train = evaluate(network, flow, direct.net, config, sim_config).average_travel_time
    return t_transfer / t_train


def save_checkpoint(net: QNetwork, config: TrainConfig, path) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "config_hash": config.digest(),
        "n_params": net.n_params,
        **net.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, default=list)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    cfg = dict(doc["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    return QNetwork.from_dict(doc), TrainConfig(**cfg)


def write_curve(curve: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "epsilon", "mean_reward", "loss", "eval_travel_time"])
        for row in curve:
            w.writerow([row.episode, f"{row.epsilon:.6f}", f"{row.mean_reward:.6f}",
                        f"{row.loss:.6f}", f"{row.eval_travel_time:.6f}"])
