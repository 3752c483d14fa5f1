"""Small fully-connected Q-network with manual backprop, Adam, and a replay buffer."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

STATE_SIZE = 28   # 4 phase one-hot + 12 movements x (pressure, running)
N_ACTIONS = 4


class TrainingError(RuntimeError):
    pass


class QNetwork:
    """ReLU MLP; parameters are kept as a list ``[W0, b0, W1, b1, ...]``."""

    def __init__(self, sizes: Sequence[int] = (STATE_SIZE, 64, 64, N_ACTIONS), rng=None, init: str = "he"):
        self.sizes = tuple(int(s) for s in sizes)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = []
        for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
            if init == "zeros":
                W = np.zeros((fan_in, fan_out))
            else:
                bound = math.sqrt(6.0 / fan_in)
                W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.params += [W, np.zeros(fan_out)]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "QNetwork":
        other = QNetwork.__new__(QNetwork)
        other.sizes = self.sizes
        other.params = [p.copy() for p in self.params]
        return other

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {vec.size}")
        k = 0
        for i, p in enumerate(self.params):
            self.params[i] = vec[k:k + p.size].reshape(p.shape).copy()
            k += p.size

    def forward(self, x, cache: bool = False):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"state has {h.shape[1]} features, network expects {self.sizes[0]}")
        acts = [h]
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            acts.append(h)
        out = h[0] if single else h
        return (out, acts) if cache else out

    def loss_and_grads(self, states, actions, targets):
        """Mean squared error of Q(s, a) against ``targets`` and its gradient."""
        q, acts = self.forward(np.atleast_2d(states), cache=True)
        n = q.shape[0]
        rows = np.arange(n)
        diff = q[rows, actions] - targets
        loss = float(np.mean(diff ** 2))
        delta = np.zeros_like(q)
        delta[rows, actions] = 2.0 * diff / n
        grads = [None] * len(self.params)
        for i in reversed(range(len(self.params) // 2)):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[2 * i].T) * (acts[i] > 0)
        return loss, grads

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "params": self.flat().tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "QNetwork":
        net = cls(data["sizes"], init="zeros")
        net.set_flat(data["params"])
        return net


class Adam:
    """Per-parameter adaptive learning-rate optimizer."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params: list, grads: list) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class Transition:
    state: tuple
    action: int
    reward: float
    next_state: tuple
    terminal: bool = False


class ReplayBuffer:
    """FIFO buffer with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.items = []
        self.head = 0

    def __len__(self):
        return len(self.items)

    def push(self, item: Transition) -> None:
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.head] = item
            self.head = (self.head + 1) % self.capacity

    def sample(self, batch_size: int, rng) -> list:
        idx = rng.integers(len(self.items), size=batch_size)
        return [self.items[i] for i in idx]


def bellman_target(transition: Transition, target_net: QNetwork, gamma: float) -> float:
    """Reward plus discounted best next-state value (reward alone when terminal)."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    if transition.terminal or gamma == 0:
        return float(transition.reward)
    return float(transition.reward + gamma * np.max(target_net.forward(transition.next_state)))


def batch_targets(batch: Sequence[Transition], target_net: QNetwork, gamma: float,
                  reward_scale: float = 1.0) -> np.ndarray:
    rewards = np.array([t.reward for t in batch]) * reward_scale
    done = np.array([t.terminal for t in batch])
    nxt = target_net.forward(np.array([t.next_state for t in batch])).max(axis=1)
    return rewards + np.where(done, 0.0, gamma * nxt)


def train_step(net: QNetwork, target_net: QNetwork, batch: Sequence[Transition], optimizer: Adam,
               gamma: float, reward_scale: float = 1.0) -> float:
    """One gradient step on the squared Bellman error of ``batch``; returns the loss."""
    if not batch:
        raise ValueError("empty batch")
    states = np.array([t.state for t in batch])
    actions = np.array([t.action for t in batch])
    targets = batch_targets(batch, target_net, gamma, reward_scale)
    loss, grads = net.loss_and_grads(states, actions, targets)
    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingError(
            f"non-finite loss {loss} (max |target| {np.max(np.abs(targets)):.3g}, "
            f"max |param| {max(np.max(np.abs(p)) for p in net.params):.3g})")
    optimizer.step(net.params, grads)
    return loss


def act(net: QNetwork, state, epsilon: float, rng) -> int:
    """Epsilon-greedy action; greedy ties go to the lowest index."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(net.sizes[-1]))
    return int(np.argmax(net.forward(state)))


def forward(net: QNetwork, state) -> np.ndarray:
    return net.forward(state)
