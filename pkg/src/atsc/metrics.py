"""Episode metrics: average travel time and throughput."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

TRUNCATION_RULE = "vehicles unfinished at the horizon count (horizon - entry)"


@dataclass
class EpisodeMetrics:
    average_travel_time: float
    throughput: int
    completed: int
    injected: int
    unfinished: int
    empty: bool
    queue_series: list = field(default_factory=list, repr=False)
    config_hash: str = ""
    seed: int = 0

    def summary(self) -> dict:
        return {
            "average_travel_time": self.average_travel_time,
            "throughput": self.throughput,
            "completed": self.completed,
            "injected": self.injected,
            "unfinished": self.unfinished,
            "empty": self.empty,
            "config_hash": self.config_hash,
            "seed": self.seed,
        }


def travel_time_metrics(departed: Sequence[tuple], remaining_entries: Sequence[float], horizon: float,
                        injected: int = None, queue_series=None, config_hash: str = "",
                        seed: int = 0) -> EpisodeMetrics:
    """``departed`` holds (entry_time, exit_time) pairs; ``remaining_entries``
    the entry times of vehicles still travelling (or waiting to enter) at the
    horizon."""
    times = [exit_ - entry for entry, exit_ in departed]
    times += [horizon - entry for entry in remaining_entries]
    n = len(times)
    avg = sum(times) / n if n else 0.0
    done = len(departed)
    return EpisodeMetrics(
        average_travel_time=avg,
        throughput=done,
        completed=done,
        injected=done + len(remaining_entries) if injected is None else injected,
        unfinished=len(remaining_entries),
        empty=n == 0,
        queue_series=list(queue_series or []),
        config_hash=config_hash,
        seed=seed,
    )


def compute_metrics(world, horizon: float, seed: int = 0, config_hash: str = "") -> EpisodeMetrics:
    """Metrics of a finished episode held in a ``WorldState``."""
    departed = [(v.entry_time, v.exit_time) for v in world.departed]
    remaining = [v.entry_time for v in world.vehicles()]
    remaining += [v.entry_time for q in world.pending.values() for v in q]
    return travel_time_metrics(departed, remaining, horizon, injected=world.entered,
                               queue_series=world.queue_series, config_hash=config_hash, seed=seed)
