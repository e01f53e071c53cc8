"""Clock-offset estimation between manager and agents.

A probe is one request/response pair carrying four timestamps:
t1 manager send, t2 agent receive, t3 agent send, t4 manager receive
(each in the sender's own clock).  From these:

    offset = ((t2 - t1) + (t3 - t4)) / 2
    delay  = (t4 - t1) - (t3 - t2)

The estimate is exact whenever both link directions have equal latency.
Per agent we keep the last 8 samples and use the offset of the
minimum-delay one.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

DEFAULT_SYNC_INTERVAL_MS = 3_600_000  # one simulated hour
WINDOW = 8


@dataclass(frozen=True)
class SyncSample:
    t1: int
    t2: int
    t3: int
    t4: int

    @property
    def offset(self) -> float:
        return ((self.t2 - self.t1) + (self.t3 - self.t4)) / 2

    @property
    def delay(self) -> int:
        return (self.t4 - self.t1) - (self.t3 - self.t2)


def best_offset(samples) -> float:
    """Offset of the minimum-delay sample; raises ValueError when empty."""
    samples = list(samples)
    if not samples:
        raise ValueError("no sync samples in window")
    return min(samples, key=lambda s: s.delay).offset


class OffsetTable:
    """Per-agent rolling window of sync samples."""

    def __init__(self, window: int = WINDOW):
        self._window = window
        self._samples: dict[str, deque[SyncSample]] = {}

    def add(self, agent: str, sample: SyncSample):
        self._samples.setdefault(agent, deque(maxlen=self._window)).append(sample)

    def offset(self, agent: str) -> float | None:
        """Best current offset for the agent, or None when no sample yet."""
        samples = self._samples.get(agent)
        if not samples:
            return None
        return best_offset(samples)

    def samples(self, agent: str) -> list[SyncSample]:
        return list(self._samples.get(agent, ()))
