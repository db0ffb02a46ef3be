"""Virtual clock, event loop, cost ledger and seeded random streams shared by the simulator."""
from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Callable, Protocol

import numpy as np

logger = logging.getLogger(__name__)

NS_PER_SECOND = 1_000_000_000
NS_PER_MS = 1_000_000


# ----------------------------
# Errors
# ----------------------------
class SimulationError(Exception):
    """Base class for scenario level failures."""


class SchedulingError(SimulationError):
    """An event was scheduled before the current virtual time."""


class OutOfMemoryError(SimulationError):
    """Both memory tiers are full."""


class InvariantViolation(SimulationError):
    """A conservation or accounting invariant did not hold."""


# ----------------------------
# Clock and events
# ----------------------------
@dataclass
class SimClock:
    now: int = 0

    def advance(self, to_ns: int) -> None:
        if to_ns < self.now:
            raise InvariantViolation(f"❌ Clock moved backwards: {self.now} -> {to_ns} ns")
        self.now = to_ns


@dataclass
class SimEvent:
    name: str
    action: Callable[[int], object]


class EventLoop:
    """Time ordered dispatcher; equal timestamps run in insertion order."""

    def __init__(self, clock: SimClock | None = None):
        self.clock = clock or SimClock()
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._seq = itertools.count()
        self.dispatched = 0

    def __len__(self) -> int:
        return len(self._queue)

    @property
    def now(self) -> int:
        return self.clock.now

    def schedule(self, event: SimEvent, at: int) -> None:
        if at < self.clock.now:
            raise SchedulingError(
                f"❌ Event '{event.name}' scheduled at {at} ns but the clock is at {self.clock.now} ns"
            )
        heapq.heappush(self._queue, (at, next(self._seq), event))

    def every(self, name: str, period_ns: int, action: Callable[[int], object], start: int | None = None) -> None:
        """Run `action` every `period_ns`; the series ends when the action returns False."""
        if period_ns <= 0:
            raise ValueError(f"❌ Period for '{name}' must be positive, got {period_ns}")

        def tick(now: int) -> None:
            if action(now) is False:
                return
            self.schedule(SimEvent(name, tick), now + period_ns)

        self.schedule(SimEvent(name, tick), self.clock.now if start is None else start)

    def run_until(self, end_ns: int) -> None:
        """Dispatch every event due at or before `end_ns`."""
        while self._queue and self._queue[0][0] <= end_ns:
            at, _, event = heapq.heappop(self._queue)
            self.clock.advance(at)
            event.action(at)
            self.dispatched += 1
        if end_ns > self.clock.now:
            self.clock.advance(end_ns)


# ----------------------------
# Cost accounting
# ----------------------------
class CostCategory(str, Enum):
    ACCESS = "access_ns"
    FAULT_HANDLING = "fault_handling_ns"
    MIGRATION_ALLOC = "migration_alloc_ns"
    MIGRATION_UNMAP = "migration_unmap_ns"
    MIGRATION_COPY = "migration_copy_ns"
    MIGRATION_REMAP = "migration_remap_ns"
    DEMOTION = "demotion_ns"
    SCAN = "scan_ns"


COUNTERS = (
    "accesses",
    "promotions",
    "demotions",
    "demote_promoted",
    "hint_faults",
    "promotion_candidates",
    "failed_migrations",
    "restarts",
    "stops",
)


@dataclass
class CostLedger:
    """Virtual time spent by one process, split by where it went, plus event counters."""

    access_ns: int = 0
    fault_handling_ns: int = 0
    migration_alloc_ns: int = 0
    migration_unmap_ns: int = 0
    migration_copy_ns: int = 0
    migration_remap_ns: int = 0
    demotion_ns: int = 0
    scan_ns: int = 0
    accesses: int = 0
    promotions: int = 0
    demotions: int = 0
    demote_promoted: int = 0
    hint_faults: int = 0
    promotion_candidates: int = 0
    failed_migrations: int = 0
    restarts: int = 0
    stops: int = 0

    def charge(self, category: CostCategory | str, ns: int) -> None:
        category = CostCategory(category)
        if ns < 0:
            raise ValueError(f"❌ Cannot charge negative time ({ns} ns) to {category.value}")
        setattr(self, category.value, getattr(self, category.value) + int(ns))

    def bump(self, counter: str, n: int = 1) -> None:
        if counter not in COUNTERS:
            raise KeyError(f"Unknown ledger counter: {counter}")
        if n < 0:
            raise ValueError(f"❌ Counters never decrease, got {n} for {counter}")
        setattr(self, counter, getattr(self, counter) + n)

    def total(self) -> int:
        return sum(getattr(self, c.value) for c in CostCategory)

    def check(self) -> None:
        """Raise InvariantViolation unless the ledger is additive and non-negative."""
        parts = {c.value: getattr(self, c.value) for c in CostCategory}
        negative = [k for k, v in parts.items() if v < 0]
        negative += [k for k in COUNTERS if getattr(self, k) < 0]
        if negative:
            raise InvariantViolation(f"❌ Negative ledger fields: {', '.join(negative)}")
        if self.total() != sum(parts.values()):
            raise InvariantViolation("❌ Ledger total does not equal the sum of its components")

    def as_dict(self) -> dict[str, int]:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["total_ns"] = self.total()
        return out


def cycles_to_ns(cycles: float, clock_ghz: float) -> int:
    if clock_ghz <= 0:
        raise ValueError(f"❌ Clock frequency must be positive, got {clock_ghz}")
    return int(round(cycles / clock_ghz))


# ----------------------------
# Randomness
# ----------------------------
class StreamId(int, Enum):
    ACCESS = 0
    LAYOUT = 1


@dataclass(frozen=True)
class RngStream:
    """One independent random stream per (seed, process, purpose)."""

    seed: int
    process: int
    stream: int = StreamId.ACCESS

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(int(self.process), int(self.stream)))
        return np.random.default_rng(seq)


# ----------------------------
# Metrics
# ----------------------------
class MetricsSink(Protocol):
    def emit(self, row: object) -> None: ...


@dataclass
class ListSink:
    rows: list = field(default_factory=list)

    def emit(self, row: object) -> None:
        self.rows.append(row)
