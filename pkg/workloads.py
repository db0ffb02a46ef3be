"""Synthetic access generators, multi-tenant composition and trace replay."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator

import numpy as np

from engine import NS_PER_SECOND, RngStream, SimulationError, StreamId
from memory import AccessKind

logger = logging.getLogger(__name__)


class WorkloadKind(str, Enum):
    UNIFORM_RANDOM = "uniform_random"
    ZIPF_HOTSET = "zipf_hotset"
    STREAMING = "streaming"
    PHASED_MICRO = "phased_micro"
    TRACE = "trace"


class TraceFormatError(SimulationError):
    """A trace line does not follow `<t_ns> <pid> <page> <r|w>`."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"❌ line {line_no}: {message}")
        self.line_no = line_no


# ----------------------------
# Specs
# ----------------------------
@dataclass(frozen=True)
class Phase:
    duration_s: float
    start_frac: float
    end_frac: float

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"❌ Phase duration must be positive, got {self.duration_s}")
        if not 0 <= self.start_frac < self.end_frac <= 1:
            raise ValueError(f"❌ Phase region {self.start_frac}-{self.end_frac} is not within [0, 1]")


@dataclass
class WorkloadSpec:
    kind: WorkloadKind
    rss_pages: int
    hot_fraction: float = 0.1
    hot_access_ratio: float = 0.9
    zipf_s: float = 0.0
    phase_schedule: list[Phase] = field(default_factory=list)
    ops_rate: int = 50_000
    threads: int = 1
    write_ratio: float = 0.2

    def __post_init__(self):
        self.kind = WorkloadKind(self.kind)
        if self.rss_pages < 1:
            raise ValueError(f"❌ rss_pages must be >= 1, got {self.rss_pages}")
        if not 0 < self.hot_fraction <= 1:
            raise ValueError(f"❌ hot_fraction must be in (0, 1], got {self.hot_fraction}")
        if not 0 <= self.hot_access_ratio <= 1 or not 0 <= self.write_ratio <= 1:
            raise ValueError("❌ hot_access_ratio and write_ratio must be in [0, 1]")
        if self.kind is WorkloadKind.PHASED_MICRO and not self.phase_schedule:
            raise ValueError("❌ phased_micro needs a phase schedule")

    @property
    def accesses_per_second(self) -> int:
        return self.ops_rate * self.threads


@dataclass
class TenantSpec:
    workload: WorkloadSpec
    start_offset_s: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.start_offset_s < 0:
            raise ValueError(f"❌ start_offset must be >= 0, got {self.start_offset_s}")


def phased_micro_default(rss_pages: int = 80_000, phase_s: float = 200.0, ops_rate: int = 50_000) -> WorkloadSpec:
    """Dedicated 3/8 of RSS, widened to 6/8, then back to the first 3/8."""
    return WorkloadSpec(
        kind=WorkloadKind.PHASED_MICRO,
        rss_pages=rss_pages,
        phase_schedule=[Phase(phase_s, 0.0, 3 / 8), Phase(phase_s, 0.0, 6 / 8), Phase(phase_s, 0.0, 3 / 8)],
        ops_rate=ops_rate,
    )


def parse_phases(text: str) -> list[Phase]:
    """`200:0-0.375,200:0-0.75` -> phases."""
    phases = []
    for chunk in text.split(","):
        try:
            duration, region = chunk.strip().split(":")
            start, end = region.split("-")
            phases.append(Phase(float(duration), float(start), float(end)))
        except ValueError as e:
            raise ValueError(f"❌ Bad phase '{chunk.strip()}': expected <seconds>:<start>-<end> ({e})") from e
    return phases


# ----------------------------
# Generators
# ----------------------------
class AccessGenerator:
    """Draws page indices for one workload; the layout stream fixes hot sets and regions."""

    def __init__(self, spec: WorkloadSpec, seed: int, pid: int):
        self.spec = spec
        self.rng = RngStream(seed, pid, StreamId.ACCESS).generator()
        self.layout = RngStream(seed, pid, StreamId.LAYOUT).generator().permutation(spec.rss_pages)

    def draw(self, n: int, t_ns: int) -> tuple[np.ndarray, np.ndarray]:
        pages = self._pages(n, t_ns)
        writes = self.rng.random(n) < self.spec.write_ratio
        return pages.astype(np.int64), writes

    def next_access(self, t_ns: int) -> tuple[int, AccessKind]:
        pages, writes = self.draw(1, t_ns)
        return int(pages[0]), AccessKind.WRITE if writes[0] else AccessKind.READ

    def _pages(self, n: int, t_ns: int) -> np.ndarray:
        raise NotImplementedError

    def hot_pages(self, t_ns: int = 0) -> np.ndarray:
        """Pages the workload treats as hot at time t; empty when it has no hot set."""
        return np.empty(0, dtype=np.int64)

    def access_probabilities(self, t_ns: int = 0) -> np.ndarray:
        return np.full(self.spec.rss_pages, 1.0 / self.spec.rss_pages)


class UniformRandom(AccessGenerator):
    def _pages(self, n, t_ns):
        return self.rng.integers(0, self.spec.rss_pages, size=n)


class ZipfHotset(AccessGenerator):
    def __init__(self, spec, seed, pid):
        super().__init__(spec, seed, pid)
        hot_n = max(1, int(round(spec.hot_fraction * spec.rss_pages)))
        self.hot = self.layout[:hot_n]
        self.cold = self.layout[hot_n:]
        weights = 1.0 / np.arange(1, hot_n + 1, dtype=np.float64) ** spec.zipf_s
        self.hot_weights = weights / weights.sum()
        self.hot_cdf = np.cumsum(self.hot_weights)

    def _pages(self, n, t_ns):
        in_hot = self.rng.random(n) < self.spec.hot_access_ratio
        if len(self.cold) == 0:
            in_hot[:] = True
        out = np.empty(n, dtype=np.int64)
        n_hot = int(in_hot.sum())
        if self.spec.zipf_s > 0:
            ranks = np.searchsorted(self.hot_cdf, self.rng.random(n_hot), side="right")
            ranks = np.minimum(ranks, len(self.hot) - 1)
        else:
            ranks = self.rng.integers(0, len(self.hot), size=n_hot)
        out[in_hot] = self.hot[ranks]
        if n - n_hot:
            out[~in_hot] = self.cold[self.rng.integers(0, len(self.cold), size=n - n_hot)]
        return out

    def hot_pages(self, t_ns=0):
        return self.hot

    def access_probabilities(self, t_ns=0):
        probs = np.zeros(self.spec.rss_pages)
        ratio = self.spec.hot_access_ratio if len(self.cold) else 1.0
        probs[self.hot] = ratio * self.hot_weights
        if len(self.cold):
            probs[self.cold] = (1.0 - ratio) / len(self.cold)
        return probs


class Streaming(AccessGenerator):
    def __init__(self, spec, seed, pid):
        super().__init__(spec, seed, pid)
        self.position = 0

    def _pages(self, n, t_ns):
        pages = (self.position + np.arange(n)) % self.spec.rss_pages
        self.position = (self.position + n) % self.spec.rss_pages
        return pages


class Phased(AccessGenerator):
    """All accesses go uniformly to the current phase's region of a shuffled layout."""

    def __init__(self, spec, seed, pid):
        super().__init__(spec, seed, pid)
        self.ends_ns = np.cumsum([int(p.duration_s * NS_PER_SECOND) for p in spec.phase_schedule])

    def phase_at(self, t_ns: int) -> Phase:
        index = int(np.searchsorted(self.ends_ns, t_ns, side="right"))
        return self.spec.phase_schedule[min(index, len(self.spec.phase_schedule) - 1)]

    def region(self, t_ns: int) -> np.ndarray:
        phase = self.phase_at(t_ns)
        rss = self.spec.rss_pages
        lo = int(phase.start_frac * rss)
        hi = max(lo + 1, int(phase.end_frac * rss))
        return self.layout[lo:hi]

    def _pages(self, n, t_ns):
        region = self.region(t_ns)
        return region[self.rng.integers(0, len(region), size=n)]

    def hot_pages(self, t_ns=0):
        return self.region(t_ns)

    def access_probabilities(self, t_ns=0):
        probs = np.zeros(self.spec.rss_pages)
        region = self.region(t_ns)
        probs[region] = 1.0 / len(region)
        return probs


GENERATORS = {
    WorkloadKind.UNIFORM_RANDOM: UniformRandom,
    WorkloadKind.ZIPF_HOTSET: ZipfHotset,
    WorkloadKind.STREAMING: Streaming,
    WorkloadKind.PHASED_MICRO: Phased,
}


def build_generator(spec: WorkloadSpec, seed: int, pid: int) -> AccessGenerator:
    if spec.kind not in GENERATORS:
        raise ValueError(f"❌ No generator for workload kind '{spec.kind.value}'")
    return GENERATORS[spec.kind](spec, seed, pid)


# ----------------------------
# Scenario streams
# ----------------------------
@dataclass(frozen=True)
class TenantArrival:
    t_ns: int
    pid: int
    label: str
    rss_pages: int


@dataclass(frozen=True)
class AccessBatch:
    t_ns: int
    pid: int
    pages: np.ndarray
    writes: np.ndarray


def _ops_between(rate: int, start_ns: int, end_ns: int) -> int:
    return rate * end_ns // NS_PER_SECOND - rate * start_ns // NS_PER_SECOND


def compose_tenants(
    tenants: list[TenantSpec],
    seed: int,
    tick_ns: int,
    generators: dict[int, AccessGenerator] | None = None,
) -> Iterator[TenantArrival | AccessBatch]:
    """Interleave tenant streams tick by tick; pids are 1-based in tenant order.

    Each tenant starts on the first tick at or after its offset. The stream
    is unbounded; the caller stops pulling at the end of the run.
    """
    if not tenants:
        raise ValueError("❌ At least one tenant is required")
    if tick_ns <= 0:
        raise ValueError(f"❌ tick must be positive, got {tick_ns}")
    generators = generators if generators is not None else {}
    starts = {}
    for pid, tenant in enumerate(tenants, start=1):
        generators.setdefault(pid, build_generator(tenant.workload, seed, pid))
        offset_ns = int(round(tenant.start_offset_s * NS_PER_SECOND))
        starts[pid] = -(-offset_ns // tick_ns) * tick_ns

    tick = 0
    while True:
        t = tick * tick_ns
        for pid, tenant in enumerate(tenants, start=1):
            start = starts[pid]
            if t < start:
                continue
            if t == start:
                yield TenantArrival(t, pid, tenant.label or f"tenant-{pid}", tenant.workload.rss_pages)
            rel = t - start
            n = _ops_between(tenant.workload.accesses_per_second, rel, rel + tick_ns)
            if n:
                pages, writes = generators[pid].draw(n, rel)
                yield AccessBatch(t, pid, pages, writes)
        tick += 1


# ----------------------------
# Traces
# ----------------------------
@dataclass(frozen=True)
class TraceAccess:
    t_ns: int
    pid: int
    page: int
    kind: AccessKind


@dataclass
class TraceSummary:
    accesses: int = 0
    first_seen_ns: dict[int, int] = field(default_factory=dict)
    max_page: dict[int, int] = field(default_factory=dict)

    @property
    def processes(self) -> list[int]:
        return sorted(self.first_seen_ns)

    def rss_pages(self, pid: int) -> int:
        return self.max_page[pid] + 1


def replay_trace(path: str | Path) -> Iterator[TraceAccess]:
    last_t = None
    with open(path, "rb") as handle:
        for line_no, raw in enumerate(handle, start=1):
            try:
                line = raw.decode("utf-8").strip()
            except UnicodeDecodeError:
                raise TraceFormatError(line_no, "line is not valid UTF-8")
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise TraceFormatError(line_no, f"expected 4 fields, got {len(parts)}")
            try:
                t_ns, pid, page = (int(p) for p in parts[:3])
            except ValueError:
                raise TraceFormatError(line_no, "time, process and page must be integers")
            if t_ns < 0 or page < 0:
                raise TraceFormatError(line_no, "time and page must be non-negative")
            if parts[3] not in ("r", "w"):
                raise TraceFormatError(line_no, f"access kind must be r or w, got '{parts[3]}'")
            if last_t is not None and t_ns < last_t:
                raise TraceFormatError(line_no, f"timestamp {t_ns} is before {last_t}")
            last_t = t_ns
            yield TraceAccess(t_ns, pid, page, AccessKind(parts[3]))


def scan_trace(path: str | Path) -> TraceSummary:
    summary = TraceSummary()
    for access in replay_trace(path):
        summary.accesses += 1
        summary.first_seen_ns.setdefault(access.pid, access.t_ns)
        summary.max_page[access.pid] = max(summary.max_page.get(access.pid, 0), access.page)
    return summary


def trace_stream(path: str | Path, summary: TraceSummary, tick_ns: int) -> Iterator[TenantArrival | AccessBatch]:
    """Replay a trace as tick-aligned batches; runs of one process stay in file order."""
    started: set[int] = set()
    run: list[TraceAccess] = []

    def flush() -> Iterator[AccessBatch]:
        if run:
            pages = np.array([a.page for a in run], dtype=np.int64)
            writes = np.array([a.kind is AccessKind.WRITE for a in run])
            yield AccessBatch(run[0].t_ns // tick_ns * tick_ns, run[0].pid, pages, writes)
            run.clear()

    for access in replay_trace(path):
        tick_start = access.t_ns // tick_ns * tick_ns
        if run and (run[0].pid != access.pid or run[0].t_ns // tick_ns * tick_ns != tick_start):
            yield from flush()
        if access.pid not in started:
            yield from flush()
            started.add(access.pid)
            yield TenantArrival(tick_start, access.pid, f"trace-{access.pid}", summary.rss_pages(access.pid))
        run.append(access)
    yield from flush()
