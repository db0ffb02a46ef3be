"""Two-tier memory: placement, watermark demotion, four-step migration and access pricing."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from control import RestartState, ToggleState
from engine import CostCategory, CostLedger, InvariantViolation, OutOfMemoryError, cycles_to_ns
from lru import (
    ACCESSED,
    DIRTY,
    HINTED,
    POISONED,
    PROMOTED,
    REFERENCED,
    LruNodeState,
    PageFlags,
    Tier,
    clear_mask,
)

logger = logging.getLogger(__name__)

# simulated accesses are priced as this many real ones
DEFAULT_ACCESS_WEIGHT = 50


class MigrationMode(str, Enum):
    SYNC = "sync"
    DEMOTE = "demote"


class AccessKind(str, Enum):
    READ = "r"
    WRITE = "w"


# ----------------------------
# Models
# ----------------------------
@dataclass
class TierState:
    tier: Tier
    capacity_pages: int
    high_watermark: float = 0.95
    low_watermark: float = 0.90
    promo_watermark: float = 0.88
    read_latency_cycles: int = 269
    write_latency_cycles: int = 269
    read_bw_gbps: float = 256.0
    write_bw_gbps: float = 248.3
    used_pages: int = 0

    def __post_init__(self):
        if self.capacity_pages <= 0:
            raise ValueError(f"❌ {self.tier.name} capacity must be positive, got {self.capacity_pages}")
        if not 0 < self.low_watermark < self.high_watermark <= 1:
            raise ValueError(f"❌ {self.tier.name} watermarks need 0 < low < high <= 1")
        if self.promo_watermark > self.high_watermark:
            raise ValueError(f"❌ {self.tier.name} promo watermark must not exceed the high watermark")

    def mark(self, fraction: float) -> int:
        """Page count for a watermark fraction."""
        return int(math.floor(fraction * self.capacity_pages + 1e-9))

    @property
    def free_pages(self) -> int:
        return self.capacity_pages - self.used_pages


@dataclass
class MigrationCosts:
    alloc_ns: int = 1500
    unmap_ns: int = 3000
    copy_ns: int = 6000
    remap_ns: int = 2500
    page_bytes: int = 4096


@dataclass(frozen=True)
class Page:
    """Read-only snapshot of one page frame."""

    pfn: int
    owner: int
    tier: Tier
    flags: PageFlags
    lru_position: str | None


@dataclass
class ProcessCtx:
    pid: int
    label: str
    ledger: CostLedger = field(default_factory=CostLedger)
    pfns: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    toggle: ToggleState = field(default_factory=ToggleState)
    restart: RestartState = field(default_factory=RestartState)

    @property
    def rss_pages(self) -> int:
        return len(self.pfns)

    @property
    def migration_on(self) -> bool:
        return self.toggle.migration_on


# ----------------------------
# Tiered memory
# ----------------------------
class TieredMemory:
    def __init__(
        self,
        dram: TierState,
        cxl: TierState,
        costs: MigrationCosts | None = None,
        clock_ghz: float = 2.6,
        access_weight: int = DEFAULT_ACCESS_WEIGHT,
        pagevec_size: int = 15,
    ):
        self.tiers = {Tier.DRAM: dram, Tier.CXL: cxl}
        self.costs = costs or MigrationCosts()
        self.access_weight = access_weight
        total = dram.capacity_pages + cxl.capacity_pages
        self.tier = np.full(total, -1, dtype=np.int8)
        self.owner = np.full(total, -1, dtype=np.int32)
        self.flags = np.zeros(total, dtype=np.uint8)
        self.next_pfn = 0
        self.lru = {t: LruNodeState(t, self.flags, pagevec_size=pagevec_size) for t in Tier}
        self.processes: dict[int, ProcessCtx] = {}
        # indexed by tier value
        self.read_ns = np.array([cycles_to_ns(self.tiers[t].read_latency_cycles, clock_ghz) for t in Tier])
        self.write_ns = np.array([cycles_to_ns(self.tiers[t].write_latency_cycles, clock_ghz) for t in Tier])
        self.fault_handler: Callable[[ProcessCtx, int], object] | None = None
        self.demand_demotion: Callable[[], None] | None = None
        self.pressure_events = 0

    # ----------------------------
    # Helpers
    # ----------------------------
    def register(self, ctx: ProcessCtx) -> ProcessCtx:
        if ctx.pid in self.processes:
            raise ValueError(f"❌ Process {ctx.pid} is already registered")
        self.processes[ctx.pid] = ctx
        return ctx

    def page(self, pfn: int) -> Page:
        if not 0 <= pfn < self.next_pfn:
            raise KeyError(f"Page frame {pfn} was never allocated")
        tier = Tier(int(self.tier[pfn]))
        return Page(
            pfn=pfn,
            owner=int(self.owner[pfn]),
            tier=tier,
            flags=PageFlags(int(self.flags[pfn])),
            lru_position=self.lru[tier].where(pfn),
        )

    def migration_steps_ns(self, src: Tier, dst: Tier) -> dict[CostCategory, int]:
        bandwidth = min(self.tiers[src].read_bw_gbps, self.tiers[dst].write_bw_gbps)
        # 1 GB/s moves one byte per ns
        copy_ns = max(self.costs.copy_ns, int(math.ceil(self.costs.page_bytes / bandwidth)))
        return {
            CostCategory.MIGRATION_ALLOC: self.costs.alloc_ns,
            CostCategory.MIGRATION_UNMAP: self.costs.unmap_ns,
            CostCategory.MIGRATION_COPY: copy_ns,
            CostCategory.MIGRATION_REMAP: self.costs.remap_ns,
        }

    def _maybe_demand_demotion(self) -> None:
        dram = self.tiers[Tier.DRAM]
        if dram.used_pages > dram.mark(dram.promo_watermark) and self.demand_demotion is not None:
            self.demand_demotion()

    # ----------------------------
    # Operations
    # ----------------------------
    def allocate(self, ctx: ProcessCtx, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError(f"❌ Allocation size must be >= 1, got {n}")
        dram, cxl = self.tiers[Tier.DRAM], self.tiers[Tier.CXL]
        to_dram = min(n, max(0, dram.mark(dram.high_watermark) - dram.used_pages))
        to_cxl = min(n - to_dram, cxl.free_pages)
        # CXL exhausted: dip into DRAM headroom above the high watermark
        spill = min(n - to_dram - to_cxl, dram.free_pages - to_dram)
        if to_dram + to_cxl + spill < n:
            raise OutOfMemoryError(
                f"❌ Out of memory allocating {n} pages for process {ctx.pid}: "
                f"DRAM {dram.used_pages}/{dram.capacity_pages}, CXL {cxl.used_pages}/{cxl.capacity_pages}"
            )
        to_dram += spill

        pfns = np.arange(self.next_pfn, self.next_pfn + n, dtype=np.int64)
        self.next_pfn += n
        self.owner[pfns] = ctx.pid
        self.flags[pfns] = 0
        self.tier[pfns[:to_dram]] = int(Tier.DRAM)
        self.tier[pfns[to_dram:]] = int(Tier.CXL)
        dram.used_pages += to_dram
        cxl.used_pages += n - to_dram
        for pfn in pfns[:to_dram].tolist():
            self.lru[Tier.DRAM].add_inactive(pfn)
        for pfn in pfns[to_dram:].tolist():
            self.lru[Tier.CXL].on_cxl_arrival(pfn)
        ctx.pfns = np.concatenate([ctx.pfns, pfns])
        logger.debug("pid %s allocated %s pages (%s DRAM, %s CXL)", ctx.pid, n, to_dram, n - to_dram)
        self._maybe_demand_demotion()
        return pfns

    def demote_daemon(self) -> int:
        """kswapd analogue: demote inactive DRAM tail pages down to the low watermark."""
        dram, cxl = self.tiers[Tier.DRAM], self.tiers[Tier.CXL]
        if dram.used_pages <= dram.mark(dram.promo_watermark):
            return 0
        target = dram.mark(dram.low_watermark)
        demoted = 0
        while dram.used_pages > target:
            if cxl.free_pages <= 0:
                self.pressure_events += 1
                logger.warning("⚠️ CXL tier full, demotion stopped with DRAM at %s pages", dram.used_pages)
                break
            pfn = self.lru[Tier.DRAM].select_victim()
            if pfn is None:
                break
            self.migrate_page(pfn, Tier.CXL, MigrationMode.DEMOTE)
            demoted += 1
        if demoted:
            logger.debug("demote_daemon moved %s pages, DRAM now %s", demoted, dram.used_pages)
        return demoted

    def migrate_page(self, pfn: int, dst: Tier, mode: MigrationMode) -> bool:
        pfn = int(pfn)
        src = Tier(int(self.tier[pfn]))
        if src == dst:
            raise ValueError(f"❌ Page {pfn} already resides in {dst.name}")
        if (mode is MigrationMode.SYNC) != (dst is Tier.DRAM):
            raise ValueError(f"❌ {mode.value} migration cannot target {dst.name}")
        owner = self.processes[int(self.owner[pfn])]
        dst_state = self.tiers[dst]
        if dst_state.free_pages <= 0:
            owner.ledger.bump("failed_migrations")
            logger.warning("⚠️ %s full, migration of page %s skipped", dst.name, pfn)
            return False

        steps = self.migration_steps_ns(src, dst)
        self.tiers[src].used_pages -= 1
        dst_state.used_pages += 1
        self.tier[pfn] = int(dst)
        self.flags[pfn] &= clear_mask(POISONED, ACCESSED, HINTED)

        if mode is MigrationMode.SYNC:
            for category, ns in steps.items():
                owner.ledger.charge(category, ns)
            owner.ledger.bump("promotions")
            self.flags[pfn] |= PROMOTED
            self.lru[Tier.CXL].on_promotion(pfn)
            self.lru[Tier.DRAM].add_active(pfn)
            self._maybe_demand_demotion()
        else:
            owner.ledger.charge(CostCategory.DEMOTION, sum(steps.values()))
            owner.ledger.bump("demotions")
            if self.flags[pfn] & PROMOTED:
                owner.ledger.bump("demote_promoted")
                self.flags[pfn] &= clear_mask(PROMOTED)
            self.lru[Tier.DRAM].remove(pfn)
            self.lru[Tier.CXL].on_cxl_arrival(pfn)
        return True

    def access(self, ctx: ProcessCtx, page_index: int, kind: AccessKind = AccessKind.READ) -> int:
        """One access; returns the latency charged in ns."""
        kind = AccessKind(kind)
        return self.access_batch(
            ctx, np.array([page_index], dtype=np.int64), np.array([kind is AccessKind.WRITE])
        )

    def access_batch(self, ctx: ProcessCtx, pages: np.ndarray, writes: np.ndarray) -> int:
        if len(pages) == 0:
            return 0
        if pages.min() < 0 or pages.max() >= ctx.rss_pages:
            raise ValueError(f"❌ Process {ctx.pid} accessed a page outside its {ctx.rss_pages} allocated pages")
        pfns = ctx.pfns[pages]

        poisoned = np.flatnonzero(self.flags[pfns] & POISONED)
        if len(poisoned) and self.fault_handler is not None:
            # faults are taken in first-touch order within the batch
            faulting, first = np.unique(pfns[poisoned], return_index=True)
            for pfn in faulting[np.argsort(first, kind="stable")].tolist():
                self.fault_handler(ctx, pfn)

        self.flags[pfns] |= ACCESSED | REFERENCED
        if writes.any():
            self.flags[pfns[writes]] |= DIRTY

        tiers = self.tier[pfns].astype(np.intp)
        latency = np.where(writes, self.write_ns[tiers], self.read_ns[tiers])
        ns = int(latency.sum()) * self.access_weight
        ctx.ledger.charge(CostCategory.ACCESS, ns)
        ctx.ledger.bump("accesses", len(pages))
        return ns

    # ----------------------------
    # Observability and invariants
    # ----------------------------
    def dram_fraction(self, ctx: ProcessCtx, page_indices: np.ndarray) -> float:
        if len(page_indices) == 0:
            return 0.0
        return float(np.mean(self.tier[ctx.pfns[page_indices]] == int(Tier.DRAM)))

    def check_conservation(self) -> None:
        allocated = sum(ctx.rss_pages for ctx in self.processes.values())
        used = sum(state.used_pages for state in self.tiers.values())
        if used != allocated or allocated != self.next_pfn:
            raise InvariantViolation(f"❌ {used} pages resident but {allocated} allocated")
        for tier, state in self.tiers.items():
            resident = int(np.count_nonzero(self.tier[: self.next_pfn] == int(tier)))
            if resident != state.used_pages or len(self.lru[tier]) != resident:
                raise InvariantViolation(
                    f"❌ {tier.name}: used={state.used_pages}, resident={resident}, on lists={len(self.lru[tier])}"
                )
            if state.used_pages > state.capacity_pages:
                raise InvariantViolation(f"❌ {tier.name} over capacity")
