"""Hint-fault profiling: PTE poisoning, fault dispatch and the krestartd stride scan."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from engine import NS_PER_MS, CostCategory
from lru import ACCESSED, POISONED, Tier, Verdict, clear_mask
from memory import MigrationMode, ProcessCtx, TieredMemory

logger = logging.getLogger(__name__)


class LruMode(str, Enum):
    BASELINE = "baseline"
    MODIFIED = "modified"


class HintAction(str, Enum):
    PROMOTE_SYNC = "promote_sync"
    MARK = "mark"
    SKIP = "skip"


@dataclass
class ScanResult:
    accessed_count: int
    sampled: int

    def __post_init__(self):
        if not 0 <= self.accessed_count <= self.sampled:
            raise ValueError(f"❌ accessed_count {self.accessed_count} outside [0, {self.sampled}]")


@dataclass
class PoisonScheduler:
    poison_batch: int = 256
    tick_period_ns: int = 100 * NS_PER_MS
    scan_cursor: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.poison_batch < 1 or self.tick_period_ns <= 0:
            raise ValueError("❌ poison_batch and tick period must be positive")

    @staticmethod
    def enabled_per_process(processes: Iterable[ProcessCtx]) -> dict[int, bool]:
        return {ctx.pid: ctx.migration_on for ctx in processes}

    def next_batch(self, ctx: ProcessCtx) -> np.ndarray:
        """Page indices for the next round-robin batch of this process."""
        rss = ctx.rss_pages
        if rss == 0:
            return np.empty(0, dtype=np.int64)
        n = min(self.poison_batch, rss)
        cursor = self.scan_cursor.get(ctx.pid, 0)
        indices = (cursor + np.arange(n, dtype=np.int64)) % rss
        self.scan_cursor[ctx.pid] = (cursor + n) % rss
        return indices


class HintProfiler:
    def __init__(
        self,
        memory: TieredMemory,
        scheduler: PoisonScheduler | None = None,
        lru_mode: LruMode = LruMode.MODIFIED,
        refault: bool = False,
        fault_ns: int = 4500,
        scan_visit_ns: int = 50,
        scan_clear_ns: int = 1000,
    ):
        self.memory = memory
        self.scheduler = scheduler or PoisonScheduler()
        self.lru_mode = LruMode(lru_mode)
        self.refault = refault
        self.fault_ns = fault_ns
        self.scan_visit_ns = scan_visit_ns
        self.scan_clear_ns = scan_clear_ns

    def poison_tick(self, ctx: ProcessCtx) -> int:
        if not ctx.migration_on:
            return 0
        indices = self.scheduler.next_batch(ctx)
        self.memory.flags[ctx.pfns[indices]] |= POISONED
        return len(indices)

    def on_hint_fault(self, ctx: ProcessCtx, pfn: int) -> HintAction:
        memory = self.memory
        memory.flags[pfn] &= clear_mask(POISONED)
        ctx.ledger.charge(CostCategory.FAULT_HANDLING, self.fault_ns)
        ctx.ledger.bump("hint_faults")
        if not ctx.migration_on:
            return HintAction.SKIP
        if memory.tier[pfn] == int(Tier.DRAM):
            return HintAction.SKIP

        verdict = memory.lru[Tier.CXL].on_hint_fault(
            pfn, modified=self.lru_mode is LruMode.MODIFIED, refault=self.refault
        )
        if verdict is Verdict.MARK:
            return HintAction.MARK
        ctx.ledger.bump("promotion_candidates")
        if verdict is Verdict.HOLD:
            return HintAction.MARK
        if memory.migrate_page(pfn, Tier.DRAM, MigrationMode.SYNC):
            return HintAction.PROMOTE_SYNC
        return HintAction.SKIP

    def stride_scan(self, ctx: ProcessCtx, stride_pages: int) -> ScanResult:
        if stride_pages < 1:
            raise ValueError(f"❌ stride_pages must be >= 1, got {stride_pages}")
        sampled = ctx.pfns[::stride_pages]
        accessed = sampled[(self.memory.flags[sampled] & ACCESSED) != 0]
        self.memory.flags[accessed] &= clear_mask(ACCESSED)
        ctx.ledger.charge(
            CostCategory.SCAN, self.scan_visit_ns * len(sampled) + self.scan_clear_ns * len(accessed)
        )
        logger.debug("pid %s stride scan: %s/%s accessed", ctx.pid, len(accessed), len(sampled))
        return ScanResult(accessed_count=len(accessed), sampled=len(sampled))
