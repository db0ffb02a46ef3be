"""Per-node active/inactive LRU lists, pagevec batching, CXL node aging and refault distances."""
from __future__ import annotations

import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass
from enum import Enum, IntEnum, IntFlag

import numpy as np

logger = logging.getLogger(__name__)


# ----------------------------
# Page state shared with memory.py
# ----------------------------
class Tier(IntEnum):
    DRAM = 0
    CXL = 1


class PageFlags(IntFlag):
    PROMOTED = 1
    HINTED = 2
    POISONED = 4
    ACCESSED = 8
    DIRTY = 16
    REFERENCED = 32


# plain ints for numpy uint8 arithmetic
PROMOTED = int(PageFlags.PROMOTED)
HINTED = int(PageFlags.HINTED)
POISONED = int(PageFlags.POISONED)
ACCESSED = int(PageFlags.ACCESSED)
DIRTY = int(PageFlags.DIRTY)
REFERENCED = int(PageFlags.REFERENCED)


def clear_mask(*bits: int) -> int:
    mask = 0
    for bit in bits:
        mask |= bit
    return 0xFF ^ mask


class AgingCase(IntEnum):
    ARRIVAL = 1
    HINTED = 2
    PROMOTION = 3


class RefaultDecision(str, Enum):
    PROMOTE = "promote"
    HOLD = "hold"


class Verdict(str, Enum):
    """Outcome of a hint fault as seen by the LRU."""

    PROMOTE = "promote"
    HOLD = "hold"
    MARK = "mark"


@dataclass
class RefaultEntry:
    recorded_age: int
    first_distance: int | None = None
    second_distance: int | None = None


# ----------------------------
# Lists
# ----------------------------
class LruList:
    """Ordered set of PFNs; the OrderedDict end is the list head."""

    def __init__(self, name: str):
        self.name = name
        self._pages: OrderedDict[int, None] = OrderedDict()

    def __len__(self) -> int:
        return len(self._pages)

    def __contains__(self, pfn: int) -> bool:
        return pfn in self._pages

    def __iter__(self):
        """Head to tail."""
        return reversed(self._pages)

    def push_head(self, pfn: int) -> None:
        self._pages[pfn] = None
        self._pages.move_to_end(pfn)

    def tail(self) -> int | None:
        return next(iter(self._pages)) if self._pages else None

    def pop_tail(self) -> int:
        return self._pages.popitem(last=False)[0]

    def remove(self, pfn: int) -> bool:
        if pfn in self._pages:
            del self._pages[pfn]
            return True
        return False


class LruNodeState:
    def __init__(self, tier: Tier, flags: np.ndarray, pagevec_size: int = 15, shrink_batch: int = 32):
        if pagevec_size < 1:
            raise ValueError(f"❌ pagevec_size must be >= 1, got {pagevec_size}")
        self.tier = tier
        self.flags = flags
        self.pagevec_size = pagevec_size
        self.shrink_batch = shrink_batch
        name = tier.name.lower()
        self.active = LruList(f"{name}.active")
        self.inactive = LruList(f"{name}.inactive")
        self.pagevec: list[int] = []
        self.lru_age = 0
        self.refault_map: dict[int, RefaultEntry] = {}
        self.aging_events: Counter[AgingCase] = Counter()
        self.pagevec_flushes = 0
        self.refault_promotes = 0
        self.refault_holds = 0

    def __len__(self) -> int:
        return len(self.active) + len(self.inactive) + len(self.pagevec)

    def where(self, pfn: int) -> str | None:
        if pfn in self.active:
            return self.active.name
        if pfn in self.inactive:
            return self.inactive.name
        if pfn in self.pagevec:
            return f"{self.tier.name.lower()}.pagevec"
        return None

    def add_inactive(self, pfn: int) -> None:
        self.inactive.push_head(pfn)

    def add_active(self, pfn: int) -> None:
        self.active.push_head(pfn)

    def remove(self, pfn: int) -> bool:
        if self.active.remove(pfn) or self.inactive.remove(pfn):
            return True
        if pfn in self.pagevec:
            self.pagevec.remove(pfn)
            return True
        return False

    def age(self, case: AgingCase) -> None:
        self.lru_age += 1
        self.aging_events[case] += 1

    # ----------------------------
    # CXL side: arrival, marking, refault, promotion
    # ----------------------------
    def on_cxl_arrival(self, pfn: int) -> None:
        self.remove(pfn)
        self.flags[pfn] &= clear_mask(HINTED)
        self.inactive.push_head(pfn)
        self._record_arrival(pfn)

    def _record_arrival(self, pfn: int) -> None:
        self.age(AgingCase.ARRIVAL)
        self.refault_map[pfn] = RefaultEntry(recorded_age=self.lru_age)

    def mark_accessed_baseline(self, pfn: int) -> bool:
        """Buffer the page; returns True when this mark flushed the pagevec."""
        if pfn in self.pagevec or pfn in self.active:
            return False
        self.inactive.remove(pfn)
        self.pagevec.append(pfn)
        if len(self.pagevec) >= self.pagevec_size:
            self.flush_pagevec()
            return True
        return False

    def flush_pagevec(self) -> None:
        for pfn in self.pagevec:
            self.active.push_head(pfn)
            self.age(AgingCase.HINTED)
        self.pagevec.clear()
        self.pagevec_flushes += 1

    def mark_accessed_modified(self, pfn: int) -> None:
        self.flags[pfn] |= HINTED
        self.age(AgingCase.HINTED)

    def update_refault_distance(self, pfn: int) -> RefaultDecision:
        entry = self.refault_map.get(pfn)
        if entry is None:
            self._record_arrival(pfn)
            return RefaultDecision.HOLD

        distance = self.lru_age - entry.recorded_age
        if entry.first_distance is None:
            entry.first_distance = distance
            entry.recorded_age = self.lru_age
            return RefaultDecision.HOLD

        entry.second_distance = distance
        if distance < entry.first_distance:
            return RefaultDecision.PROMOTE

        # slide the pair: the second distance becomes the reference
        entry.first_distance = distance
        entry.second_distance = None
        entry.recorded_age = self.lru_age
        return RefaultDecision.HOLD

    def on_promotion(self, pfn: int) -> None:
        self.remove(pfn)
        self.refault_map.pop(pfn, None)
        self.age(AgingCase.PROMOTION)

    def is_promotion_candidate(self, pfn: int, modified: bool) -> bool:
        if pfn in self.active:
            return True
        return modified and bool(self.flags[pfn] & HINTED)

    def on_hint_fault(self, pfn: int, modified: bool, refault: bool) -> Verdict:
        """Classify a hint fault on a resident page of this node."""
        if self.is_promotion_candidate(pfn, modified):
            if refault:
                # only candidate faults count as refault decisions
                if self.update_refault_distance(pfn) is RefaultDecision.HOLD:
                    self.refault_holds += 1
                    self.mark_accessed_modified(pfn)
                    return Verdict.HOLD
                self.refault_promotes += 1
            return Verdict.PROMOTE

        if modified:
            if refault:
                self.update_refault_distance(pfn)
            self.mark_accessed_modified(pfn)
        else:
            self.mark_accessed_baseline(pfn)
        return Verdict.MARK

    # ----------------------------
    # DRAM side: reclaim order
    # ----------------------------
    def shrink_active(self) -> int:
        """Move unreferenced pages from the active tail to the inactive head."""
        moved = 0
        for _ in range(min(self.shrink_batch, len(self.active))):
            pfn = self.active.pop_tail()
            if self.flags[pfn] & REFERENCED:
                self.flags[pfn] &= clear_mask(REFERENCED)
                self.active.push_head(pfn)
            else:
                self.flags[pfn] &= clear_mask(HINTED)
                self.inactive.push_head(pfn)
                moved += 1
        return moved

    def select_victim(self) -> int | None:
        """Inactive tail with a second chance for referenced pages."""
        while True:
            if not self.inactive:
                if not self.active:
                    return None
                self.shrink_active()
                continue
            pfn = self.inactive.tail()
            if self.flags[pfn] & REFERENCED:
                self.flags[pfn] &= clear_mask(REFERENCED)
                self.inactive.remove(pfn)
                self.active.push_head(pfn)
                continue
            return pfn
