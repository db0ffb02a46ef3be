"""Run results: per-interval CSV series, JSON summary and policy comparison."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, Field

from engine import SimulationError

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "time_s",
    "process",
    "delta",
    "slope",
    "slope_state",
    "toggle",
    "accessed_count",
    "promotions",
    "demotions",
    "demote_promoted",
    "total_cost_ns",
)


class ComparisonError(SimulationError):
    """Runs that do not share workload and seed cannot be compared."""


# ----------------------------
# Series
# ----------------------------
@dataclass(frozen=True)
class IntervalRow:
    time_ns: int
    process: int
    delta: int
    slope: int
    slope_state: str
    toggle: bool
    accessed_count: int
    promotions: int
    demotions: int
    demote_promoted: int
    total_cost_ns: int
    # kept for analysis, not written to the CSV
    stop_threshold: int = 0

    def csv_values(self) -> list[str]:
        return [
            f"{self.time_ns / 1e9:.3f}",
            str(self.process),
            str(self.delta),
            str(self.slope),
            self.slope_state,
            "on" if self.toggle else "off",
            str(self.accessed_count),
            str(self.promotions),
            str(self.demotions),
            str(self.demote_promoted),
            str(self.total_cost_ns),
        ]


class CsvSink:
    """Streams interval rows to a UTF-8 CSV with LF line endings."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._handle, lineterminator="\n")
        self._writer.writerow(CSV_COLUMNS)

    def emit(self, row: IntervalRow) -> None:
        self._writer.writerow(row.csv_values())

    def close(self) -> None:
        self._handle.close()


def write_csv(rows: list[IntervalRow], path: str | Path) -> Path:
    sink = CsvSink(path)
    try:
        for row in rows:
            sink.emit(row)
    finally:
        sink.close()
    return sink.path


@dataclass(frozen=True)
class ToggleEvent:
    time_ns: int
    pid: int
    on: bool
    hot_dram_fraction: float | None = None


# ----------------------------
# Summary models
# ----------------------------
class ToggleEventModel(BaseModel):
    time_s: float
    on: bool
    hot_dram_fraction: float | None = None


class ProcessSummary(BaseModel):
    pid: int
    label: str
    rss_pages: int
    ledger: dict[str, int]
    total_cost_ns: int
    toggle_events: list[ToggleEventModel] = Field(default_factory=list)
    post_stop_ns_per_access: float | None = Field(None, description="Mean access latency after the last stop")
    oracle_ns_per_access: float | None = Field(None, description="Mean access latency with the hot set pinned")


class NodeSummary(BaseModel):
    tier: str
    used_pages: int
    capacity_pages: int
    lru_age: int
    aging_events: dict[str, int] = Field(default_factory=dict, description="lru_age increments by cause")
    pagevec_flushes: int = 0
    refault_promotes: int = 0
    refault_holds: int = 0
    pressure_events: int = Field(0, description="Demotion passes cut short by a full lower tier")


class RunSummary(BaseModel):
    scenario: str
    policy: str
    seed: int
    status: str = Field(..., description="ok or oom")
    message: str = ""
    end_time_s: float
    total_cost_ns: int
    processes: list[ProcessSummary]
    fingerprint: dict[str, Any]
    nodes: list[NodeSummary] = Field(default_factory=list)


class ComparisonRow(BaseModel):
    scenario: str
    policy: str
    total_cost_ns: int
    ratio: float


@dataclass
class RunReport:
    summary: RunSummary
    rows: list[IntervalRow] = field(default_factory=list)
    toggle_events: list[ToggleEvent] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.summary.status == "ok"

    def process(self, pid: int) -> ProcessSummary:
        for proc in self.summary.processes:
            if proc.pid == pid:
                return proc
        raise KeyError(f"No process {pid} in report")

    def rows_for(self, pid: int) -> list[IntervalRow]:
        return [r for r in self.rows if r.process == pid]

    def events_for(self, pid: int) -> list[ToggleEvent]:
        return [e for e in self.toggle_events if e.pid == pid]

    def write(self, csv_path: str | Path, summary_path: str | Path | None = None) -> None:
        write_csv(self.rows, csv_path)
        summary_path = Path(summary_path or f"{csv_path}.summary.json")
        summary_path.parent.mkdir(parents=True, exist_ok=True)
        summary_path.write_text(json.dumps(self.summary.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")


# ----------------------------
# Comparison
# ----------------------------
def compare(reports: list[RunReport], baseline: RunReport) -> list[ComparisonRow]:
    """Total cost per run and its ratio to the baseline; inputs are not modified."""
    mismatched = [r.summary.scenario for r in reports if r.summary.fingerprint != baseline.summary.fingerprint]
    if mismatched:
        raise ComparisonError(
            f"❌ Workload or seed differs from baseline '{baseline.summary.scenario}': {', '.join(mismatched)}"
        )
    base = baseline.summary.total_cost_ns
    if base <= 0:
        raise ComparisonError("❌ Baseline accumulated no cost; nothing to normalize against")
    return [
        ComparisonRow(
            scenario=r.summary.scenario,
            policy=r.summary.policy,
            total_cost_ns=r.summary.total_cost_ns,
            ratio=r.summary.total_cost_ns / base,
        )
        for r in [baseline, *reports]
    ]


def format_table(rows: list[ComparisonRow]) -> str:
    header = f"{'scenario':<24} {'policy':<14} {'total_cost_ns':>16} {'ratio':>7}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(f"{row.scenario:<24} {row.policy:<14} {row.total_cost_ns:>16} {row.ratio:>7.3f}")
    return "\n".join(lines)


def oracle_access_ns(probabilities: np.ndarray, dram_slots: int, dram_ns: float, cxl_ns: float) -> float:
    """Expected latency per access when the most probable pages own the DRAM slots."""
    if len(probabilities) == 0:
        return 0.0
    ranked = np.sort(probabilities)[::-1]
    slots = max(0, min(dram_slots, len(ranked)))
    in_dram = float(ranked[:slots].sum())
    total = float(ranked.sum())
    return in_dram * dram_ns + (total - in_dram) * cxl_ns
