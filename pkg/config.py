"""Scenario configuration: key=value files with dotted keys, validated by pydantic."""
from __future__ import annotations

import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any

from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from engine import SimulationError
from lru import Tier
from memory import DEFAULT_ACCESS_WEIGHT, MigrationCosts, TierState
from workloads import TenantSpec, WorkloadKind, WorkloadSpec, parse_phases, phased_micro_default

logger = logging.getLogger(__name__)

SEED_ENV = "TIERSIM_SEED"


class ConfigError(SimulationError):
    """Invalid scenario; `keys` lists the offending dotted keys."""

    def __init__(self, message: str, keys: list[str] | None = None):
        super().__init__(message)
        self.keys = keys or []


class Policy(str, Enum):
    NO_MIGRATION = "no_migration"
    TPP_BASELINE = "tpp_baseline"
    TPP_MOD = "tpp_mod"
    ADAPTIVE = "adaptive"


# ----------------------------
# Models
# ----------------------------
class TierConfig(BaseModel):
    capacity_pages: int = Field(..., gt=0, description="Tier capacity in 4 KiB pages")
    read_latency_cycles: int = Field(..., gt=0)
    write_latency_cycles: int | None = Field(None, gt=0, description="Defaults to the read latency")
    read_bw_gbps: float = Field(..., gt=0)
    write_bw_gbps: float = Field(..., gt=0)
    high_watermark: float = Field(0.95, gt=0, le=1)
    low_watermark: float = Field(0.90, gt=0, lt=1)
    promo_watermark: float = Field(0.88, gt=0, le=1)

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_watermarks(self):
        if not self.low_watermark < self.high_watermark:
            raise ValueError("low_watermark must be below high_watermark")
        if self.promo_watermark > self.high_watermark:
            raise ValueError("promo_watermark must not exceed high_watermark")
        return self

    def to_state(self, tier: Tier) -> TierState:
        return TierState(
            tier=tier,
            capacity_pages=self.capacity_pages,
            high_watermark=self.high_watermark,
            low_watermark=self.low_watermark,
            promo_watermark=self.promo_watermark,
            read_latency_cycles=self.read_latency_cycles,
            write_latency_cycles=self.write_latency_cycles or self.read_latency_cycles,
            read_bw_gbps=self.read_bw_gbps,
            write_bw_gbps=self.write_bw_gbps,
        )


def _dram_default() -> TierConfig:
    return TierConfig(capacity_pages=16_000, read_latency_cycles=269, read_bw_gbps=256.0, write_bw_gbps=248.3)


def _cxl_default() -> TierConfig:
    return TierConfig(capacity_pages=128_000, read_latency_cycles=615, read_bw_gbps=17.8, write_bw_gbps=15.8)


class TiersConfig(BaseModel):
    dram: TierConfig = Field(default_factory=_dram_default)
    cxl: TierConfig = Field(default_factory=_cxl_default)

    class Config:
        extra = "forbid"

    @field_validator("dram", "cxl", mode="before")
    @classmethod
    def merge_defaults(cls, value, info):
        # partial sections only override the tier's defaults
        if isinstance(value, dict):
            base = (_dram_default() if info.field_name == "dram" else _cxl_default()).model_dump(exclude_none=True)
            return {**base, **value}
        return value


class CostConfig(BaseModel):
    clock_ghz: float = Field(2.6, gt=0)
    fault_handling_ns: int = Field(4500, ge=0)
    migration_alloc_ns: int = Field(1500, ge=0)
    migration_unmap_ns: int = Field(3000, ge=0)
    migration_copy_ns: int = Field(6000, ge=0)
    migration_remap_ns: int = Field(2500, ge=0)
    scan_visit_ns: int = Field(50, ge=0)
    scan_clear_ns: int = Field(1000, ge=0)
    access_weight: int = Field(DEFAULT_ACCESS_WEIGHT, ge=1, description="Real accesses represented by one simulated access")
    page_bytes: int = Field(4096, gt=0)

    class Config:
        extra = "forbid"

    def migration_costs(self) -> MigrationCosts:
        return MigrationCosts(
            alloc_ns=self.migration_alloc_ns,
            unmap_ns=self.migration_unmap_ns,
            copy_ns=self.migration_copy_ns,
            remap_ns=self.migration_remap_ns,
            page_bytes=self.page_bytes,
        )


class HintConfig(BaseModel):
    poison_batch: int = Field(256, ge=1)
    poison_period_ms: int = Field(100, gt=0)
    scan_stride_pages: int = Field(512, ge=1, description="2 MiB stride over 4 KiB pages")
    scan_period_s: float | None = Field(None, gt=0, description="Same period as adaptive.restart_period_s")

    class Config:
        extra = "forbid"


class LruConfig(BaseModel):
    pagevec_size: int = Field(15, ge=1)
    refault_distance: bool | None = Field(None, description="Defaults to on for the adaptive policy only")

    class Config:
        extra = "forbid"


class AdaptiveConfig(BaseModel):
    eval_period_s: float = Field(2.0, gt=0)
    restart_period_s: float = Field(5.0, gt=0)
    stop_streak: int = Field(3, ge=1, description="K: stabilized intervals before stopping")
    varying_min: int = Field(2, ge=1, description="M: varying intervals needed before a stop")
    restart_threshold: int = Field(3, ge=0)
    window_capacity: int = Field(8, ge=1)

    class Config:
        extra = "forbid"


class WorkloadConfig(BaseModel):
    kind: WorkloadKind
    rss_pages: int = Field(..., ge=1)
    hot_fraction: float = Field(0.1, gt=0, le=1)
    hot_access_ratio: float = Field(0.9, ge=0, le=1)
    zipf_s: float = Field(0.0, ge=0)
    phases: str | None = Field(None, description="e.g. 200:0-0.375,200:0-0.75,200:0-0.375")
    phase_s: float = Field(200.0, gt=0, description="Phase length when phases is omitted")
    ops_rate: int = Field(50_000, ge=0)
    threads: int = Field(1, ge=1)
    write_ratio: float = Field(0.2, ge=0, le=1)

    class Config:
        extra = "forbid"
        json_schema_extra = {"example": {"kind": "zipf_hotset", "rss_pages": 24000, "hot_fraction": 0.33}}

    @field_validator("phases")
    @classmethod
    def check_phases(cls, value):
        if value is not None:
            parse_phases(value)
        return value

    @model_validator(mode="after")
    def check_kind(self):
        if self.kind is WorkloadKind.TRACE:
            raise ValueError("trace workloads are configured with the top-level 'trace' key")
        return self

    def to_spec(self) -> WorkloadSpec:
        if self.kind is WorkloadKind.PHASED_MICRO and self.phases is None:
            spec = phased_micro_default(self.rss_pages, self.phase_s, self.ops_rate)
            spec.threads, spec.write_ratio = self.threads, self.write_ratio
            return spec
        return WorkloadSpec(
            kind=self.kind,
            rss_pages=self.rss_pages,
            hot_fraction=self.hot_fraction,
            hot_access_ratio=self.hot_access_ratio,
            zipf_s=self.zipf_s,
            phase_schedule=parse_phases(self.phases) if self.phases else [],
            ops_rate=self.ops_rate,
            threads=self.threads,
            write_ratio=self.write_ratio,
        )


class TenantConfig(BaseModel):
    workload: WorkloadConfig
    start_offset_s: float = Field(0.0, ge=0)
    label: str = ""

    class Config:
        extra = "forbid"

    def to_spec(self) -> TenantSpec:
        return TenantSpec(workload=self.workload.to_spec(), start_offset_s=self.start_offset_s, label=self.label)


class OutputConfig(BaseModel):
    csv: str = "results/run.csv"
    summary: str | None = Field(None, description="Defaults to <csv>.summary.json")

    class Config:
        extra = "forbid"

    @property
    def summary_path(self) -> str:
        return self.summary or f"{self.csv}.summary.json"


class ScenarioConfig(BaseModel):
    name: str = "scenario"
    policy: Policy = Policy.ADAPTIVE
    seed: int = 1
    duration_s: float = Field(..., gt=0)
    access_tick_ms: int = Field(20, gt=0)
    tiers: TiersConfig = Field(default_factory=TiersConfig)
    costs: CostConfig = Field(default_factory=CostConfig)
    hint: HintConfig = Field(default_factory=HintConfig)
    lru: LruConfig = Field(default_factory=LruConfig)
    adaptive: AdaptiveConfig = Field(default_factory=AdaptiveConfig)
    tenants: list[TenantConfig] = Field(default_factory=list)
    trace: str | None = None
    output: OutputConfig = Field(default_factory=OutputConfig)

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def check_sources(self):
        if bool(self.tenants) == bool(self.trace):
            raise ValueError("exactly one of 'tenants' or 'trace' must be given")
        scan = self.hint.scan_period_s
        if scan is not None and "restart_period_s" in self.adaptive.model_fields_set:
            if scan != self.adaptive.restart_period_s:
                raise ValueError("hint.scan_period_s and adaptive.restart_period_s disagree")
        if scan is not None:
            self.adaptive.restart_period_s = scan
        return self

    @property
    def refault_enabled(self) -> bool:
        if self.lru.refault_distance is not None:
            return self.lru.refault_distance
        return self.policy is Policy.ADAPTIVE

    def workload_fingerprint(self) -> dict[str, Any]:
        """What must match for two runs to be comparable."""
        return {
            "tenants": [t.model_dump(mode="json") for t in self.tenants],
            "trace": self.trace,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "access_tick_ms": self.access_tick_ms,
        }


# ----------------------------
# Loading
# ----------------------------
def parse_overrides(pairs: list[str] | tuple[str, ...]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"❌ Override '{pair}' is not of the form key=value", [pair])
        overrides[key.strip()] = value.strip()
    return overrides


def nest(flat: dict[str, Any]) -> dict[str, Any]:
    """Turn dotted keys into nested dicts; all-numeric segments become list positions."""
    root: dict[str, Any] = {}
    for key, value in flat.items():
        node = root
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"❌ Key '{key}' conflicts with a scalar value", [key])
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"❌ Key '{key}' conflicts with a section", [key])
        node[parts[-1]] = value
    return _listify(root, "")


def _listify(node: Any, prefix: str) -> Any:
    if not isinstance(node, dict):
        return node
    if node and all(k.isdigit() for k in node):
        indices = sorted(int(k) for k in node)
        if indices != list(range(len(indices))):
            raise ConfigError(f"❌ List '{prefix}' must use indices 0..{len(indices) - 1}", [prefix])
        return [_listify(node[str(i)], f"{prefix}.{i}") for i in indices]
    return {k: _listify(v, f"{prefix}.{k}" if prefix else k) for k, v in node.items()}


def build_scenario(flat: dict[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(nest(flat))
    except ValidationError as e:
        keys = [".".join(str(p) for p in err["loc"]) or "<root>" for err in e.errors()]
        details = "; ".join(
            f"{k}: {err['msg']}" for k, err in zip(keys, e.errors())
        )
        raise ConfigError(f"❌ Invalid scenario: {details}", keys) from e


def load_scenario(path: str | Path, overrides: dict[str, str] | None = None) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"❌ Scenario file not found: {path}", [])
    values = dotenv_values(path, interpolate=False)
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"❌ Keys without a value: {', '.join(missing)}", missing)
    flat: dict[str, Any] = dict(values)
    flat.update(overrides or {})

    if "seed" not in flat and os.getenv(SEED_ENV):
        flat["seed"] = os.getenv(SEED_ENV)
        try:
            int(flat["seed"])
        except ValueError:
            raise ConfigError(f"❌ {SEED_ENV} must be an integer, got '{flat['seed']}'", ["seed"])

    trace = flat.get("trace")
    if trace and not Path(trace).is_absolute():
        flat["trace"] = str(path.parent / trace)

    config = build_scenario(flat)
    logger.debug("Loaded scenario '%s' from %s", config.name, path)
    return config
