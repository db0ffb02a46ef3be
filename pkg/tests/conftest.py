import pytest

from config import build_scenario
from control import RestartState, ToggleState
from lru import Tier
from memory import ProcessCtx, TierState, TieredMemory


def make_memory(dram_pages=1000, cxl_pages=4000, **kwargs) -> TieredMemory:
    kwargs.setdefault("access_weight", 1)
    return TieredMemory(
        TierState(Tier.DRAM, dram_pages),
        TierState(Tier.CXL, cxl_pages, read_latency_cycles=615, write_latency_cycles=615, read_bw_gbps=17.8, write_bw_gbps=15.8),
        **kwargs,
    )


def make_process(memory: TieredMemory, pid=1, pages=0, **toggle) -> ProcessCtx:
    ctx = memory.register(ProcessCtx(pid=pid, label=f"p{pid}", toggle=ToggleState(**toggle), restart=RestartState()))
    if pages:
        memory.allocate(ctx, pages)
    return ctx


SMALL_SCENARIO = {
    "name": "small",
    "policy": "adaptive",
    "seed": "7",
    "duration_s": "20",
    "tiers.dram.capacity_pages": "400",
    "tiers.cxl.capacity_pages": "4000",
    "hint.scan_stride_pages": "8",
    "tenants.0.label": "hot",
    "tenants.0.workload.kind": "zipf_hotset",
    "tenants.0.workload.rss_pages": "1000",
    "tenants.0.workload.hot_fraction": "0.2",
    "tenants.0.workload.ops_rate": "5000",
}


def small_scenario(**overrides):
    flat = dict(SMALL_SCENARIO)
    flat.update({k.replace("__", "."): str(v) for k, v in overrides.items()})
    return build_scenario(flat)


@pytest.fixture
def memory():
    return make_memory()


@pytest.fixture
def scenario_file(tmp_path):
    def write(text: str, name="scenario.conf"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
