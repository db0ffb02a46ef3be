"""One simulation run: tenants or a trace driven through the tiered memory under a policy."""
from __future__ import annotations

import logging

import numpy as np

from config import Policy, ScenarioConfig
from control import (
    RestartAction,
    RestartState,
    StopAction,
    ToggleState,
    compute_delta,
    compute_slope,
    evaluate_restart,
    evaluate_stop,
    restart_migration,
)
from engine import NS_PER_MS, NS_PER_SECOND, EventLoop, MetricsSink, OutOfMemoryError, SimEvent
from lru import Tier
from memory import ProcessCtx, TieredMemory
from profiler import HintProfiler, LruMode, PoisonScheduler
from report import (
    IntervalRow,
    NodeSummary,
    ProcessSummary,
    RunReport,
    RunSummary,
    ToggleEvent,
    ToggleEventModel,
    oracle_access_ns,
)
from workloads import AccessBatch, AccessGenerator, TenantArrival, compose_tenants, scan_trace, trace_stream

logger = logging.getLogger(__name__)


class Simulation:
    def __init__(self, config: ScenarioConfig, sink: MetricsSink | None = None):
        self.config = config
        self.policy = config.policy
        self.migrating = config.policy is not Policy.NO_MIGRATION
        self.adaptive = config.policy is Policy.ADAPTIVE
        self.sink = sink
        self.loop = EventLoop()

        costs = config.costs
        self.memory = TieredMemory(
            config.tiers.dram.to_state(Tier.DRAM),
            config.tiers.cxl.to_state(Tier.CXL),
            costs=costs.migration_costs(),
            clock_ghz=costs.clock_ghz,
            access_weight=costs.access_weight,
            pagevec_size=config.lru.pagevec_size,
        )
        self.profiler = HintProfiler(
            self.memory,
            PoisonScheduler(config.hint.poison_batch, config.hint.poison_period_ms * NS_PER_MS),
            lru_mode=LruMode.BASELINE if config.policy is Policy.TPP_BASELINE else LruMode.MODIFIED,
            refault=config.refault_enabled,
            fault_ns=costs.fault_handling_ns,
            scan_visit_ns=costs.scan_visit_ns,
            scan_clear_ns=costs.scan_clear_ns,
        )
        if self.migrating:
            self.memory.fault_handler = self.profiler.on_hint_fault
            self.memory.demand_demotion = self._request_demotion

        self.tick_ns = config.access_tick_ms * NS_PER_MS
        self.end_ns = int(round(config.duration_s * NS_PER_SECOND))
        self.eval_ns = int(round(config.adaptive.eval_period_s * NS_PER_SECOND))
        self.restart_ns = int(round(config.adaptive.restart_period_s * NS_PER_SECOND))

        self.generators: dict[int, AccessGenerator] = {}
        if config.tenants:
            tenants = [t.to_spec() for t in config.tenants]
            self._stream = compose_tenants(tenants, config.seed, self.tick_ns, self.generators)
        else:
            self._stream = trace_stream(config.trace, scan_trace(config.trace), self.tick_ns)
        self._pending = None
        self._exhausted = False

        self.rows: list[IntervalRow] = []
        self.toggle_events: list[ToggleEvent] = []
        self.start_ns: dict[int, int] = {}
        self._daemon_pending = False
        self._reported: dict[int, int] = {}
        self._stop_marks: dict[int, tuple[int, int]] = {}
        self._monitor_epoch: dict[int, int] = {}

    @property
    def processes(self) -> list[ProcessCtx]:
        return [self.memory.processes[pid] for pid in sorted(self.memory.processes)]

    # ----------------------------
    # Periodic events
    # ----------------------------
    def _peek(self):
        if self._pending is None and not self._exhausted:
            self._pending = next(self._stream, None)
            self._exhausted = self._pending is None
        return self._pending

    def _access_tick(self, now: int):
        if now >= self.end_ns:
            return False
        while True:
            item = self._peek()
            if item is None:
                return False
            if item.t_ns > now:
                return True
            self._pending = None
            if isinstance(item, TenantArrival):
                self._start_tenant(item, now)
            elif isinstance(item, AccessBatch):
                self.memory.access_batch(self.memory.processes[item.pid], item.pages, item.writes)

    def _poison_tick(self, now: int):
        for ctx in self.processes:
            self.profiler.poison_tick(ctx)

    def _evaluate(self, now: int):
        """kevaluated: per-process delta and slope, earlystop, one CSV row each."""
        for ctx in self.processes:
            counter = ctx.ledger.demote_promoted
            if ctx.migration_on:
                delta = compute_delta(ctx.toggle, counter)
                slope = compute_slope(ctx.toggle)
                if self.adaptive and evaluate_stop(ctx.toggle, slope) is StopAction.DISABLE:
                    self._stop(ctx, now)
            else:
                delta = counter - self._reported.get(ctx.pid, 0)
                slope = 0
            self._reported[ctx.pid] = counter
            self._emit(
                IntervalRow(
                    time_ns=now,
                    process=ctx.pid,
                    delta=delta,
                    slope=slope,
                    slope_state=ctx.toggle.slope_state.value,
                    toggle=ctx.migration_on,
                    accessed_count=ctx.restart.last_count or 0,
                    promotions=ctx.ledger.promotions,
                    demotions=ctx.ledger.demotions,
                    demote_promoted=counter,
                    total_cost_ns=ctx.ledger.total(),
                    stop_threshold=ctx.toggle.stop_threshold,
                )
            )
        self.memory.check_conservation()
        for ctx in self.processes:
            ctx.ledger.check()

    def _restart_scan(self, ctx: ProcessCtx, now: int, epoch: int):
        """krestartd for one stopped process."""
        if epoch != self._monitor_epoch.get(ctx.pid) or ctx.migration_on or now > self.end_ns:
            return False
        result = self.profiler.stride_scan(ctx, self.config.hint.scan_stride_pages)
        if evaluate_restart(ctx.restart, result.accessed_count) is RestartAction.RESTART:
            restart_migration(ctx.toggle, ctx.restart)
            ctx.ledger.bump("restarts")
            self._stop_marks.pop(ctx.pid, None)
            self._record_toggle(ctx, now, on=True)
            logger.info("🔁 t=%.1fs pid %s migration restarted", now / NS_PER_SECOND, ctx.pid)
            return False
        return True

    def _request_demotion(self) -> None:
        if self._daemon_pending:
            return
        self._daemon_pending = True
        self.loop.schedule(SimEvent("kswapd", self._run_daemon), self.loop.now)

    def _run_daemon(self, now: int) -> None:
        self._daemon_pending = False
        self.memory.demote_daemon()

    # ----------------------------
    # Process lifecycle
    # ----------------------------
    def _start_tenant(self, arrival: TenantArrival, now: int) -> None:
        adaptive = self.config.adaptive
        ctx = self.memory.register(
            ProcessCtx(
                pid=arrival.pid,
                label=arrival.label,
                toggle=ToggleState(stop_streak=adaptive.stop_streak, varying_min=adaptive.varying_min),
                restart=RestartState(
                    window_capacity=adaptive.window_capacity, restart_threshold=adaptive.restart_threshold
                ),
            )
        )
        self.start_ns[ctx.pid] = now
        self._record_toggle(ctx, now, on=True)
        logger.info("t=%.1fs pid %s (%s) starts with %s pages", now / NS_PER_SECOND, ctx.pid, ctx.label, arrival.rss_pages)
        self.memory.allocate(ctx, arrival.rss_pages)

    def _stop(self, ctx: ProcessCtx, now: int) -> None:
        ctx.toggle.migration_on = False
        ctx.ledger.bump("stops")
        ctx.restart.reset()
        # priming scan: the first krestartd sample covers one full period
        self.profiler.stride_scan(ctx, self.config.hint.scan_stride_pages)
        self._stop_marks[ctx.pid] = (ctx.ledger.access_ns, ctx.ledger.accesses)
        self._record_toggle(ctx, now, on=False)
        epoch = self._monitor_epoch.get(ctx.pid, 0) + 1
        self._monitor_epoch[ctx.pid] = epoch
        self.loop.every(
            f"krestartd-{ctx.pid}",
            self.restart_ns,
            lambda t, ctx=ctx, epoch=epoch: self._restart_scan(ctx, t, epoch),
            start=now + self.restart_ns,
        )
        logger.info("⏹ t=%.1fs pid %s migration stopped", now / NS_PER_SECOND, ctx.pid)

    def _record_toggle(self, ctx: ProcessCtx, now: int, on: bool) -> None:
        self.toggle_events.append(ToggleEvent(now, ctx.pid, on, self.hot_dram_fraction(ctx, now)))

    def hot_dram_fraction(self, ctx: ProcessCtx, now: int) -> float | None:
        generator = self.generators.get(ctx.pid)
        if generator is None or ctx.rss_pages == 0:
            return None
        hot = generator.hot_pages(now - self.start_ns.get(ctx.pid, 0))
        if len(hot) == 0:
            return None
        return self.memory.dram_fraction(ctx, hot)

    def _emit(self, row: IntervalRow) -> None:
        self.rows.append(row)
        if self.sink is not None:
            self.sink.emit(row)

    # ----------------------------
    # Run
    # ----------------------------
    def run(self) -> RunReport:
        logger.info("▶ %s: policy=%s seed=%s duration=%ss", self.config.name, self.policy.value, self.config.seed, self.config.duration_s)
        self.loop.every("access", self.tick_ns, self._access_tick, start=0)
        if self.migrating:
            period = self.profiler.scheduler.tick_period_ns
            self.loop.every("poison", period, self._poison_tick, start=period)
        self.loop.every("kevaluated", self.eval_ns, self._evaluate, start=self.eval_ns)

        status, message = "ok", ""
        try:
            self.loop.run_until(self.end_ns)
        except OutOfMemoryError as e:
            status, message = "oom", str(e)
            logger.error("%s", e)
        for ctx in self.processes:
            ctx.ledger.check()
        report = self._build_report(status, message)
        logger.info("✅ %s finished: total cost %s ns", self.config.name, report.summary.total_cost_ns)
        return report

    def _latency_ns(self, tier: Tier, write_ratio: float) -> float:
        return (1 - write_ratio) * float(self.memory.read_ns[tier]) + write_ratio * float(self.memory.write_ns[tier])

    def _oracle_ns(self, ctx: ProcessCtx) -> float | None:
        generator = self.generators.get(ctx.pid)
        if generator is None or ctx.rss_pages == 0:
            return None
        probs = generator.access_probabilities(self.loop.now - self.start_ns.get(ctx.pid, 0))
        dram_slots = int(np.count_nonzero(self.memory.tier[ctx.pfns] == int(Tier.DRAM)))
        w = generator.spec.write_ratio
        return oracle_access_ns(probs, dram_slots, self._latency_ns(Tier.DRAM, w), self._latency_ns(Tier.CXL, w))

    def _node_summaries(self) -> list[NodeSummary]:
        nodes = []
        for tier, state in self.memory.tiers.items():
            lru = self.memory.lru[tier]
            nodes.append(
                NodeSummary(
                    tier=tier.name,
                    used_pages=state.used_pages,
                    capacity_pages=state.capacity_pages,
                    lru_age=lru.lru_age,
                    aging_events={case.name.lower(): n for case, n in sorted(lru.aging_events.items())},
                    pagevec_flushes=lru.pagevec_flushes,
                    refault_promotes=lru.refault_promotes,
                    refault_holds=lru.refault_holds,
                    pressure_events=self.memory.pressure_events if tier is Tier.DRAM else 0,
                )
            )
        return nodes

    def _build_report(self, status: str, message: str) -> RunReport:
        weight = self.memory.access_weight
        processes = []
        for ctx in self.processes:
            post_stop = None
            mark = self._stop_marks.get(ctx.pid)
            if mark and ctx.ledger.accesses > mark[1]:
                post_stop = (ctx.ledger.access_ns - mark[0]) / (ctx.ledger.accesses - mark[1]) / weight
            processes.append(
                ProcessSummary(
                    pid=ctx.pid,
                    label=ctx.label,
                    rss_pages=ctx.rss_pages,
                    ledger=ctx.ledger.as_dict(),
                    total_cost_ns=ctx.ledger.total(),
                    toggle_events=[
                        ToggleEventModel(time_s=e.time_ns / NS_PER_SECOND, on=e.on, hot_dram_fraction=e.hot_dram_fraction)
                        for e in self.toggle_events
                        if e.pid == ctx.pid
                    ],
                    post_stop_ns_per_access=post_stop,
                    oracle_ns_per_access=self._oracle_ns(ctx),
                )
            )
        summary = RunSummary(
            scenario=self.config.name,
            policy=self.policy.value,
            seed=self.config.seed,
            status=status,
            message=message,
            end_time_s=self.loop.now / NS_PER_SECOND,
            total_cost_ns=sum(p.total_cost_ns for p in processes),
            processes=processes,
            fingerprint=self.config.workload_fingerprint(),
            nodes=self._node_summaries(),
        )
        return RunReport(summary=summary, rows=self.rows, toggle_events=self.toggle_events)


def run(config: ScenarioConfig, sink: MetricsSink | None = None) -> RunReport:
    return Simulation(config, sink).run()
