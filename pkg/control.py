"""Per-process migration friendliness tracking.

kevaluated feeds `compute_delta` / `compute_slope` / `evaluate_stop` every
evaluation period while a process migrates; krestartd feeds
`evaluate_restart` with stride-scan counts while it does not. Nothing here
touches memory or the clock, so the state machines can be checked in
isolation.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum


class SlopeState(str, Enum):
    VARYING = "Varying"
    STABILIZING = "Stabilizing"
    STABILIZED = "Stabilized"


class VariationState(str, Enum):
    VARYING = "Varying"
    STABILIZED = "Stabilized"


class StopAction(str, Enum):
    NONE = "none"
    DISABLE = "disable_migration"


class RestartAction(str, Enum):
    NONE = "none"
    RESTART = "restart_migration"


# ----------------------------
# Earlystop (kevaluated)
# ----------------------------
@dataclass
class ToggleState:
    stop_streak: int = 3
    varying_min: int = 2
    migration_on: bool = True
    slope_state: SlopeState = SlopeState.VARYING
    max_slope: int = 0
    stop_threshold: int = 0
    prev_slope: int = 0
    curr_slope: int = 0
    delta_history: deque = field(default_factory=lambda: deque(maxlen=3))
    last_counter: int | None = None
    stabilized_streak: int = 0
    varying_streak: int = 0
    varying_reached: bool = False

    def reset(self) -> None:
        """Forget everything learned; migration goes back on."""
        fresh = ToggleState(stop_streak=self.stop_streak, varying_min=self.varying_min)
        self.__dict__.update(fresh.__dict__)


def compute_delta(state: ToggleState, counter: int) -> int:
    """Change of demote_promoted over one interval; the first sample only primes."""
    if state.last_counter is None:
        state.last_counter = counter
        return 0
    delta = counter - state.last_counter
    state.last_counter = counter
    state.delta_history.append(delta)
    return delta


def compute_slope(state: ToggleState) -> int:
    """Central difference |delta(t) - delta(t-2p)| / 2, or 0 without enough history."""
    history = state.delta_history
    if len(history) < 3:
        return 0
    return abs(history[-1] - history[-3]) // 2


def evaluate_stop(state: ToggleState, slope_curr: int) -> StopAction:
    if state.max_slope < slope_curr:
        state.max_slope = slope_curr
    state.stop_threshold = state.max_slope >> 2
    threshold = state.stop_threshold

    if state.slope_state is SlopeState.VARYING:
        # below-threshold prev: allocation ongoing or movement just started
        if state.prev_slope >= threshold and slope_curr <= threshold:
            state.slope_state = SlopeState.STABILIZING
    elif state.slope_state is SlopeState.STABILIZING:
        if slope_curr > threshold:
            state.slope_state = SlopeState.VARYING
            state.stabilized_streak = 0
        else:
            state.slope_state = SlopeState.STABILIZED
            state.stabilized_streak = 1
    else:
        if slope_curr > threshold:
            state.slope_state = SlopeState.VARYING
            state.stabilized_streak = 0
        else:
            state.stabilized_streak += 1

    if state.slope_state is SlopeState.VARYING and slope_curr > threshold:
        state.varying_streak += 1
    else:
        state.varying_streak = 0
    if state.varying_streak >= state.varying_min:
        state.varying_reached = True

    state.prev_slope = slope_curr
    state.curr_slope = slope_curr

    if (
        state.slope_state is SlopeState.STABILIZED
        and state.stabilized_streak >= state.stop_streak
        and state.varying_reached
    ):
        state.migration_on = False
        return StopAction.DISABLE
    return StopAction.NONE


# ----------------------------
# Restart (krestartd)
# ----------------------------
@dataclass
class RestartState:
    window_capacity: int = 8
    restart_threshold: int = 3
    window: deque | None = None
    variation_state: VariationState = VariationState.VARYING
    count_variation: int = 0
    last_count: int | None = None

    def __post_init__(self):
        if self.window_capacity < 1:
            raise ValueError(f"❌ window_capacity must be >= 1, got {self.window_capacity}")
        if self.window is None:
            self.window = deque(maxlen=self.window_capacity)

    def reset(self) -> None:
        self.window = deque(maxlen=self.window_capacity)
        self.variation_state = VariationState.VARYING
        self.count_variation = 0
        self.last_count = None

    def mean(self) -> int:
        return sum(self.window) // len(self.window) if self.window else 0


def evaluate_restart(state: RestartState, count_accessed: int) -> RestartAction:
    state.last_count = count_accessed
    if not state.window:
        state.window.append(count_accessed)
        return RestartAction.NONE

    mean = state.mean()
    deviation = abs(count_accessed - mean)
    if state.variation_state is VariationState.VARYING:
        if deviation < (mean >> 4):
            state.variation_state = VariationState.STABILIZED
        state.window.append(count_accessed)
    elif deviation > (mean >> 4):
        # mean is held so the next sample is judged against the same level
        state.count_variation += 1
    else:
        state.count_variation = max(0, state.count_variation - 1)
        state.window.append(count_accessed)

    if state.count_variation > state.restart_threshold:
        return RestartAction.RESTART
    return RestartAction.NONE


def restart_migration(toggle: ToggleState, restart: RestartState) -> None:
    toggle.reset()
    restart.reset()
