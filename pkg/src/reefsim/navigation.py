"""Heatmap-driven navigation: three-band rolling, the detach/alert
predicates, and the diver-collaboration state machine.

The policy is a deterministic discrete-time state machine driven by
(timestamp, heatmap, signal) events; time comes from the caller, so tests
and the simulator run on virtual clocks.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ParameterError

log = logging.getLogger(__name__)


class Region(str, Enum):
    LEFT = "LEFT"
    CENTER = "CENTER"
    RIGHT = "RIGHT"


class Mode(str, Enum):
    FOLLOW = "FOLLOW"
    DETACHED_SEARCH = "DETACHED_SEARCH"
    CIRCLE_ALERT = "CIRCLE_ALERT"
    RESUME = "RESUME"


ROLL_ANGLES = {Region.LEFT: -90.0, Region.CENTER: 0.0, Region.RIGHT: 90.0}
# tie preference when band sums are exactly equal
_TIE_ORDER = [Region.CENTER, Region.LEFT, Region.RIGHT]

MANUAL_ROLL_45 = "manual_roll_45"
_KNOWN_SIGNALS = {None, "", "none", MANUAL_ROLL_45}


@dataclass
class RollDecision:
    region: Region
    roll_angle: float
    hold_duration: float = 10.0
    low_confidence: bool = False


@dataclass
class NavConfig:
    value_threshold: float = 0.6
    coverage_threshold: float = 0.2
    alert_factor: float = 1.25
    hold_duration: float = 10.0
    circle_radius: float = 2.0

    def __post_init__(self):
        for name in ("value_threshold", "coverage_threshold"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ParameterError(f"{name} must be in (0, 1], got {v}")


@dataclass
class NavState:
    mode: Mode = Mode.FOLLOW
    hold_until: float | None = None
    circle_started: float | None = None
    last_decision: RollDecision | None = None


def band_sums(values: np.ndarray) -> tuple[float, float, float]:
    """Clamped sums over the three vertical bands.

    Band widths are W//3 each with remainder columns in the RIGHT band;
    negatives clamp to 0 before summation.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] < 3:
        raise ParameterError(f"heatmap must be 2D with width >= 3, got {values.shape}")
    clamped = np.clip(values, 0.0, None)
    base = values.shape[1] // 3
    left = float(clamped[:, :base].sum())
    center = float(clamped[:, base:2 * base].sum())
    right = float(clamped[:, 2 * base:].sum())
    return left, center, right


def roll_decision(h) -> RollDecision:
    """Roll toward the band with the highest cumulative score.

    Exact ties prefer CENTER, then LEFT, then RIGHT; an all-zero heatmap is
    a neutral CENTER flagged low-confidence.
    """
    values = h.values if hasattr(h, "values") else h
    left, center, right = band_sums(values)
    sums = {Region.LEFT: left, Region.CENTER: center, Region.RIGHT: right}
    if left == center == right == 0.0:
        return RollDecision(Region.CENTER, 0.0, low_confidence=True)
    best = max(_TIE_ORDER, key=lambda r: sums[r])  # max keeps the first of equals
    return RollDecision(best, ROLL_ANGLES[best])


def detach_decision(h, value_threshold: float, coverage_threshold: float) -> bool:
    """True when the heatmap is both strong and broad.

    Strong: max value >= value_threshold. Broad: the fraction of pixels at
    or above half the value threshold reaches coverage_threshold.
    """
    for t in (value_threshold, coverage_threshold):
        if not 0 < t <= 1:
            raise ParameterError(f"thresholds must be in (0, 1], got {t}")
    values = np.asarray(h.values if hasattr(h, "values") else h, dtype=np.float64)
    if float(values.max()) < value_threshold:
        return False
    coverage = float((values >= value_threshold * 0.5).mean())
    return coverage >= coverage_threshold


def _alert_decision(values, config: NavConfig) -> bool:
    vt = min(1.0, config.value_threshold * config.alert_factor)
    ct = min(1.0, config.coverage_threshold * config.alert_factor)
    return detach_decision(values, vt, ct)


def nav_step(
    state: NavState,
    h,
    signal: str | None,
    now: float,
    config: NavConfig | None = None,
    steer: dict | None = None,
) -> tuple[NavState, dict | None]:
    """Advance the state machine by one heatmap event.

    Returns the new state and the command for this step (None when holding).
    The clock must be monotone; signals other than manual_roll_45 while in
    CIRCLE_ALERT are ignored.
    """
    config = config or NavConfig()
    if signal not in _KNOWN_SIGNALS:
        log.warning("ignoring unknown diver signal %r at t=%s", signal, now)
        signal = None
    if signal in ("", "none"):
        signal = None

    # the roll hold persists across mode changes: a roll is never emitted
    # within hold_duration of the previous one, whatever happened in between
    if state.mode == Mode.RESUME:
        state.mode = Mode.FOLLOW

    if state.mode == Mode.FOLLOW:
        if signal == MANUAL_ROLL_45:
            log.info("manual_roll_45 ignored outside CIRCLE_ALERT (t=%s)", now)
        if detach_decision(h, config.value_threshold, config.coverage_threshold):
            state.mode = Mode.DETACHED_SEARCH
            return state, {"type": "detach"}
        if state.hold_until is None or now >= state.hold_until:
            decision = roll_decision(h)
            state.last_decision = decision
            state.hold_until = now + config.hold_duration
            return state, {
                "type": "roll",
                "region": decision.region.value,
                "angle": decision.roll_angle,
                "hold": config.hold_duration,
                "low_confidence": decision.low_confidence,
            }
        return state, None

    if state.mode == Mode.DETACHED_SEARCH:
        if _alert_decision(h, config):
            state.mode = Mode.CIRCLE_ALERT
            state.circle_started = now
            return state, {"type": "circle", "radius": config.circle_radius}
        command = {"type": "steer"}
        command.update(steer or {"pitch": 0.0, "yaw": 0.0})
        return state, command

    if state.mode == Mode.CIRCLE_ALERT:
        if signal == MANUAL_ROLL_45:
            state.mode = Mode.RESUME
            state.circle_started = None
            return state, {"type": "resume_search"}
        return state, {"type": "circle", "radius": config.circle_radius}

    raise ParameterError(f"unknown navigation mode: {state.mode}")


# ---------------------------------------------------------------------------
# scenario simulation


@dataclass
class ScenarioEvent:
    t: float
    grid: np.ndarray            # low-res heatmap values
    signal: str | None = None
    steer: dict | None = None


@dataclass
class SimScenario:
    events: list[ScenarioEvent] = field(default_factory=list)

    def validate(self) -> None:
        times = [e.t for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ParameterError("scenario timestamps must be strictly increasing")


def load_scenario(path: str | Path) -> SimScenario:
    """Newline-delimited scenario records: t, inline grid or heatmap path, signal."""
    path = Path(path)
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "grid" in rec:
                grid = np.asarray(rec["grid"], dtype=np.float64)
            elif "heatmap" in rec:
                grid = np.load(path.parent / rec["heatmap"]).astype(np.float64)
            else:
                raise ParameterError(f"scenario record needs 'grid' or 'heatmap': {rec}")
            events.append(ScenarioEvent(float(rec["t"]), grid, rec.get("signal"), rec.get("steer")))
    scenario = SimScenario(events)
    scenario.validate()
    return scenario


def simulate(scenario: SimScenario, config: NavConfig | None = None) -> list[dict]:
    """Run the policy over a scripted event stream; the trace is replayable."""
    scenario.validate()
    config = config or NavConfig()
    state = NavState()
    trace = []
    for event in scenario.events:
        state, command = nav_step(state, event.grid, event.signal, event.t, config, event.steer)
        trace.append({"t": event.t, "mode": state.mode.value, "command": command})
    return trace


def write_trace(trace: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_trace(path: str | Path) -> list[dict]:
    with open(Path(path), encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
