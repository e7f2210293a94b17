import json

import numpy as np
import pytest

from reefsim.errors import ParameterError
from reefsim.navigation import (MANUAL_ROLL_45, Mode, NavConfig, NavState,
                                Region, ScenarioEvent, SimScenario, band_sums,
                                detach_decision, load_scenario, nav_step,
                                read_trace, roll_decision, simulate,
                                write_trace)


def heat(h, w, value=0.0):
    return np.full((h, w), value, dtype=np.float64)


# ---------------------------------------------------------------------------
# rolling policy


def test_left_mass_rolls_left():
    grid = heat(6, 9)
    grid[:, :3] = 1.0
    d = roll_decision(grid)
    assert d.region == Region.LEFT and d.roll_angle == -90.0


def test_uniform_heatmap_centers():
    d = roll_decision(heat(6, 9, 0.5))
    assert d.region == Region.CENTER and d.roll_angle == 0.0
    assert not d.low_confidence


def test_all_zero_low_confidence_center():
    d = roll_decision(heat(6, 9, 0.0))
    assert d.region == Region.CENTER and d.low_confidence


def test_negative_values_clamped():
    grid = heat(4, 9, -1.0)
    grid[:, 6:] = 0.2  # only positive band is RIGHT
    assert roll_decision(grid).region == Region.RIGHT


def test_band_widths_513():
    grid = np.zeros((2, 513))
    grid[:, 170] = 1.0   # last column of the left band
    assert roll_decision(grid).region == Region.LEFT
    grid = np.zeros((2, 513))
    grid[:, 341] = 1.0   # last column of the center band
    assert roll_decision(grid).region == Region.CENTER
    grid = np.zeros((2, 513))
    grid[:, 342] = 1.0   # first column of the right band
    assert roll_decision(grid).region == Region.RIGHT


def pixelwise_band_oracle(values):
    """Per-pixel loop; remainder columns belong to the right band."""
    h, w = values.shape
    base = w // 3
    sums = [0.0, 0.0, 0.0]
    for r in range(h):
        for c in range(w):
            v = max(0.0, float(values[r, c]))
            if c < base:
                sums[0] += v
            elif c < 2 * base:
                sums[1] += v
            else:
                sums[2] += v
    return tuple(sums)


@pytest.mark.parametrize("width", [9, 10, 11, 513, 514])
def test_band_sums_match_pixel_oracle(width):
    rng = np.random.default_rng(width)
    values = rng.uniform(-1, 1, (5, width))
    got = band_sums(values)
    expect = pixelwise_band_oracle(values)
    assert got == pytest.approx(expect, abs=1e-9)


def test_scale_invariance():
    rng = np.random.default_rng(0)
    for _ in range(50):
        values = rng.uniform(-1, 1, (6, 12))
        base = roll_decision(values).region
        for scale in (0.013, 7.7, 1234.5):
            assert roll_decision(values * scale).region == base


def test_mirror_symmetry():
    mirror = {Region.LEFT: Region.RIGHT, Region.RIGHT: Region.LEFT,
              Region.CENTER: Region.CENTER}
    rng = np.random.default_rng(1)
    for _ in range(50):
        values = rng.uniform(-1, 1, (4, 12))  # width divisible by 3
        assert roll_decision(values[:, ::-1]).region == mirror[roll_decision(values).region]


def test_band_sums_rejects_bad_shapes():
    with pytest.raises(ParameterError):
        band_sums(np.zeros(5))
    with pytest.raises(ParameterError):
        band_sums(np.zeros((4, 2)))


# ---------------------------------------------------------------------------
# detach / alert


def test_detach_all_zero():
    assert not detach_decision(heat(8, 8, 0.0), 0.8, 0.2)


def test_detach_all_ones():
    assert detach_decision(heat(8, 8, 1.0), 0.8, 0.2)


def test_detach_single_pixel_coverage_fails():
    grid = heat(10, 10, 0.0)
    grid[5, 5] = 1.0
    assert not detach_decision(grid, 0.8, 0.1)   # value passes, coverage 1% < 10%


def test_detach_threshold_validation():
    with pytest.raises(ParameterError):
        detach_decision(heat(2, 3), 0.0, 0.5)
    with pytest.raises(ParameterError):
        detach_decision(heat(2, 3), 0.5, 1.5)


# ---------------------------------------------------------------------------
# state machine


LOW = heat(6, 9, 0.1)
HIGH = heat(6, 9, 0.9)


def test_follow_forever_on_low_heatmaps():
    config = NavConfig()
    state = NavState()
    roll_times = []
    for i in range(300):
        t = i * 0.1
        state, cmd = nav_step(state, LOW, None, t, config)
        assert state.mode == Mode.FOLLOW
        if cmd is not None:
            assert cmd["type"] == "roll"
            roll_times.append(t)
    assert roll_times[0] == 0.0
    gaps = np.diff(roll_times)
    assert all(g >= config.hold_duration - 1e-9 for g in gaps)


def test_no_roll_inside_hold():
    rng = np.random.default_rng(2)
    config = NavConfig(value_threshold=0.99, coverage_threshold=1.0)
    state = NavState()
    last_roll = None
    for i in range(500):
        t = i * rng.uniform(0.05, 0.3)
        grid = rng.uniform(0, 0.5, (4, 6))
        state, cmd = nav_step(state, grid, None, t, config)
        if cmd is not None and cmd["type"] == "roll":
            if last_roll is not None:
                assert t - last_roll >= config.hold_duration - 1e-9
            last_roll = t


def test_full_mission_trace():
    config = NavConfig(value_threshold=0.6, coverage_threshold=0.2)
    state = NavState()
    modes = []

    state, cmd = nav_step(state, LOW, None, 0.0, config)
    assert state.mode == Mode.FOLLOW and cmd["type"] == "roll"
    state, cmd = nav_step(state, HIGH, None, 1.0, config)
    assert state.mode == Mode.DETACHED_SEARCH and cmd["type"] == "detach"
    state, cmd = nav_step(state, LOW, None, 2.0, config)
    assert state.mode == Mode.DETACHED_SEARCH and cmd["type"] == "steer"
    state, cmd = nav_step(state, heat(6, 9, 0.95), None, 3.0, config)
    assert state.mode == Mode.CIRCLE_ALERT and cmd["type"] == "circle"
    state, cmd = nav_step(state, LOW, None, 4.0, config)
    assert state.mode == Mode.CIRCLE_ALERT and cmd["type"] == "circle"
    state, cmd = nav_step(state, LOW, MANUAL_ROLL_45, 5.0, config)
    assert state.mode == Mode.RESUME and cmd["type"] == "resume_search"
    # back in FOLLOW, but the t=0 roll hold (10 s) is still running
    state, cmd = nav_step(state, LOW, None, 6.0, config)
    assert state.mode == Mode.FOLLOW and cmd is None
    state, cmd = nav_step(state, LOW, None, 10.5, config)
    assert state.mode == Mode.FOLLOW and cmd["type"] == "roll"


def test_manual_roll_ignored_in_follow():
    state = NavState()
    state, _ = nav_step(state, LOW, None, 0.0)
    state, cmd = nav_step(state, LOW, MANUAL_ROLL_45, 1.0)
    assert state.mode == Mode.FOLLOW and cmd is None


def test_unknown_signal_ignored(caplog):
    import logging

    state = NavState()
    with caplog.at_level(logging.WARNING, logger="reefsim.navigation"):
        state, _ = nav_step(state, LOW, "blink_twice", 0.0)
    assert state.mode == Mode.FOLLOW
    assert "unknown" in caplog.text


def test_transition_edges_exhaustive():
    """Every (mode, trigger) combination lands in a documented target mode."""
    config = NavConfig()
    allowed = {
        (Mode.FOLLOW, "low"): Mode.FOLLOW,
        (Mode.FOLLOW, "detach"): Mode.DETACHED_SEARCH,
        (Mode.FOLLOW, "signal"): Mode.FOLLOW,
        (Mode.DETACHED_SEARCH, "low"): Mode.DETACHED_SEARCH,
        (Mode.DETACHED_SEARCH, "alert"): Mode.CIRCLE_ALERT,
        (Mode.DETACHED_SEARCH, "signal"): Mode.DETACHED_SEARCH,
        (Mode.CIRCLE_ALERT, "low"): Mode.CIRCLE_ALERT,
        (Mode.CIRCLE_ALERT, "alert"): Mode.CIRCLE_ALERT,
        (Mode.CIRCLE_ALERT, "signal"): Mode.RESUME,
        (Mode.RESUME, "low"): Mode.FOLLOW,
        (Mode.RESUME, "alert"): Mode.DETACHED_SEARCH,  # re-detach from FOLLOW
        (Mode.RESUME, "signal"): Mode.FOLLOW,
    }
    triggers = {
        "low": (LOW, None),
        "detach": (HIGH, None),
        "alert": (heat(6, 9, 0.95), None),
        "signal": (LOW, MANUAL_ROLL_45),
    }
    for (mode, trig), expected in allowed.items():
        state = NavState(mode=mode)
        grid, signal = triggers[trig]
        state, _ = nav_step(state, grid, signal, 0.0, config)
        assert state.mode == expected, f"{mode} x {trig} -> {state.mode}, expected {expected}"


# ---------------------------------------------------------------------------
# simulation


def test_empty_scenario():
    assert simulate(SimScenario([])) == []


def test_simulation_deterministic(tmp_path):
    rng = np.random.default_rng(3)
    events = [ScenarioEvent(float(i), rng.uniform(0, 1, (4, 6))) for i in range(20)]
    scenario = SimScenario(events)
    t1 = simulate(scenario)
    t2 = simulate(scenario)
    p1 = write_trace(t1, tmp_path / "a.jsonl")
    p2 = write_trace(t2, tmp_path / "b.jsonl")
    assert p1.read_bytes() == p2.read_bytes()


def test_scenario_timestamps_must_increase():
    events = [ScenarioEvent(1.0, LOW), ScenarioEvent(1.0, LOW)]
    with pytest.raises(ParameterError):
        SimScenario(events).validate()


def test_scenario_file_round_trip(tmp_path):
    path = tmp_path / "scenario.jsonl"
    records = [
        {"t": 0.0, "grid": [[0.1, 0.1, 0.1]], "signal": "none"},
        {"t": 1.0, "grid": [[0.9, 0.9, 0.9]]},
        {"t": 2.0, "grid": [[0.0, 0.0, 0.0]], "signal": "manual_roll_45"},
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    scenario = load_scenario(path)
    assert len(scenario.events) == 3
    assert scenario.events[1].grid.shape == (1, 3)
    trace = simulate(scenario)
    out = write_trace(trace, tmp_path / "trace.jsonl")
    assert read_trace(out) == trace


# the three hand-authored fixtures, with expected mode/command traces


def scenario_quiet_follow():
    events = [ScenarioEvent(float(i), heat(2, 6, 0.05)) for i in range(25)]
    expected = []
    for i in range(25):
        cmd = None
        if i % 10 == 0:  # decisions at t = 0, 10, 20 under a 10 s hold
            cmd = {"type": "roll", "region": "CENTER", "angle": 0.0,
                   "hold": 10.0, "low_confidence": False}
        expected.append({"t": float(i), "mode": "FOLLOW", "command": cmd})
    return SimScenario(events), expected


def scenario_find_and_alert():
    grids = {0: heat(2, 6, 0.1), 1: heat(2, 6, 0.9), 2: heat(2, 6, 0.2),
             3: heat(2, 6, 0.97)}
    events = [
        ScenarioEvent(0.0, grids[0]),
        ScenarioEvent(1.0, grids[1]),               # detach fires
        ScenarioEvent(2.0, grids[2]),               # searching, steering stub
        ScenarioEvent(3.0, grids[3]),               # alert fires
        ScenarioEvent(4.0, grids[2]),               # circling
        ScenarioEvent(5.0, grids[2], MANUAL_ROLL_45),
        ScenarioEvent(6.0, grids[0]),               # back to follow, hold running
        ScenarioEvent(11.0, grids[0]),              # hold expired, fresh roll
    ]
    expected = [
        {"t": 0.0, "mode": "FOLLOW",
         "command": {"type": "roll", "region": "CENTER", "angle": 0.0,
                     "hold": 10.0, "low_confidence": False}},
        {"t": 1.0, "mode": "DETACHED_SEARCH", "command": {"type": "detach"}},
        {"t": 2.0, "mode": "DETACHED_SEARCH",
         "command": {"type": "steer", "pitch": 0.0, "yaw": 0.0}},
        {"t": 3.0, "mode": "CIRCLE_ALERT", "command": {"type": "circle", "radius": 2.0}},
        {"t": 4.0, "mode": "CIRCLE_ALERT", "command": {"type": "circle", "radius": 2.0}},
        {"t": 5.0, "mode": "RESUME", "command": {"type": "resume_search"}},
        {"t": 6.0, "mode": "FOLLOW", "command": None},
        {"t": 11.0, "mode": "FOLLOW",
         "command": {"type": "roll", "region": "CENTER", "angle": 0.0,
                     "hold": 10.0, "low_confidence": False}},
    ]
    return SimScenario(events), expected


def scenario_rolling_directions():
    left = np.zeros((2, 9))
    left[:, :3] = 0.3
    right = np.zeros((2, 9))
    right[:, 6:] = 0.3
    center = np.full((2, 9), 0.1)
    events = [ScenarioEvent(0.0, left), ScenarioEvent(5.0, left),
              ScenarioEvent(10.0, right), ScenarioEvent(15.0, right),
              ScenarioEvent(20.0, center)]
    expected = [
        {"t": 0.0, "mode": "FOLLOW",
         "command": {"type": "roll", "region": "LEFT", "angle": -90.0,
                     "hold": 10.0, "low_confidence": False}},
        {"t": 5.0, "mode": "FOLLOW", "command": None},
        {"t": 10.0, "mode": "FOLLOW",
         "command": {"type": "roll", "region": "RIGHT", "angle": 90.0,
                     "hold": 10.0, "low_confidence": False}},
        {"t": 15.0, "mode": "FOLLOW", "command": None},
        {"t": 20.0, "mode": "FOLLOW",
         "command": {"type": "roll", "region": "CENTER", "angle": 0.0,
                     "hold": 10.0, "low_confidence": False}},
    ]
    return SimScenario(events), expected


SCENARIO_FIXTURES = [scenario_quiet_follow, scenario_find_and_alert, scenario_rolling_directions]


@pytest.mark.parametrize("fixture", SCENARIO_FIXTURES)
def test_scenario_fixture_traces(fixture, tmp_path):
    scenario, expected = fixture()
    trace = simulate(scenario, NavConfig())
    got = write_trace(trace, tmp_path / "got.jsonl").read_bytes()
    want = write_trace(expected, tmp_path / "want.jsonl").read_bytes()
    assert got == want
