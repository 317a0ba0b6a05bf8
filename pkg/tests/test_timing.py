"""Latency model, timer warm-up, classification, calibration."""

from random import Random

import pytest

from vcachesim.cache import L2, LLC, MEMORY, CacheGeometry
from vcachesim.clock import LogicalClock
from vcachesim.errors import CalibrationError
from vcachesim.timing import (LatencyModel, Thresholds, TimerState,
                              calibrate_thresholds, classify_level,
                              default_thresholds, measure_probe, warm_timer)

from conftest import TINY, fresh_state, make_ctx, quiet_model


def test_warm_sample_without_jitter_is_exact():
    model = quiet_model()
    rng = Random(0)
    assert model.sample(L2, rng, warm=True) == 14.0
    assert model.sample(LLC, rng, warm=True) == 50.0
    assert model.sample(MEMORY, rng, warm=True) == 200.0


def test_cold_sample_spikes_at_probability_one():
    model = LatencyModel(jitter=0.0, spike_prob_cold=1.0)
    rng = Random(0)
    assert model.sample(L2, rng, warm=False) == model.spike_magnitude
    assert model.sample(L2, rng, warm=True) == 14.0


def test_timer_starts_cold_and_expires():
    timer = TimerState(horizon_us=50.0)
    clock = LogicalClock()
    assert not timer.is_warm(clock.now_us)
    warm_timer(timer, clock)
    assert clock.now_ns == timer.warm_reads * 170
    assert timer.is_warm(clock.now_us)
    clock.advance_ns(int(50.0 * 1000) + 1)
    assert not timer.is_warm(clock.now_us)
    # re-warming pushes the horizon out again
    warm_timer(timer, clock)
    assert timer.is_warm(clock.now_us)


def test_classification_boundaries_are_closed_open():
    th = Thresholds(32.0, 125.0)
    assert classify_level(31.999, th) == L2
    assert classify_level(32.0, th) == LLC
    assert classify_level(124.999, th) == LLC
    assert classify_level(125.0, th) == MEMORY
    assert classify_level(5000.0, th) == MEMORY


def test_default_thresholds_sit_at_midpoints():
    th = default_thresholds(LatencyModel())
    assert th == Thresholds(32.0, 125.0)


def test_default_noise_never_misclassifies_warm_reads():
    model = LatencyModel()
    th = default_thresholds(model)
    rng = Random(42)
    bad = sum(classify_level(model.sample(lvl, rng, warm=True), th) != lvl
              for lvl in (L2, LLC, MEMORY) for _ in range(10_000))
    assert bad == 0  # level gaps are >= 6 jitter sigmas wide


def test_measure_probe_does_not_disturb_state():
    state = fresh_state(TINY)
    model = quiet_model()
    timer, clock, rng = TimerState(), LogicalClock(), Random(1)
    lines = [(0 << 6) | (k * (TINY.l2_sets << 6)) for k in range(4)]
    for hpa in lines:
        state.access_level(0, hpa)
    before = dict(state.l2[0][0])
    res = measure_probe(state, 0, lines[0], model, timer, clock, rng)
    assert res.hit_level == L2
    assert state.l2[0][0] == before            # no recency update either
    assert state.accesses == 4                 # probes are not accesses
    # oldest line is still the victim: the probe refreshed nothing
    state.access_level(0, (0 << 6) | (4 * (TINY.l2_sets << 6)))
    assert lines[0] >> 6 not in state.l2[0][0]


def test_measure_probe_classifies_each_level():
    state = fresh_state(TINY)
    model = quiet_model()
    timer, clock, rng = TimerState(), LogicalClock(), Random(1)
    warm_timer(timer, clock)
    hpa = 0x5040
    assert measure_probe(state, 0, hpa, model, timer, clock, rng).latency == 200.0
    state.llc_install(0, hpa, 0)
    assert measure_probe(state, 0, hpa, model, timer, clock, rng).latency == 50.0
    state.access_level(0, hpa)
    assert measure_probe(state, 0, hpa, model, timer, clock, rng).latency == 14.0


def test_calibration_recovers_exact_midpoints():
    ctx = make_ctx(calibrate=True)
    assert ctx.thresholds == Thresholds(32.0, 125.0)


def test_calibration_argument_validation():
    state = fresh_state(TINY)
    model = quiet_model()
    args = (state, 0, model, TimerState(), LogicalClock(), Random(0))
    scratch = [k * (TINY.l2_sets << 6) for k in range(TINY.l2_ways + 1)]
    with pytest.raises(CalibrationError, match="100 samples"):
        calibrate_thresholds(*args, scratch, samples_per_level=10)
    with pytest.raises(CalibrationError, match="scratch"):
        calibrate_thresholds(*args, scratch[:3])


def test_calibration_rejects_overlapping_distributions():
    state = fresh_state(TINY)
    model = LatencyModel(jitter=12.0, spike_prob_cold=0.0)
    scratch = [k * (TINY.l2_sets << 6) for k in range(TINY.l2_ways + 1)]
    with pytest.raises(CalibrationError, match="separation"):
        calibrate_thresholds(state, 0, model, TimerState(), LogicalClock(),
                             Random(3), scratch)


def test_context_warm_suppresses_cold_spikes():
    ctx = make_ctx(quiet=False)  # default model: 10% cold spikes
    page = ctx.alloc_pages(1)[0] << 12
    ctx.touch(page)
    spikes = 0
    for _ in range(200):
        if ctx.measure_latency(page) >= 1000:
            spikes += 1
    assert spikes > 0           # cold timer does spike
    ctx.warm()
    clean = [ctx.measure_latency(page) for _ in range(200)]
    assert all(lat < 1000 for lat in clean)
