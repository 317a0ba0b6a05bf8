"""Latency synthesis and level classification.

Timed probes draw a Gaussian around the base latency of the level they find
the line at; the read itself is non-allocating (streaming-load semantics),
so measuring never disturbs cache contents. A cold guest timer occasionally
returns a huge spike instead; warming the timer with dummy reads suppresses
spikes until a logical-time horizon expires. Default bases are >= 10 jitter
sigmas apart, so misclassification under the default noise is negligible.
"""

import statistics
from dataclasses import dataclass
from random import Random
from typing import NamedTuple, Sequence

from .cache import L2, LLC, MEMORY, AccessResult, CacheState
from .clock import LogicalClock
from .errors import CalibrationError


@dataclass
class LatencyModel:
    l2: float = 14.0
    llc: float = 50.0
    memory: float = 200.0
    jitter: float = 3.0
    spike_prob_cold: float = 0.1
    spike_magnitude: float = 2000.0

    def base(self, level: int) -> float:
        return (self.l2, self.llc, self.memory)[level]

    def sample(self, level: int, rng: Random, warm: bool) -> float:
        if not warm and self.spike_prob_cold > 0.0 \
                and rng.random() < self.spike_prob_cold:
            return self.spike_magnitude
        return rng.gauss(self.base(level), self.jitter)


@dataclass
class TimerState:
    """Guest timer warm-up tracking, tied to the logical clock."""
    warm_reads: int = 8           # dummy reads needed to warm
    horizon_us: float = 100_000.0  # warm persists this long
    warm_until_us: float = -1.0

    def is_warm(self, now_us: float) -> bool:
        return now_us <= self.warm_until_us


def warm_timer(timer: TimerState, clock: LogicalClock,
               read_cost_ns: int = 170) -> None:
    """Issue the dummy reads; the timer stays warm until the horizon."""
    clock.advance_ns(timer.warm_reads * read_cost_ns)
    timer.warm_until_us = clock.now_us + timer.horizon_us


def measure_probe(state: CacheState, actor: int, hpa: int,
                  model: LatencyModel, timer: TimerState,
                  clock: LogicalClock, rng: Random) -> AccessResult:
    """Timed non-allocating read: classify the line at whatever level the
    actor currently finds it, without fills, spills, or recency updates.
    Probing with plain loads would re-insert every measured line and
    corrupt the very occupancy being observed."""
    level = state.peek_level(actor, hpa)
    res = AccessResult(level)
    res.latency = model.sample(level, rng, timer.is_warm(clock.now_us))
    return res


class Thresholds(NamedTuple):
    l2_llc: float
    llc_memory: float


def classify_level(latency: float, thresholds: Thresholds) -> int:
    """Closed-open intervals; a latency on a boundary joins the higher
    (slower) class."""
    if latency < thresholds.l2_llc:
        return L2
    if latency < thresholds.llc_memory:
        return LLC
    return MEMORY


def default_thresholds(model: LatencyModel) -> Thresholds:
    return Thresholds((model.l2 + model.llc) / 2.0,
                      (model.llc + model.memory) / 2.0)


def calibrate_thresholds(state: CacheState, actor: int, model: LatencyModel,
                         timer: TimerState, clock: LogicalClock, rng: Random,
                         scratch_hpas: Sequence[int],
                         samples_per_level: int = 100) -> Thresholds:
    """Measure known-level accesses and put thresholds at midpoints of the
    per-level means. Raises CalibrationError when the sampled distributions
    overlap (means closer than twice the summed spreads)."""
    if samples_per_level < 100:
        raise CalibrationError("need at least 100 samples per level")
    need = state.geometry.l2_ways + 1
    if len(scratch_hpas) < need:
        raise CalibrationError(f"need {need} scratch lines")
    probe = scratch_hpas[0]
    fillers = scratch_hpas[1:need]
    warm_timer(timer, clock)
    samples = {L2: [], LLC: [], MEMORY: []}
    l2_mask = state.geometry.l2_sets - 1
    conflicting = [h for h in fillers
                   if (h >> 6) & l2_mask == (probe >> 6) & l2_mask]
    for _ in range(samples_per_level):
        # L2: back-to-back touch then measure
        state.access_level(actor, probe)
        samples[L2].append(
            measure_probe(state, actor, probe, model, timer, clock, rng).latency)
        # LLC: push the probe out of L2 with same-set fillers, keep LLC copy
        dom = state.actor_domain(actor)
        state.llc_install(dom, probe, actor)
        for h in conflicting:
            state.access_level(actor, h)
        if state.peek_level(actor, probe) != LLC:
            continue
        samples[LLC].append(
            measure_probe(state, actor, probe, model, timer, clock, rng).latency)
        # memory: flush everywhere first
        state.flush_line(probe)
        samples[MEMORY].append(
            measure_probe(state, actor, probe, model, timer, clock, rng).latency)
    means = {}
    spreads = {}
    for level, vals in samples.items():
        if len(vals) < samples_per_level // 2:
            raise CalibrationError("could not stage enough known-level samples")
        means[level] = statistics.fmean(vals)
        spreads[level] = statistics.pstdev(vals)
    for lo, hi in ((L2, LLC), (LLC, MEMORY)):
        gap = means[hi] - means[lo]
        if gap <= 2.0 * (spreads[lo] + spreads[hi]):
            raise CalibrationError(
                f"insufficient separation between levels {lo} and {hi}")
    return Thresholds((means[L2] + means[LLC]) / 2.0,
                      (means[LLC] + means[MEMORY]) / 2.0)
