"""Logical clock and co-tenant workload generators."""

from random import Random

import pytest

from vcachesim.cache import L2, LLC, MEMORY
from vcachesim.clock import LogicalClock, ms_to_ns
from vcachesim.errors import InferenceAmbiguous, ValidationError
from vcachesim.tenants import (TenantWorkload, VTopology, effective_domains,
                               infer_topology, shared_pull,
                               synth_latency_matrix, step)

from conftest import TINY, fresh_state


# ---- clock ------------------------------------------------------------------

def test_clock_advances_and_converts():
    clock = LogicalClock()
    clock.advance_ns(1500)
    assert clock.now_ns == 1500
    assert clock.now_us == 1.5
    clock.advance_ms(2.0)
    assert clock.now_ms == pytest.approx(2.0015)
    with pytest.raises(ValueError):
        clock.advance_ns(-1)
    assert ms_to_ns(0.5) == 500_000


def test_clock_seq_is_monotonic():
    clock = LogicalClock()
    seqs = [clock.next_seq() for _ in range(5)]
    assert seqs == sorted(seqs) and len(set(seqs)) == 5


# ---- workload validation and address streams -----------------------------------

def test_workload_validation():
    with pytest.raises(ValidationError):
        TenantWorkload(kind="miner", actor=0, rate_per_ms=1)
    with pytest.raises(ValidationError):
        TenantWorkload(kind="polluter", actor=0, rate_per_ms=0)
    with pytest.raises(ValidationError):
        TenantWorkload(kind="poisoner", actor=0, rate_per_ms=1)
    # idle needs no rate
    TenantWorkload(kind="idle", actor=0, rate_per_ms=0)


def test_period_from_rate():
    wl = TenantWorkload(kind="polluter", actor=0, rate_per_ms=1000)
    assert wl.period_ns() == 1000
    slow = TenantWorkload(kind="polluter", actor=0, rate_per_ms=0.5)
    assert slow.period_ns() == 2_000_000
    fast = TenantWorkload(kind="polluter", actor=0, rate_per_ms=1e9)
    assert fast.period_ns() == 1


def test_polluter_walks_distinct_lines_then_wraps():
    wl = TenantWorkload(kind="polluter", actor=0, rate_per_ms=1,
                        region_base_page=10, region_pages=2)
    addrs = [wl.next_hpa() for _ in range(130)]
    assert len(set(addrs[:128])) == 128          # 2 pages * 64 lines
    assert addrs[128] == addrs[0] == 10 << 12
    assert all((a >> 12) in (10, 11) for a in addrs)


def test_poisoner_stays_inside_its_color_zones():
    wl = TenantWorkload(kind="poisoner", actor=0, rate_per_ms=1,
                        region_pages=64, colors=(3,))
    addrs = [wl.next_hpa() for _ in range(300)]
    assert all(((a >> 12) & 0xF) == 3 for a in addrs)
    # walks every matching page at one offset before moving to the next
    assert [a >> 12 for a in addrs[:4]] == [3, 19, 35, 51]
    assert addrs[4] == (3 << 12) | (1 << 6)


def test_poisoner_rebind_zone():
    wl = TenantWorkload(kind="poisoner", actor=0, rate_per_ms=1,
                        region_pages=64, colors=(3,))
    wl.next_hpa()
    wl.colors = (7,)
    wl.rebind_zone()
    assert ((wl.next_hpa() >> 12) & 0xF) == 7
    wl.colors = ()
    wl.rebind_zone()
    with pytest.raises(ValidationError):
        wl.next_hpa()


def test_reuse_loop_revisits_fixed_working_set():
    wl = TenantWorkload(kind="reuse-loop", actor=0, rate_per_ms=1,
                        region_base_page=4, region_pages=1)
    first = [wl.next_hpa() for _ in range(64)]
    second = [wl.next_hpa() for _ in range(64)]
    assert first == second and len(set(first)) == 64


# ---- stepping the timeline -------------------------------------------------------

def test_step_injects_rate_times_duration():
    state = fresh_state(TINY)
    clock = LogicalClock()
    wl = TenantWorkload(kind="polluter", actor=0, rate_per_ms=100,
                        region_pages=1024)
    n = step(state, clock, [wl], ms_to_ns(10))
    assert n == 1000
    assert clock.now_ns == ms_to_ns(10)
    # a second step resumes the schedule without double-counting
    assert step(state, clock, [wl], ms_to_ns(20)) == 1000


def test_step_respects_start_and_stop():
    state = fresh_state(TINY)
    clock = LogicalClock()
    wl = TenantWorkload(kind="polluter", actor=0, rate_per_ms=1000,
                        region_pages=1024, start_ms=2.0, stop_ms=4.0)
    assert step(state, clock, [wl], ms_to_ns(10)) == 2000


def test_step_skips_paused_pausable_only():
    state = fresh_state(TINY, n_cores=2, core_domain=[0, 0])
    clock = LogicalClock()
    inside = TenantWorkload(kind="polluter", actor=0, rate_per_ms=10,
                            region_pages=64, pausable=True)
    outside = TenantWorkload(kind="polluter", actor=1, rate_per_ms=10,
                             region_pages=64)
    trace = []
    n = step(state, clock, [inside, outside], ms_to_ns(1),
             paused={0, 1}, trace=trace)
    assert n == 10                       # only the co-tenant ran
    assert {actor for _, actor, _ in trace} == {1}
    assert all(t < ms_to_ns(1) for t, _, _ in trace)


def test_step_counts_whole_pages_for_file_scans():
    state = fresh_state(TINY)
    clock = LogicalClock()
    wl = TenantWorkload(kind="file-scan", actor=0, rate_per_ms=2,
                        region_pages=8)
    n = step(state, clock, [wl], ms_to_ns(1))
    assert n == 2 * 64                   # every scan event touches a page


def test_step_rejects_time_travel():
    state = fresh_state(TINY)
    clock = LogicalClock(start_ns=100)
    with pytest.raises(ValidationError):
        step(state, clock, [], 50)


def test_idle_workload_never_runs():
    state = fresh_state(TINY)
    clock = LogicalClock()
    wl = TenantWorkload(kind="idle", actor=0, rate_per_ms=0)
    assert step(state, clock, [wl], ms_to_ns(5)) == 0
    assert state.accesses == 0


# ---- shared pulls -----------------------------------------------------------------

def test_shared_pull_same_domain_installs_llc():
    state = fresh_state(TINY, n_cores=2, core_domain=[0, 0])
    hpa = 0x7040
    assert shared_pull(state, hpa, helper=1, owner=0)
    assert state.peek_level(0, hpa) == LLC


def test_shared_pull_cross_domain_refuses():
    state = fresh_state(TINY, n_cores=2, core_domain=[0, 1])
    hpa = 0x7040
    assert not shared_pull(state, hpa, helper=1, owner=0)
    assert state.occupancy(LLC) == 0


# ---- topology inference -------------------------------------------------------------

def test_topology_grouping():
    topo = VTopology(vcpu_domain=[0, 1, 0, 1])
    assert topo.n_vcpus == 4 and topo.n_domains == 2
    assert topo.domains() == [[0, 2], [1, 3]]


def test_synth_matrix_shape():
    topo = VTopology(vcpu_domain=[0, 0, 1], jitter=0.0)
    m = synth_latency_matrix(topo, Random(0))
    assert m[0][0] == 0.0 and m[0][1] == m[1][0] == 40.0
    assert m[0][2] == 120.0


def test_infer_topology_clean_split():
    topo = VTopology(vcpu_domain=[0, 0, 1, 1], jitter=0.0)
    m = synth_latency_matrix(topo, Random(0))
    assert infer_topology(m) == [[0, 1], [2, 3]]


def test_infer_topology_uniform_is_one_domain():
    m = [[0 if i == j else 40.0 for j in range(4)] for i in range(4)]
    assert infer_topology(m) == [[0, 1, 2, 3]]


def test_infer_topology_rejects_smooth_gradient():
    vals = iter([10.0, 20.0, 30.0, 40.0, 50.0, 60.0])
    m = [[0.0] * 4 for _ in range(4)]
    for i in range(4):
        for j in range(i + 1, 4):
            m[i][j] = m[j][i] = next(vals)
    with pytest.raises(InferenceAmbiguous):
        infer_topology(m)


def test_infer_topology_degenerate_sizes():
    assert infer_topology([]) == []
    assert infer_topology([[0.0]]) == [[0]]


def test_effective_domains_visible_and_inferred():
    topo = VTopology(vcpu_domain=[0, 1, 0, 1], visible=True)
    assert effective_domains(topo, Random(0)) == [[0, 2], [1, 3]]
    hidden = VTopology(vcpu_domain=[0, 1, 0, 1], visible=False)
    for seed in range(50):
        assert effective_domains(hidden, Random(seed)) == [[0, 2], [1, 3]]
