"""Cache hierarchy unit tests: indexing, replacement, masks, conservation."""

import io
import random

import pytest
from hypothesis import given, settings, strategies as st

from vcachesim.cache import (L2, LLC, MEMORY, CacheGeometry, CacheState,
                             color_of, geometry_from_mapping, set_index,
                             slice_of)
from vcachesim.errors import InvariantError, ValidationError

from conftest import SMALL, TINY, fresh_state


# ---- static address math ----------------------------------------------------

def test_set_index_basics():
    g = CacheGeometry()  # 1024 L2 sets, 2048 LLC sets
    assert set_index(g, L2, 0x0) == 0
    assert set_index(g, L2, 0x40) == 1
    assert set_index(g, L2, 0x8000) == 512
    assert set_index(g, L2, 0x10000) == 0      # wraps at 1024 sets
    assert set_index(g, LLC, 0x10000) == 1024  # still in range for 2048
    # bits below the line offset never matter
    assert set_index(g, L2, 0x8000 + 0x3F) == set_index(g, L2, 0x8000)


def test_color_is_page_aligned_index_bits():
    g = CacheGeometry()
    assert g.n_l2_colors == 16 and g.n_llc_colors == 32
    assert color_of(g, L2, 0xF000) == 15
    assert color_of(g, L2, 0x10000) == 0
    assert color_of(g, LLC, 0x10000) == 16
    for off in (0x0, 0x7, 0x40, 0xFFF):
        assert color_of(g, L2, 0x5000 | off) == 5
    # small L2s where all index bits sit below the page boundary: one color
    g1 = CacheGeometry(l2_sets=32, llc_sets=32, n_slices=1)
    assert g1.n_l2_colors == 1
    assert color_of(g1, L2, 0xABC000) == 0


def test_slice_hash_is_deterministic_and_balanced():
    g = CacheGeometry()
    hpa = 0x123440
    assert slice_of(g, hpa) == slice_of(g, hpa)
    assert slice_of(g, hpa) == slice_of(g, hpa | 0x3F)  # offset bits ignored
    assert slice_of(CacheGeometry(n_slices=1), 0xDEADBEC0) == 0
    # lines all congruent to LLC set 0 must still spread across slices
    counts = [0] * g.n_slices
    n = 20_000
    for k in range(n):
        counts[slice_of(g, k * (g.llc_sets << 6))] += 1
    expect = n / g.n_slices
    assert all(abs(c - expect) < 0.03 * expect for c in counts)


def test_geometry_validation():
    with pytest.raises(ValidationError):
        CacheGeometry(l2_sets=1000)
    with pytest.raises(ValidationError):
        CacheGeometry(llc_sets=0)
    with pytest.raises(ValidationError):
        CacheGeometry(n_slices=0)
    with pytest.raises(ValidationError):
        CacheGeometry(replacement="fifo")
    with pytest.raises(ValidationError):
        CacheGeometry(line_size=128)


def test_geometry_from_mapping_errors():
    with pytest.raises(ValidationError, match="missing geometry key"):
        geometry_from_mapping({"l2_ways": 4}, require_dims=True)
    with pytest.raises(ValidationError, match="unknown geometry key"):
        geometry_from_mapping({"l3_ways": 4})
    with pytest.raises(ValidationError):
        geometry_from_mapping({"l2_ways": "four"})
    g = geometry_from_mapping({"l2_ways": 4, "inclusive": "true"})
    assert g.l2_ways == 4 and g.inclusive


# ---- hits, misses, spills ----------------------------------------------------

def line_at(geometry, set_i, k, level=L2):
    """k-th distinct hpa mapping to the given set index."""
    return (set_i << 6) | (k * (geometry.sets(level) << 6))


def test_miss_then_hit(state):
    hpa = 0x4_2000
    assert state.access_level(0, hpa) == MEMORY
    assert state.access_level(0, hpa) == L2
    assert state.peek_level(0, hpa) == L2


def test_l2_victim_spills_to_llc():
    state = fresh_state(TINY)  # 4-way, 64 sets both levels, 1 slice
    lines = [line_at(TINY, 3, k) for k in range(5)]
    for hpa in lines:
        state.access_level(0, hpa)
    # first line fell out of the 4-way L2 and landed in the LLC
    assert state.peek_level(0, lines[0]) == LLC
    assert all(state.peek_level(0, h) == L2 for h in lines[1:])
    assert state.evictions[L2] == 1 and state.fills[LLC] == 1


def test_lru_evicts_oldest_and_touch_protects():
    state = fresh_state(TINY)
    a, b, c, d, e = (line_at(TINY, 0, k) for k in range(5))
    for hpa in (a, b, c, d):
        state.access_level(0, hpa)
    state.access_level(0, a)          # a becomes most recent
    res = state.access(0, e)
    assert res.hit_level == MEMORY
    assert res.evicted is not None and res.evicted.tag == b >> 6
    assert res.evicted.level == L2
    assert state.peek_level(0, a) == L2
    assert state.peek_level(0, b) == LLC


def test_plru_victim_sequence():
    g = CacheGeometry(l2_ways=4, l2_sets=64, llc_ways=4, llc_sets=64,
                      n_slices=1, replacement="plru")
    state = fresh_state(g)
    a, b, c, d, e, f, x = (line_at(g, 9, k) for k in range(7))
    for hpa in (a, b, c, d):
        state.access_level(0, hpa)
    # inserting d left a as the only stale way; e takes it
    assert state.access(0, e).evicted.tag == a >> 6
    assert state.access(0, f).evicted.tag == b >> 6
    state.access_level(0, c)          # touch: sets c's recency bit
    assert state.access(0, x).evicted.tag == d >> 6


def test_random_replacement_is_seed_deterministic():
    g = CacheGeometry(l2_ways=4, l2_sets=64, llc_ways=4, llc_sets=64,
                      n_slices=1, replacement="random")

    def victims(seed):
        state = fresh_state(g, seed=seed)
        out = []
        for k in range(12):
            res = state.access(0, line_at(g, 5, k))
            if res.evicted:
                out.append(res.evicted.tag)
        return out

    assert victims(7) == victims(7)
    runs = {tuple(victims(s)) for s in range(6)}
    assert len(runs) > 1  # different seeds pick different victims


# ---- way masks ---------------------------------------------------------------

def test_way_mask_validation(state):
    with pytest.raises(ValidationError):
        state.set_way_mask(0, L2, 0)
    with pytest.raises(ValidationError):
        state.set_way_mask(0, L2, SMALL.l2_ways + 1)
    # mask equal to the associativity is no restriction at all
    state.set_way_mask(0, L2, SMALL.l2_ways)
    assert (0, L2) not in state._caps


def test_way_mask_caps_own_occupancy():
    state = fresh_state(TINY)
    state.set_way_mask(0, L2, 2)
    lines = [line_at(TINY, 7, k) for k in range(4)]
    for hpa in lines:
        state.access_level(0, hpa)
    d = state.l2[0][7]
    assert len(d) == 2
    # own-oldest goes first, so the survivors are the two newest
    assert set(d) == {lines[2] >> 6, lines[3] >> 6}
    state.clear_way_mask(0, L2)
    state.access_level(0, lines[0])
    assert len(state.l2[0][7]) == 3


def test_way_mask_does_not_evict_other_actors():
    state = fresh_state(TINY, n_cores=2, core_domain=[0, 0])
    other = line_at(TINY, 7, 9)
    state.llc_install(0, other, 1)
    state.set_way_mask(0, LLC, 1)
    for k in range(3):
        state.llc_install(0, line_at(TINY, 7, k), 0)
    d = state.llc[0][0][7]
    assert other >> 6 in d            # the capped actor only ate its own lines
    assert sum(1 for v in d.values() if v == 0) == 1


# ---- flush, conservation, back-invalidation -----------------------------------

def test_flush_drops_line_everywhere():
    state = fresh_state(TINY)
    lines = [line_at(TINY, 2, k) for k in range(5)]
    for hpa in lines:
        state.access_level(0, hpa)
    assert state.peek_level(0, lines[0]) == LLC
    state.flush_line(lines[0])
    state.flush_line(lines[4])
    assert state.peek_level(0, lines[0]) == MEMORY
    assert state.peek_level(0, lines[4]) == MEMORY
    assert state.flushes == [1, 1]
    state.check_conservation()


def test_llc_eviction_back_invalidates_private_copies():
    state = fresh_state(TINY, n_cores=2, core_domain=[0, 0])
    shared = line_at(TINY, 4, 0)
    state.access_level(1, shared)          # private L2 copy on core 1
    state.llc_install(0, shared, 1)        # plus an LLC copy
    for k in range(1, 5):                  # four more fills evict it
        state.llc_install(0, line_at(TINY, 4, k), 0)
    assert state.peek_level(1, shared) == MEMORY
    assert state.invalidations == 1
    state.check_conservation()


def test_inclusive_mode_fills_both_levels():
    g = CacheGeometry(l2_ways=4, l2_sets=64, llc_ways=4, llc_sets=64,
                      n_slices=1, inclusive=True)
    state = fresh_state(g)
    hpa = line_at(g, 1, 0)
    state.access_level(0, hpa)
    assert state.occupancy(L2) == 1 and state.occupancy(LLC) == 1
    # five congruent fills overflow the LLC set and drop the L2 copy too
    for k in range(1, 5):
        state.access_level(0, line_at(g, 1, k))
    assert state.peek_level(0, hpa) == MEMORY
    assert state.invalidations >= 1
    state.check_conservation()


def test_conservation_under_random_traffic():
    rng = random.Random(3)
    for policy in ("lru", "plru", "random"):
        g = CacheGeometry(l2_ways=4, l2_sets=64, llc_ways=4, llc_sets=64,
                          n_slices=1, replacement=policy)
        state = fresh_state(g, n_cores=2, core_domain=[0, 0])
        pages = [rng.randrange(512) for _ in range(64)]
        for _ in range(2000):
            hpa = (rng.choice(pages) << 12) | (rng.randrange(64) << 6)
            op = rng.random()
            if op < 0.8:
                state.access_level(rng.randrange(2), hpa)
            elif op < 0.9:
                state.llc_install(0, hpa, rng.randrange(2))
            else:
                state.flush_line(hpa)
        state.check_conservation()


def test_conservation_check_detects_corruption(state):
    state.access_level(0, 0x9000)
    state.fills[L2] += 1  # book a fill that never happened
    with pytest.raises(InvariantError):
        state.check_conservation()


# ---- serialization -------------------------------------------------------------

def test_dump_csv_rows_match_occupancy():
    state = fresh_state(TINY, n_cores=2, core_domain=[0, 0])
    for k in range(6):
        state.access_level(k % 2, line_at(TINY, k, k))
    state.llc_install(0, line_at(TINY, 9, 1), 0)
    buf = io.StringIO()
    state.dump_csv(buf)
    rows = buf.getvalue().strip().splitlines()
    assert rows[0] == "level,slice,set,way,tag,owner"
    body = [r.split(",") for r in rows[1:]]
    assert len(body) == state.occupancy(L2) + state.occupancy(LLC)
    l2_rows = [r for r in body if r[0] == "l2"]
    assert {r[1] for r in l2_rows} <= {"0", "1"}  # slice column = core id


# ---- LRU reference model (property) -------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=9), min_size=1,
                max_size=120))
def test_l2_set_follows_lru_reference(seq):
    g = CacheGeometry(l2_ways=4, l2_sets=64, llc_ways=8, llc_sets=64,
                      n_slices=1)
    state = fresh_state(g)
    model = []  # oldest first
    for k in seq:
        hpa = line_at(g, 0, k)
        state.access_level(0, hpa)
        line = hpa >> 6
        if line in model:
            model.remove(line)
        model.append(line)
        if len(model) > g.l2_ways:
            model.pop(0)
        assert list(state.l2[0][0]) == model
