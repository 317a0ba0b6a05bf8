"""Shared builders for the test suite.

Most functional tests run on a deliberately small hierarchy (4-way caches,
two slices) so that evictions, pool sizes, and probe budgets stay tiny; the
acceptance suite is the only place the full default geometry is exercised
end to end.
"""

import pytest

from vcachesim.cache import CacheGeometry, CacheState
from vcachesim.context import make_context
from vcachesim.mem import FragmentationProfile
from vcachesim.tenants import VTopology
from vcachesim.timing import LatencyModel

# 16 L2 colors, 32 LLC colors, like the full-size geometry, but 4 ways deep
SMALL = CacheGeometry(l2_ways=4, l2_sets=1024, llc_ways=4, llc_sets=2048,
                      n_slices=2)

# single color at each level: every page conflicts with every other page
TINY = CacheGeometry(l2_ways=4, l2_sets=64, llc_ways=4, llc_sets=64,
                     n_slices=1)


def quiet_model() -> LatencyModel:
    """Latency model with no jitter and no cold spikes: every sample sits
    exactly on its level's base latency."""
    return LatencyModel(jitter=0.0, spike_prob_cold=0.0)


def make_ctx(geometry=SMALL, seed=11, guest_pages=256, kind="contiguous",
             shuffle=0.0, topology=None, quiet=True, **kw):
    profile = FragmentationProfile(kind=kind, shuffle_degree=shuffle)
    model = quiet_model() if quiet else None
    if topology is None:
        topology = VTopology(vcpu_domain=[0, 0])
    return make_context(geometry, profile, guest_pages, seed,
                        topology=topology, model=model, **kw)


def fresh_state(geometry=SMALL, n_cores=2, seed=0, **kw) -> CacheState:
    state = CacheState(geometry, n_cores=n_cores, seed=seed, **kw)
    for actor in range(n_cores):
        state.register_actor(actor, core=actor)
    return state


def congruent_addrs(ctx, n, level=0, cell_rank=0):
    """First n guest line addresses (offset 0) sharing one cache cell."""
    groups = {}
    for page in range(ctx.tmap.guest_pages):
        gva = page << 12
        if level == 0:
            key = ctx.resolve(gva) >> 6 & (ctx.geometry.l2_sets - 1)
        else:
            key = ctx.oracle_cell(gva)
        groups.setdefault(key, []).append(gva)
    fat = sorted((g for g in groups.values() if len(g) >= n),
                 key=lambda g: g[0])
    return fat[cell_rank][:n]


@pytest.fixture
def ctx():
    return make_ctx()


@pytest.fixture
def state():
    return fresh_state()
