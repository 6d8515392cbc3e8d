from __future__ import annotations

import numpy as np
import pytest

from statenet.bandwidth import (
    EXTRA_CATEGORIES,
    TraceAccess,
    baseline_per_block,
    measure_point,
    node_bandwidth_cached,
    node_bandwidth_nocache,
)
from statenet.cache import MERKLE, SegmentedCache
from statenet.network import Network, SimConfig, genesis_from_universe

PULL = {"control", "headers", "account_proofs", "slot_data", "slot_proofs", "code"}
CACHE = {"header": 20_000, "slot": 20_000, "code": 30_000}


@pytest.fixture(scope="module")
def access(small_trace):
    return TraceAccess.from_trace(small_trace)


@pytest.mark.parametrize("cache", [None, CACHE], ids=["nocache", "cache"])
def test_fast_path_matches_simulated_ledger(small_trace, access, cache):
    """Per-node, per-block extra bytes agree exactly between the two paths."""
    net = Network(SimConfig(nodes=30, prefix_lens=(2, 3), cache=cache, latency="constant", seed=1), genesis_from_universe(small_trace.universe()))
    blocks = net.run_trace(small_trace, blocks=5)
    checked = 0
    for key, node in net.nodes.items():
        pl = node.identity.prefix_len
        if cache:
            fast = node_bandwidth_cached(access, key, pl, SegmentedCache(cache, MERKLE))
        else:
            fast = node_bandwidth_nocache(access, key, pl)
        for i, b in enumerate(blocks):
            if b.proposer == key:
                continue  # the proposer gathers state synchronously, outside the model
            got = net.ledger.received(key, b.number, PULL)
            got += sum(v for (n, blk, c), v in net.ledger.sent.items() if n == key and blk == b.number and c == "request")
            assert got == int(fast.per_block[i].sum()), (key, b.number)
            checked += 1
    assert checked >= 5 * 28


def test_full_node_pulls_nothing(access):
    r = node_bandwidth_nocache(access, 0, 0)
    assert r.per_block.sum() == 0
    c = node_bandwidth_cached(access, 0, 0, SegmentedCache({"header": 1000}, MERKLE))
    assert c.per_block.sum() == 0


def test_cache_never_costs_more(access):
    ids = [0x1234_5678, 0x9ABC_DEF0, 0x0F0F_0F0F]
    plain = measure_point(access, ids, 4)
    cached = measure_point(access, ids, 4, cache_bytes=200_000)
    assert cached.mean_extra <= plain.mean_extra
    assert set(plain.categories) == set(EXTRA_CATEGORIES)


def test_more_storage_less_traffic(access):
    ids = [0x1234_5678, 0x9ABC_DEF0, 0x0F0F_0F0F, 0x7777_0000]
    means = [measure_point(access, ids, pl).mean_extra for pl in (1, 4, 8)]
    assert means == sorted(means)


def test_baseline_and_warmup(access):
    base = baseline_per_block(access)
    assert base.shape == (access.n_blocks,) and np.all(base > 0)
    with pytest.raises(ValueError):
        measure_point(access, [1], 2, warmup=access.n_blocks)
