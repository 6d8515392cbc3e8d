from __future__ import annotations

import random

import pytest

from statenet.address import Address, NodeIdentity, cpl
from statenet.routing import LookupFailed, RoutingTable, bootstrap, iterative_lookup

W = 8


def node(bits: str, pl: int = 0) -> NodeIdentity:
    return NodeIdentity(Address.from_bits(bits), pl)


def ident(key: int, pl: int = 0, width: int = W) -> NodeIdentity:
    return NodeIdentity(Address(key, width), pl)


def test_bucket_placement():
    t = RoutingTable(node("010"), k=2)
    t.observe(node("011"))
    assert t.bucket_index(0b011) == 2
    assert [e.identity.key for e in t.buckets[2]] == [0b011]


def test_empty_bucket_insert_and_refresh():
    t = RoutingTable(ident(0), k=2)
    a, b = ident(0x80), ident(0x81)
    assert t.observe(a) and t.observe(b)
    t.observe(a)  # seen again: moves to the tail
    assert [e.identity for e in t.buckets[0]] == [b, a]


def test_full_bucket_dead_head_replaced():
    t = RoutingTable(ident(0), k=2)
    a, b, c = ident(0x80), ident(0x81), ident(0x82)
    t.observe(a)
    t.observe(b)
    assert t.observe(c, probe=lambda p: False)
    assert [e.identity for e in t.buckets[0]] == [b, c]
    assert a not in t


def test_full_bucket_live_head_kept():
    t = RoutingTable(ident(0), k=2)
    a, b, c = ident(0x80), ident(0x81), ident(0x82)
    t.observe(a)
    t.observe(b)
    assert not t.observe(c, probe=lambda p: True)
    assert [e.identity for e in t.buckets[0]] == [b, a]
    assert c not in t


def test_self_is_never_stored():
    t = RoutingTable(ident(5))
    with pytest.raises(ValueError):
        t.observe(ident(5))


def test_find_storers_rules():
    t = RoutingTable(ident(0), k=8)
    account = 0b1010_0000
    full = ident(0x01, 0)
    specific = ident(0b1010_1111, 4)
    broad = ident(0b1011_1111, 2)
    deepest = ident(0b1010_0001, 5)
    failing = ident(0b1110_0000, 5)  # shares 1 bit with the account, needs 5
    for p in (full, specific, broad, deepest, failing):
        t.observe(p)
    got = t.find_storers(account, 10)
    assert full in got and failing not in got
    assert got.index(deepest) < got.index(specific) < got.index(broad) < got.index(full)


def test_find_closest_against_scan():
    rng = random.Random(3)
    owner = ident(rng.getrandbits(16), 0, 16)
    t = RoutingTable(owner, k=4)
    for _ in range(800):
        key = rng.getrandbits(16)
        if key != owner.key:
            t.observe(ident(key, 0, 16))
    entries = t.entries()
    assert owner not in entries
    for _ in range(100):
        target = rng.getrandbits(16)
        want = sorted(entries, key=lambda p: p.key ^ target)[:5]
        assert t.find_closest(target, 5) == want
    single = RoutingTable(owner, k=4)
    peer = ident(owner.key ^ 1, 0, 16)
    single.observe(peer)
    assert single.find_closest(rng.getrandbits(16), 3) == [peer]


def network(n: int, pl: int, k: int, seed: int, width: int = 16):
    rng = random.Random(seed)
    keys = rng.sample(range(2**width), n)
    ids = [ident(x, pl, width) for x in keys]
    tables = {i.key: RoutingTable(i, k) for i in ids}
    bootstrap(tables, ids, peers_each=64, rng=rng)
    return ids, tables


def test_lookup_when_requester_holds():
    ids, tables = network(10, 0, 4, 1)
    r = iterative_lookup(tables[ids[0].key], 123, tables)
    assert r.iterations == 0 and r.holder == ids[0]


def test_two_node_network():
    a, b = ident(0x10, 8), ident(0xF0, 0)
    ta, tb = RoutingTable(a), RoutingTable(b)
    ta.observe(b)
    tb.observe(a)
    r = iterative_lookup(ta, 0x77, {a.key: ta, b.key: tb})
    assert r.iterations == 1 and r.holder == b


def test_known_storer_found_in_one_round():
    ids, tables = network(200, 4, 8, 2)
    req = tables[ids[0].key]
    target_holder = next(p for p in req.entries() if cpl(p.key, ids[0].key, 16) < 4)
    r = iterative_lookup(req, target_holder.key, tables)
    assert r.iterations == 1
    assert cpl(r.holder.key, target_holder.key, 16) >= 4


def test_lookup_fails_without_holder():
    a, b = ident(0x10, 8), ident(0x20, 8)
    ta, tb = RoutingTable(a), RoutingTable(b)
    ta.observe(b)
    tb.observe(a)
    with pytest.raises(LookupFailed):
        iterative_lookup(ta, 0xEE, {a.key: ta, b.key: tb})


def test_dead_nodes_are_skipped():
    ids, tables = network(100, 3, 8, 4)
    req = ids[0]
    account = next(x for x in range(2**16) if cpl(x, req.key, 16) < 3)
    holders = [p.key for p in ids if cpl(p.key, account, 16) >= 3]
    dead = set(holders[: len(holders) // 2])
    r = iterative_lookup(tables[req.key], account, tables, alive=lambda k: k not in dead)
    assert r.holder.key not in dead


def test_nearest_neighbour_bootstrap_is_exact():
    rng = random.Random(5)
    for _ in range(20):
        ids = [ident(x, 0, 10) for x in rng.sample(range(2**10), rng.randint(2, 60))]
        tables = {i.key: RoutingTable(i, k=1000) for i in ids}
        bootstrap(tables, ids, peers_each=0, neighbors=4)
        for i in ids:
            others = sorted((q for q in ids if q.key != i.key), key=lambda q: q.key ^ i.key)
            assert {p.key for p in tables[i.key].entries()} == {p.key for p in others[:4]}


def test_bigger_buckets_need_fewer_rounds():
    rng = random.Random(7)
    width = 20
    keys = rng.sample(range(2**width), 1000)
    means = []
    for k in (4, 8, 16):
        ids = [ident(x, 6, width) for x in keys]
        tables = {i.key: RoutingTable(i, k) for i in ids}
        bootstrap(tables, ids, peers_each=256, rng=random.Random(1))
        lr = random.Random(9)
        total = 0
        for _ in range(200):
            req = ids[lr.randrange(len(ids))]
            total += iterative_lookup(tables[req.key], lr.getrandbits(width), tables).iterations
        means.append(total / 200)
    assert means[0] > means[1] > means[2]
