from __future__ import annotations

import random
from dataclasses import replace

import pytest

import oracle
from statenet.merkle import CannotUpdateError, NotHeldError, VerificationError, sha256, verify_proof
from statenet.state import (
    CONTRACT,
    EXTERNAL,
    AccountRecord,
    AccountWrite,
    PartialState,
    SlotWrite,
)

CODE = b"\x60\x00" * 40
CODE_HASH = sha256(CODE)


def slot_value(i: int) -> bytes:
    return i.to_bytes(32, "big")


class Oracle:
    """Full state kept as plain dicts; roots recomputed from scratch."""

    def __init__(self, width: int, records, slots):
        self.width = width
        self.records = {r.address: r for r in records}
        self.slots = {a: dict(s) for a, s in slots.items()}

    def record(self, a: int) -> AccountRecord:
        r = self.records[a]
        if r.kind == CONTRACT:
            hashed = {k: sha256(v) for k, v in self.slots.get(a, {}).items()}
            r = replace(r, storage_root=oracle.root(hashed, self.width))
        return r

    def apply(self, writes) -> None:
        for w in writes:
            r = self.records.get(w.address, AccountRecord(w.address))
            if isinstance(w, AccountWrite):
                r = replace(
                    r,
                    nonce=r.nonce if w.nonce is None else w.nonce,
                    balance=r.balance if w.balance is None else w.balance,
                )
            else:
                self.slots.setdefault(w.address, {})[w.key] = w.value
            self.records[w.address] = r

    def root(self) -> bytes:
        leaves = {a: sha256(self.record(a).encode()) for a in self.records}
        return oracle.root(leaves, self.width)


def make_world(width: int, n: int, rng: random.Random, contracts: float = 0.25, slots_each: int = 5):
    addrs = rng.sample(range(2**width), n) if n < 2**width else list(range(n))
    records, slots = [], {}
    for a in addrs:
        if rng.random() < contracts:
            records.append(AccountRecord(a, CONTRACT, 1, rng.randrange(10**6), code_hash=CODE_HASH))
            slots[a] = {rng.getrandbits(width): slot_value(rng.randrange(1000)) for _ in range(slots_each)}
        else:
            records.append(AccountRecord(a, EXTERNAL, 0, rng.randrange(10**6)))
    return records, slots


def genesis(width, records, slots):
    return PartialState.genesis(width, records, slots, {CODE_HASH: CODE})


def apply_everywhere(full: PartialState, nodes: list[PartialState], writes) -> list[bytes]:
    touched: dict[int, set] = {}
    for w in writes:
        touched.setdefault(w.address, set())
        if isinstance(w, SlotWrite):
            touched[w.address].add(w.key)
    bundles = [full.get_with_proof(a, sorted(ks)) for a, ks in touched.items() if full.holds(a)]
    roots = [full.apply_block_writes(writes)]
    for s in nodes:
        roots.append(s.apply_block_writes(writes, [b for b in bundles if not s.owns(b.address)]))
    return roots


@pytest.fixture
def world():
    rng = random.Random(11)
    records, slots = make_world(12, 300, rng)
    return records, slots, genesis(12, records, slots)


def test_genesis_root_matches_oracle(world):
    records, slots, full = world
    assert full.global_root == Oracle(12, records, slots).root()
    assert full.check_proof_path()


def test_get_with_proof_owned_contract(world):
    records, slots, full = world
    c = next(r for r in records if r.kind == CONTRACT)
    keys = sorted(slots[c.address])
    b = full.get_with_proof(c.address, keys[:2])
    assert b.record.kind == CONTRACT
    assert len(b.slots) == 2 and b.code == CODE
    assert b.verify(full.global_root)
    everything = full.get_with_proof(c.address)
    assert sorted(k for k, _, _ in everything.slots) == keys
    assert everything.verify(full.global_root)


def test_get_with_proof_outside_prefix(world):
    _, _, full = world
    part = full.restrict(0b1, 1)
    outsider = next(a for a in full.records if a >> 11 == 0)
    with pytest.raises(NotHeldError):
        part.get_with_proof(outsider)
    with pytest.raises(NotHeldError):
        part.read_account(outsider)


def test_bundle_tamper_detected(world):
    records, _, full = world
    a = records[0].address
    b = full.get_with_proof(a)
    assert verify_proof(full.global_root, b.record.encode(), b.proof)
    bad = replace(b, record=replace(b.record, balance=b.record.balance + 1))
    assert not bad.verify(full.global_root)
    if b.record.kind == CONTRACT:
        k, v, p = b.slots[0]
        b.slots[0] = (k, bytes([v[0] ^ 1]) + v[1:], p)
        assert not b.verify(full.global_root)


def test_absent_account_proof(world):
    _, _, full = world
    missing = next(a for a in range(2**12) if a not in full.records)
    b = full.get_with_proof(missing)
    assert b.record is None and b.verify(full.global_root)


def test_measure_proof_size(world):
    records, _, full = world
    p = full.accounts.prove(records[0].address)
    assert full.measure_proof_size(records[0].address) == 2 + (p.depth + 7) // 8 + 32 * p.present


def test_restricted_states_agree_on_root(world):
    records, slots, full = world
    parts = [full.restrict(p, 2) for p in range(4)]
    assert {s.global_root for s in parts} == {full.global_root}
    assert all(s.check_proof_path() for s in parts)
    assert sum(len(s.records) for s in parts) == len(records)


def test_owned_write_leaves_proof_path_alone(world):
    _, _, full = world
    part = full.restrict(0b10, 2)
    before = part.proof_path()
    mine = next(a for a in part.records)
    part.apply_block_writes([AccountWrite(mine, balance=123)])
    assert part.proof_path() == before
    assert part.global_root != full.global_root
    assert part.check_proof_path()


def test_unowned_write_needs_proof(world):
    _, _, full = world
    part = full.restrict(0b10, 2)
    other = next(a for a in full.records if a >> 10 != 0b10)
    with pytest.raises(CannotUpdateError):
        part.apply_block_writes([AccountWrite(other, balance=1)])
    stale = full.get_with_proof(other)
    apply_everywhere(full, [part], [AccountWrite(other, balance=5)])
    with pytest.raises(VerificationError):
        part.apply_block_writes([AccountWrite(other, balance=1)], [stale])


def test_lifecycle():
    """3-bit, 8-leaf state: the value at 111 is copied into 100."""
    records = [AccountRecord(a, EXTERNAL, 0, 2 if a == 0b111 else 0) for a in range(8)]
    full = genesis(3, records, {})
    # four nodes: one full, one holding 1xx, one holding 10x, one holding 0xx
    nodes = [full.restrict(0, 0), full.restrict(0b1, 1), full.restrict(0b10, 2), full.restrict(0b0, 1)]
    value = full.read_account(0b111).balance
    assert value == 2
    writes = [AccountWrite(0b100, balance=value)]
    ref = Oracle(3, records, {})
    ref.apply(writes)
    roots = apply_everywhere(full, nodes, writes)
    assert set(roots) == {ref.root()}
    assert nodes[1].read_account(0b100).balance == 2
    assert all(n.check_proof_path() for n in nodes)


def test_thousand_random_writes_against_oracle():
    rng = random.Random(12)
    width = 12
    records, slots = make_world(width, 4096, rng, contracts=0.05, slots_each=3)
    full = genesis(width, records, slots)
    ref = Oracle(width, records, slots)
    nodes = [full.restrict(p, 2) for p in range(4)] + [full.restrict(0b1011, 4), full.restrict(0b0, 1)]
    contracts = [r.address for r in records if r.kind == CONTRACT]
    done = 0
    while done < 1000:
        writes = []
        for _ in range(50):
            if rng.random() < 0.3:
                c = rng.choice(contracts)
                writes.append(SlotWrite(c, rng.getrandbits(width), slot_value(rng.randrange(10**6))))
            else:
                writes.append(AccountWrite(rng.randrange(2**width), balance=rng.randrange(10**6)))
        ref.apply(writes)
        roots = apply_everywhere(full, nodes, writes)
        assert set(roots) == {ref.root()}
        done += len(writes)
    for n in [full] + nodes:
        for a, r in n.records.items():
            if n.owns(a):
                assert r == ref.record(a)
                if r.kind == CONTRACT:
                    assert n.slot_values[a] == ref.slots[a]
    assert len(full.records) == 4096


def test_snapshot_ranges(world):
    _, _, full = world
    part = full.restrict(0b1, 1)
    whole = part.subtree_snapshot(0b1, 1)
    assert whole.leaf_count == len(part.records)
    assert whole.verify(full.global_root)
    dense = genesis(10, [AccountRecord(a) for a in range(1024)], {})
    d = dense.restrict(0b1, 1)
    assert d.subtree_snapshot(0b10, 2).leaf_count == len(d.records) // 2
    with pytest.raises(NotHeldError):
        d.subtree_snapshot(0b0, 1)


def test_snapshot_tamper_rejected(world):
    _, _, full = world
    snap = full.subtree_snapshot(0b11, 2)
    snap.records[0] = replace(snap.records[0], balance=snap.records[0].balance + 1)
    assert not snap.verify()


def test_join_with_three_buffered_blocks(world):
    records, slots, full = world
    ref = Oracle(12, records, slots)
    snap = full.subtree_snapshot(0b01, 2)
    rng = random.Random(3)
    buffered = []
    for _ in range(3):
        writes = [AccountWrite(rng.choice(records).address, balance=rng.randrange(100)) for _ in range(10)]
        bundles = [full.get_with_proof(w.address) for w in writes]
        full.apply_block_writes(writes)
        ref.apply(writes)
        buffered.append((writes, bundles))
    joiner = PartialState.empty(12, 0b01, 2, full.global_root)
    joiner.load_snapshot(snap, buffered)
    assert joiner.global_root == full.global_root == ref.root()
    for a, r in joiner.records.items():
        assert r == full.records[a]
    assert len(joiner.records) == sum(1 for a in records if a.address >> 10 == 0b01)


def descend(a: PartialState, b: PartialState, path: int = 0, plen: int = 0) -> list[tuple[int, int]]:
    """Paths visited while chasing a single differing leaf."""
    visited = [(path, plen)]
    da, ca, ka = a.diff_hashes(path, plen)
    db, cb, _ = b.diff_hashes(path, plen)
    if da == db:
        return []
    bad = [i for i in (0, 1) if ca[i] != cb[i]]
    assert len(bad) == 1
    child = ((path << 1) | bad[0], plen + 1)
    if ka[bad[0]] == "leaf" or child[1] == a.width:
        return visited + [child]
    return visited + descend(a, b, *child)


def test_diff_descent_one_stale_leaf():
    records = [AccountRecord(a, EXTERNAL, 0, a) for a in range(1024)]
    fresh = genesis(10, records, {})
    stale = genesis(10, records, {})
    fresh.apply_block_writes([AccountWrite(613, balance=1)])
    path = descend(fresh, stale)
    # one mismatching branch per level down to the leaf at depth 10
    assert len(path) == 11
    assert path[-1] == (613, 10)
    same = genesis(10, records, {})
    assert descend(stale, same) == []
    d0, _, _ = fresh.diff_hashes(0, 0)
    assert d0 == fresh.global_root != stale.global_root


def test_code_deduplicated(world):
    records, _, full = world
    users = [r for r in records if r.code_hash == CODE_HASH]
    assert len(users) > 1
    assert len(full.code) == 1 and full.code.stored_bytes == len(CODE)
