from __future__ import annotations

import json
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from statenet.merkle import (
    EMPTY,
    CannotUpdateError,
    MerkleTrie,
    NotHeldError,
    VerificationError,
    decode_siblings,
    encode_siblings,
    proof_wire_size,
    sha256,
    verify_proof,
)

GOLDEN = Path(__file__).parent / "data" / "proof_golden.json"


def vh(i: int) -> bytes:
    return sha256(b"v%d" % i)


def random_items(rng: random.Random, n: int, width: int) -> dict[int, bytes]:
    keys = rng.sample(range(2**width), n)
    return {k: vh(k) for k in keys}


def test_empty_and_single_leaf():
    t = MerkleTrie(8)
    assert t.root == EMPTY
    t.set(5, vh(5))
    assert t.root == oracle.leaf(5, vh(5), 8)
    p = t.prove(5)
    assert p.depth == 0 and p.wire_size == 2
    assert verify_proof(t.root, b"v5", p)


@pytest.mark.parametrize("width,n", [(3, 8), (8, 1), (8, 2), (8, 50), (16, 300)])
def test_root_matches_oracle(width, n):
    rng = random.Random(width * 1000 + n)
    items = random_items(rng, n, width)
    bulk = MerkleTrie.from_items(width, items.items())
    inc = MerkleTrie(width)
    for k, v in items.items():
        inc.set(k, v)
    assert bulk.root == inc.root == oracle.root(items, width)
    assert sorted(bulk.keys()) == sorted(items)


def test_membership_proof_roundtrip_and_tamper():
    rng = random.Random(3)
    items = {k: sha256(b"leaf %d" % k) for k in rng.sample(range(2**12), 64)}
    t = MerkleTrie.from_items(12, items.items())
    for k in list(items)[:16]:
        p = t.prove(k)
        data = b"leaf %d" % k
        assert p.is_membership
        assert verify_proof(t.root, data, p)
        flipped = bytes([data[0] ^ 1]) + data[1:]
        assert not verify_proof(t.root, flipped, p)
        assert not verify_proof(t.root, None, p)
        assert not verify_proof(sha256(b"other root"), data, p)


def test_absence_proof_agrees_with_full_scan():
    rng = random.Random(4)
    items = random_items(rng, 16, 10)
    t = MerkleTrie.from_items(10, items.items())
    absent = [k for k in range(2**10) if oracle.member(items, k) is None]
    for k in rng.sample(absent, 40):
        p = t.prove(k)
        assert not p.is_membership
        assert verify_proof(t.root, None, p)
        assert not verify_proof(t.root, b"anything", p)
    for k in items:
        # a membership proof can never pass as an absence proof
        assert not verify_proof(t.root, None, t.prove(k))


def test_balanced_trie_proof_size():
    t = MerkleTrie.from_items(10, [(k, vh(k)) for k in range(2**10)])
    p = t.prove(417)
    assert p.depth == 10 and p.present == 10
    assert p.wire_size == 320 + 2 + 2
    assert p.wire_size == proof_wire_size(10, 10)


def test_wire_golden():
    g = json.loads(GOLDEN.read_text())
    t = MerkleTrie.from_items(g["width"], [(k, vh(k)) for k in g["keys"]])
    assert t.root.hex() == g["root"]
    for key, want in g["proofs"].items():
        p = t.prove(int(key))
        wire = encode_siblings(p)
        assert wire.hex() == want["wire"]
        assert len(wire) == p.wire_size
        assert decode_siblings(wire) == p.siblings
        # layout: u16 count, bitmap with bit 7 = sibling nearest the leaf, digests leaf-to-root
        assert int.from_bytes(wire[:2], "big") == want["depth"]
        order = list(reversed(p.siblings))
        for j, s in enumerate(order):
            assert bool(wire[2 + j // 8] & (0x80 >> (j % 8))) == (s is not None)


def test_decode_rejects_malformed():
    t = MerkleTrie.from_items(8, [(k, vh(k)) for k in (1, 2, 200)])
    wire = encode_siblings(t.prove(1))
    for bad in (wire[:1], wire[:-1], wire + b"\0"):
        with pytest.raises(ValueError):
            decode_siblings(bad)


def test_pruned_trie_keeps_root_and_refuses_foreign_writes():
    rng = random.Random(5)
    items = random_items(rng, 200, 12)
    full = MerkleTrie.from_items(12, items.items())
    part = full.subtrie(0b101, 3)
    assert part.root == full.root
    assert not part.is_complete()
    inside = [k for k in items if k >> 9 == 0b101]
    outside = [k for k in items if k >> 9 != 0b101]
    assert all(part.get(k) == items[k] for k in inside)
    with pytest.raises(NotHeldError):
        part.get(outside[0])
    with pytest.raises(CannotUpdateError):
        part.set(outside[0], vh(0))
    # a proof from the full trie unlocks the key
    part.graft(full.prove(outside[0]))
    part.set(outside[0], vh(1))
    full.set(outside[0], vh(1))
    assert part.root == full.root


def test_graft_rejects_wrong_root():
    a = MerkleTrie.from_items(8, [(k, vh(k)) for k in (1, 9, 77)])
    b = MerkleTrie.from_items(8, [(k, vh(k + 1)) for k in (1, 9, 77)])
    part = a.subtrie(0, 1)
    with pytest.raises(VerificationError):
        part.graft(b.prove(200))


def test_digest_at_matches_oracle():
    rng = random.Random(6)
    items = random_items(rng, 60, 8)
    t = MerkleTrie.from_items(8, items.items())
    for plen in range(0, 9):
        for path in range(0, 2**plen, max(1, 2**plen // 8)):
            assert t.digest_at(path, plen) == oracle.subtree_digest(items, 8, path, plen)


key_sets = st.sets(st.integers(0, 2**10 - 1), min_size=0, max_size=40)


@settings(max_examples=60, deadline=None)
@given(key_sets, st.integers(0, 2**10 - 1))
def test_any_key_has_a_valid_proof(keys, probe):
    items = {k: vh(k) for k in keys}
    t = MerkleTrie.from_items(10, items.items())
    assert t.root == oracle.root(items, 10)
    p = t.prove(probe)
    if probe in items:
        assert verify_proof(t.root, b"v%d" % probe, p)
    else:
        assert verify_proof(t.root, None, p)


@settings(max_examples=40, deadline=None)
@given(key_sets, st.lists(st.tuples(st.integers(0, 2**10 - 1), st.integers(0, 99)), max_size=30))
def test_updates_match_rebuild(keys, writes):
    items = {k: vh(k) for k in keys}
    t = MerkleTrie.from_items(10, items.items())
    for k, v in writes:
        t.set(k, vh(v))
        items[k] = vh(v)
    assert t.root == MerkleTrie.from_items(10, items.items()).root == oracle.root(items, 10)
