"""Kademlia-style routing with prefix-length-annotated peers.

Buckets are indexed by common-prefix length with the owner (0-based), so
bucket ``i`` holds peers agreeing with the owner on exactly ``i`` leading
bits.  Lookups prefer peers that store the target (by the prefix rule) over
peers that are merely XOR-close to it.
"""
from __future__ import annotations

import random
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Union

from .address import Address, NodeIdentity, cpl

Key = Union[int, Address]
Probe = Callable[[NodeIdentity], bool]


def _key(x: Key) -> int:
    return x.value if isinstance(x, Address) else x


@dataclass
class PeerEntry:
    identity: NodeIdentity
    last_seen: int = 0


class RoutingTable:
    def __init__(self, owner: NodeIdentity, k: int = 16):
        if k < 1:
            raise ValueError("bucket size k must be positive")
        self.owner = owner
        self.k = k
        self.width = owner.width
        self.buckets: list[list[PeerEntry]] = [[] for _ in range(self.width)]
        self._index: dict[int, int] = {}  # peer key -> bucket

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, peer: Union[NodeIdentity, int]) -> bool:
        key = peer.key if isinstance(peer, NodeIdentity) else peer
        return key in self._index

    def bucket_index(self, peer_key: int) -> int:
        return cpl(self.owner.key, peer_key, self.width)

    def entries(self) -> list[NodeIdentity]:
        return [e.identity for b in self.buckets for e in b]

    def observe(self, peer: NodeIdentity, probe: Optional[Probe] = None, now: int = 0) -> bool:
        """Record contact with ``peer``; returns True when the peer is in the table afterwards.

        A full bucket pings its head (oldest entry).  A dead head is replaced
        by the newcomer; a live head moves to the tail and the newcomer is
        dropped.  With no ``probe`` every head counts as alive.
        """
        if peer.key == self.owner.key:
            raise ValueError("a node does not route to itself")
        i = self.bucket_index(peer.key)
        bucket = self.buckets[i]
        if peer.key in self._index:
            for j, e in enumerate(bucket):
                if e.identity.key == peer.key:
                    del bucket[j]
                    bucket.append(PeerEntry(peer, now))
                    return True
        if len(bucket) < self.k:
            bucket.append(PeerEntry(peer, now))
            self._index[peer.key] = i
            return True
        head = bucket[0]
        if probe is not None and not probe(head.identity):
            bucket.pop(0)
            del self._index[head.identity.key]
            bucket.append(PeerEntry(peer, now))
            self._index[peer.key] = i
            return True
        bucket.pop(0)
        head.last_seen = now
        bucket.append(head)
        return False

    def remove(self, peer_key: int) -> None:
        i = self._index.pop(peer_key, None)
        if i is not None:
            self.buckets[i] = [e for e in self.buckets[i] if e.identity.key != peer_key]

    def find_storers(self, account: Key, n: int) -> list[NodeIdentity]:
        """Known peers that store ``account``: most specific prefix first, then XOR-closest."""
        a = _key(account)
        w = self.width
        hits = [p for p in self.entries() if cpl(p.key, a, w) >= p.prefix_len]
        hits.sort(key=lambda p: (-p.prefix_len, p.key ^ a))
        return hits[:n]

    def find_closest(self, target: Key, n: int) -> list[NodeIdentity]:
        t = _key(target)
        return sorted(self.entries(), key=lambda p: p.key ^ t)[:n]

    def candidates(self, account: Key, n: int) -> list[NodeIdentity]:
        """Response to a lookup: storers first, then XOR-closest non-storers."""
        a = _key(account)
        return sorted(self.entries(), key=lambda p: candidate_rank(p, a, self.width))[:n]


def candidate_rank(peer: NodeIdentity, account: int, width: int) -> tuple:
    if cpl(peer.key, account, width) >= peer.prefix_len:
        return (0, -peer.prefix_len, peer.key ^ account)
    return (1, 0, peer.key ^ account)


class LookupFailed(RuntimeError):
    """No reachable node holds the account (availability violation)."""


@dataclass
class LookupResult:
    holder: Optional[NodeIdentity]
    payload: object
    iterations: int
    queries: list[tuple[int, int]] = field(default_factory=list)  # (queried key, candidates returned)

    @property
    def messages(self) -> int:
        return len(self.queries)


def iterative_lookup(
    requester: RoutingTable,
    account: Key,
    tables: Mapping[int, RoutingTable],
    alpha: int = 3,
    response_size: Optional[int] = None,
    holds: Optional[Callable[[NodeIdentity, int], bool]] = None,
    fetch: Optional[Callable[[NodeIdentity, int], object]] = None,
    alive: Optional[Callable[[int], bool]] = None,
) -> LookupResult:
    """Find a node holding ``account`` by rounds of up to ``alpha`` parallel queries.

    ``holds`` defaults to the prefix rule.  A queried holder answers with
    ``fetch(holder, account)``; any other node answers with its best
    ``response_size`` candidates, which are merged into the shortlist.  The
    round count is returned as ``iterations``; a requester that holds the
    account itself needs zero.
    """
    a = _key(account)
    w = requester.width
    n = response_size or requester.k
    if holds is None:
        def holds(p: NodeIdentity, acct: int) -> bool:
            return cpl(p.key, acct, w) >= p.prefix_len
    if holds(requester.owner, a):
        payload = fetch(requester.owner, a) if fetch else None
        return LookupResult(requester.owner, payload, 0)

    def rank(p: NodeIdentity) -> tuple:
        return candidate_rank(p, a, w)

    shortlist = {p.key: p for p in requester.candidates(a, n)}
    queried: set[int] = {requester.owner.key}
    result = LookupResult(None, None, 0)
    while True:
        # only the best n candidates seen so far are eligible (classic shortlist)
        best_n = sorted(shortlist.values(), key=rank)[:n]
        pending = [p for p in best_n if p.key not in queried][:alpha]
        if not pending:
            raise LookupFailed(f"no holder found for {a:#x} after {result.iterations} rounds")
        result.iterations += 1
        found = []
        for p in pending:
            queried.add(p.key)
            if alive is not None and not alive(p.key):
                result.queries.append((p.key, 0))
                continue
            if holds(p, a):
                found.append(p)
                result.queries.append((p.key, 0))
                continue
            reply = tables[p.key].candidates(a, n)
            result.queries.append((p.key, len(reply)))
            for q in reply:
                if q.key != requester.owner.key:
                    shortlist.setdefault(q.key, q)
        if found:
            best = min(found, key=rank)
            result.holder = best
            result.payload = fetch(best, a) if fetch else None
            return result


def bootstrap(
    tables: Mapping[int, RoutingTable],
    identities: Iterable[NodeIdentity],
    peers_each: int = 256,
    rng: Optional[random.Random] = None,
    neighbors: Optional[int] = None,
) -> None:
    """Seed every table with ``peers_each`` random other nodes plus its XOR-nearest ones.

    The nearest ``neighbors`` (default: the bucket size) stand in for the
    self-lookup a joining node performs; without them a node can be missing
    from every table near its own key and lookups for its range dead-end.
    """
    rng = rng or random.Random(0)
    ids = list(identities)
    for ident in ids:
        table = tables[ident.key]
        m = min(peers_each, len(ids) - 1)
        picks = rng.sample(range(len(ids)), min(m + 1, len(ids)))
        seen = 0
        for j in picks:
            if ids[j].key == ident.key:
                continue
            if seen == m:
                break
            table.observe(ids[j])
            seen += 1
    # the n XOR-nearest nodes of x lie in the smallest aligned block around x
    # holding more than n nodes, which is a contiguous run in key order
    order = sorted(ids, key=lambda p: p.key)
    keys = [p.key for p in order]
    for ident in ids:
        table = tables[ident.key]
        n = table.k if neighbors is None else neighbors
        x = ident.key
        lo, hi = 0, len(keys)
        for j in range(table.width + 1):
            base = (x >> j) << j
            lo = bisect_left(keys, base)
            hi = bisect_left(keys, base + (1 << j))
            if hi - lo > n:
                break
        block = [p for p in order[lo:hi] if p.key != x]
        for p in sorted(block, key=lambda q: q.key ^ x)[:n]:
            table.observe(p)
