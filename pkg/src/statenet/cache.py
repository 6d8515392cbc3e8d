"""Byte-capacity most-frequently-used cache, split into header/slot/code segments.

Frequencies are exact and survive eviction (a key that keeps coming back
accumulates count even while not resident).  Eviction picks the lowest
frequency, then the least recently accessed.  An entry is admitted only if
every victim it would displace is no more frequent than itself.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional

SEGMENTS = ("header", "slot", "code")
MERKLE = "merkle"
VERKLE = "verkle"


@dataclass
class TouchResult:
    hit: bool
    admitted: bool = False
    bypass: bool = False
    evicted: list = field(default_factory=list)


class FrequencyCache:
    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self.used = 0
        self.freq: dict[Hashable, int] = {}
        self._size: dict[Hashable, int] = {}
        self._tick: dict[Hashable, int] = {}
        self._heap: list[tuple[int, int, Hashable]] = []
        self._clock = 0
        self.hits = 0
        self.misses = 0
        self.bypasses = 0

    def __contains__(self, key: Hashable) -> bool:
        return key in self._size

    def __len__(self) -> int:
        return len(self._size)

    def keys(self):
        return self._size.keys()

    def size_of(self, key: Hashable) -> int:
        return self._size[key]

    def _push(self, key: Hashable) -> None:
        heapq.heappush(self._heap, (self.freq[key], self._tick[key], key))
        if len(self._heap) > 4 * len(self._size) + 64:
            self._heap = [(self.freq[k], self._tick[k], k) for k in self._size]
            heapq.heapify(self._heap)

    def _live(self, item: tuple[int, int, Hashable]) -> bool:
        f, t, k = item
        return k in self._size and self.freq[k] == f and self._tick[k] == t

    def touch(self, key: Hashable, nbytes: int) -> TouchResult:
        """Count an access and admit or refresh ``key`` at ``nbytes``."""
        if nbytes <= 0:
            raise ValueError("entry size must be positive")
        self._clock += 1
        self.freq[key] = self.freq.get(key, 0) + 1
        self._tick[key] = self._clock
        if key in self._size:
            self.hits += 1
            delta = nbytes - self._size[key]
            if delta > 0 and self.used + delta > self.capacity:
                # grew beyond what fits: treat as a fresh admission
                self._drop(key)
                res = self._admit(key, nbytes)
                res.hit = True
                return res
            self._size[key] = nbytes
            self.used += delta
            self._push(key)
            return TouchResult(hit=True, admitted=True)
        self.misses += 1
        return self._admit(key, nbytes)

    def _admit(self, key: Hashable, nbytes: int) -> TouchResult:
        if nbytes > self.capacity:
            self.bypasses += 1
            return TouchResult(hit=False, bypass=True)
        mine = self.freq[key]
        victims = []
        freed = 0
        need = self.used + nbytes - self.capacity
        refused = False
        while freed < need:
            item = heapq.heappop(self._heap)
            if not self._live(item):
                continue
            victims.append(item)
            if item[0] > mine:
                refused = True
                break
            freed += self._size[item[2]]
        if refused:
            for item in victims:
                heapq.heappush(self._heap, item)
            return TouchResult(hit=False)
        evicted = []
        for _, _, k in victims:
            self.used -= self._size.pop(k)
            evicted.append(k)
        self._size[key] = nbytes
        self.used += nbytes
        self._push(key)
        return TouchResult(hit=False, admitted=True, evicted=evicted)

    def _drop(self, key: Hashable) -> None:
        self.used -= self._size.pop(key)

    def discard(self, key: Hashable) -> bool:
        if key in self._size:
            self._drop(key)
            return True
        return False

    def prewarm(self, entries: Iterable[tuple[Hashable, int, int]]) -> None:
        """Load (key, bytes, frequency) entries, most frequent first, while they fit."""
        for key, nbytes, f in sorted(entries, key=lambda e: -e[2]):
            self.freq[key] = max(self.freq.get(key, 0), f)
            if key in self._size or nbytes > self.capacity - self.used:
                continue
            self._clock += 1
            self._tick[key] = self._clock
            self._size[key] = nbytes
            self.used += nbytes
            self._push(key)

    def check(self) -> None:
        assert self.used == sum(self._size.values())
        assert self.used <= self.capacity


class SegmentedCache:
    """Three independent frequency caches with mode-dependent byte charging.

    Merkle mode charges data plus proof bytes because proofs are kept to
    serve peers; Verkle mode charges data only.
    """

    def __init__(self, capacities: dict[str, int], mode: str = MERKLE):
        if mode not in (MERKLE, VERKLE):
            raise ValueError(f"unknown mode {mode!r}")
        unknown = set(capacities) - set(SEGMENTS)
        if unknown:
            raise ValueError(f"unknown cache segments {sorted(unknown)}")
        self.mode = mode
        self.segments = {s: FrequencyCache(capacities.get(s, 0)) for s in SEGMENTS}

    @classmethod
    def disabled(cls, mode: str = MERKLE) -> SegmentedCache:
        return cls({s: 0 for s in SEGMENTS}, mode)

    def charge(self, data_bytes: int, proof_bytes: int = 0) -> int:
        return data_bytes + (proof_bytes if self.mode == MERKLE else 0)

    def touch(self, segment: str, key: Hashable, data_bytes: int, proof_bytes: int = 0) -> TouchResult:
        return self.segments[segment].touch(key, self.charge(data_bytes, proof_bytes))

    def contains(self, segment: str, key: Hashable) -> bool:
        return key in self.segments[segment]

    def discard(self, segment: str, key: Hashable) -> bool:
        return self.segments[segment].discard(key)

    @property
    def capacity(self) -> int:
        return sum(c.capacity for c in self.segments.values())

    @property
    def used(self) -> int:
        return sum(c.used for c in self.segments.values())

    def check(self) -> None:
        for c in self.segments.values():
            c.check()

    def stats(self) -> dict[str, dict[str, int]]:
        return {
            s: {"hits": c.hits, "misses": c.misses, "bypasses": c.bypasses, "used": c.used, "entries": len(c)}
            for s, c in self.segments.items()
        }


def split_capacity(total: int, weights: dict[str, float]) -> dict[str, int]:
    """Divide ``total`` bytes across segments in proportion to ``weights``."""
    norm = sum(weights.get(s, 0.0) for s in SEGMENTS)
    if norm <= 0:
        return {s: 0 for s in SEGMENTS}
    return {s: int(total * weights.get(s, 0.0) / norm) for s in SEGMENTS}


def optional_cache(capacities: Optional[dict[str, int]], mode: str) -> SegmentedCache:
    return SegmentedCache.disabled(mode) if not capacities else SegmentedCache(capacities, mode)
