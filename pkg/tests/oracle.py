"""Brute-force reference models used as test oracles.

Deliberately naive: a full binary trie recomputed from a flat dict at every
query, with no compaction, caching or pruning.
"""
from __future__ import annotations

import hashlib
from typing import Optional

EMPTY = bytes(32)


def H(b: bytes) -> bytes:
    return hashlib.sha256(b).digest()


def leaf(key: int, vhash: bytes, width: int) -> bytes:
    return H(b"\x00" + key.to_bytes((width + 7) // 8, "big") + vhash)


def subtree_digest(items: dict[int, bytes], width: int, path: int = 0, depth: int = 0) -> bytes:
    """Digest of the subtree at (path, depth) over ``items`` (key -> value hash)."""
    shift = width - depth
    inside = [k for k in items if (k >> shift if depth else 0) == path]
    if not inside:
        return EMPTY
    if len(inside) == 1:
        k = inside[0]
        return leaf(k, items[k], width)
    sub = {k: items[k] for k in inside}
    left = subtree_digest(sub, width, path << 1, depth + 1)
    right = subtree_digest(sub, width, (path << 1) | 1, depth + 1)
    return H(b"\x01" + left + right)


def root(items: dict[int, bytes], width: int) -> bytes:
    return subtree_digest(items, width)


def member(items: dict[int, bytes], key: int) -> Optional[bytes]:
    for k, v in items.items():
        if k == key:
            return v
    return None
