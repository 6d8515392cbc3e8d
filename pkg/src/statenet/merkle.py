"""Binary sparse Merkle trie with leaf compaction and pruned subtrees.

Digest rules, for the subtree rooted at any depth:

* no leaves            -> ``EMPTY`` (32 zero bytes)
* exactly one leaf     -> ``H(0x00 || key || H(value))`` regardless of depth
* two or more leaves   -> ``H(0x01 || left || right)``, children one level down

The tree is stored Patricia-style: a branch lives at the depth where its keys
first differ and unary chains above it are hashed on demand.  A subtree the
owner does not hold is replaced by a :class:`_Pruned` node that only knows its
digest, which is enough to keep the root exact while holding a slice of the
keyspace.  Proofs taken from another trie can be grafted back into pruned
regions, which is how non-owned writes are applied.
"""
from __future__ import annotations

import hashlib
from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence

from .address import byte_len, cpl

Hasher = Callable[[bytes], bytes]

DIGEST_SIZE = 32
EMPTY = bytes(DIGEST_SIZE)
_LEAF = b"\x00"
_NODE = b"\x01"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def blake2b(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()


class NotHeldError(KeyError):
    """The requested key lies in a region this trie does not hold."""


class CannotUpdateError(RuntimeError):
    """A write touches a pruned region and no proof was supplied for it."""


class VerificationError(ValueError):
    """A proof does not match the root it claims."""


def _bit(key: int, i: int, width: int) -> int:
    return (key >> (width - 1 - i)) & 1


def _truncate(key: int, n: int, width: int) -> int:
    """Keep the leading ``n`` bits of ``key``, zero the rest."""
    shift = width - n
    return (key >> shift) << shift


class _Leaf:
    __slots__ = ("key", "vhash", "digest")

    def __init__(self, key: int, vhash: bytes, digest: bytes):
        self.key = key
        self.vhash = vhash
        self.digest = digest


class _Branch:
    __slots__ = ("split", "prefix", "left", "right", "top", "core", "cached")

    def __init__(self, split: int, prefix: int, left, right, top: int):
        self.split = split
        self.prefix = prefix
        self.left = left
        self.right = right
        self.top = top
        self.core: Optional[bytes] = None
        self.cached: Optional[bytes] = None


class _Pruned:
    """Stand-in for an unheld subtree whose digest is known at depth ``known``.

    ``top`` <= ``known``; when they differ the subtree is known to hold two or
    more leaves and the levels in between are a unary chain.
    """

    __slots__ = ("top", "known", "prefix", "known_digest", "kind", "cached")

    def __init__(self, top: int, known: int, prefix: int, digest: bytes, kind: Optional[str]):
        self.top = top
        self.known = known
        self.prefix = prefix
        self.known_digest = digest
        self.kind = kind
        self.cached: Optional[bytes] = None


@dataclass(frozen=True)
class MerkleProof:
    """Inclusion or exclusion proof for ``key``.

    ``siblings[i]`` is the digest beside the path at depth ``i`` (root first);
    ``None`` marks an empty sibling.  The terminal sits at depth
    ``len(siblings)``: the leaf for ``key``, a different leaf sharing the
    path (exclusion), or nothing (``terminal_key is None``, exclusion).
    """

    key: int
    width: int
    siblings: tuple[Optional[bytes], ...]
    terminal_key: Optional[int]
    terminal_vhash: Optional[bytes]
    root: bytes

    @property
    def depth(self) -> int:
        return len(self.siblings)

    @property
    def present(self) -> int:
        return sum(1 for s in self.siblings if s is not None)

    @property
    def is_membership(self) -> bool:
        return self.terminal_key == self.key

    def path(self) -> Iterator[tuple[Optional[bytes], int]]:
        """(sibling digest, direction bit) pairs from leaf to root."""
        for i in range(self.depth - 1, -1, -1):
            yield self.siblings[i], _bit(self.key, i, self.width)

    @property
    def wire_size(self) -> int:
        return proof_wire_size(self.depth, self.present)


def proof_wire_size(depth: int, present: int) -> int:
    """Bytes of the sibling section: u16 count, presence bitmap, digests."""
    return 2 + (depth + 7) // 8 + DIGEST_SIZE * present


def encode_siblings(proof: MerkleProof) -> bytes:
    """Wire form of the sibling section, leaf-to-root order.

    Layout: big-endian u16 sibling count, then one presence byte per 8
    siblings (bit 7 of byte 0 is the sibling nearest the leaf), then the
    32-byte digests of the present siblings in the same order.
    """
    ordered = list(reversed(proof.siblings))
    bitmap = bytearray((len(ordered) + 7) // 8)
    body = bytearray()
    for j, sib in enumerate(ordered):
        if sib is not None:
            bitmap[j // 8] |= 0x80 >> (j % 8)
            body += sib
    return len(ordered).to_bytes(2, "big") + bytes(bitmap) + bytes(body)


def decode_siblings(data: bytes) -> tuple[Optional[bytes], ...]:
    """Inverse of :func:`encode_siblings`; returns siblings root-first."""
    if len(data) < 2:
        raise ValueError("truncated proof header")
    count = int.from_bytes(data[:2], "big")
    nmap = (count + 7) // 8
    bitmap = data[2 : 2 + nmap]
    if len(bitmap) != nmap:
        raise ValueError("truncated presence bitmap")
    pos = 2 + nmap
    out: list[Optional[bytes]] = []
    for j in range(count):
        if bitmap[j // 8] & (0x80 >> (j % 8)):
            digest = data[pos : pos + DIGEST_SIZE]
            if len(digest) != DIGEST_SIZE:
                raise ValueError("truncated digest")
            out.append(bytes(digest))
            pos += DIGEST_SIZE
        else:
            out.append(None)
    if pos != len(data):
        raise ValueError("trailing bytes after proof")
    return tuple(reversed(out))


def leaf_digest(key: int, vhash: bytes, width: int, hasher: Hasher = sha256) -> bytes:
    return hasher(_LEAF + key.to_bytes(byte_len(width), "big") + vhash)


def verify_proof(
    root: bytes,
    leaf_bytes: Optional[bytes],
    proof: MerkleProof,
    hasher: Hasher = sha256,
) -> bool:
    """Check ``proof`` against ``root``.

    With ``leaf_bytes`` the proof must show the key holds exactly those bytes;
    with ``None`` it must show the key is absent.
    """
    width = proof.width
    key = proof.key
    depth = proof.depth
    if depth > width or proof.root != root:
        return False
    if leaf_bytes is not None:
        if proof.terminal_key != key:
            return False
        cur = leaf_digest(key, hasher(leaf_bytes), width, hasher)
        single = True
    elif proof.terminal_key is None:
        cur = EMPTY
        single = False
    else:
        tk = proof.terminal_key
        if tk == key or cpl(tk, key, width) < depth or proof.terminal_vhash is None:
            return False
        cur = leaf_digest(tk, proof.terminal_vhash, width, hasher)
        single = True
    for i in range(depth - 1, -1, -1):
        sib = proof.siblings[i]
        left = not _bit(key, i, width)
        if sib is None:
            if single or cur == EMPTY:
                continue
            cur = hasher(_NODE + (cur + EMPTY if left else EMPTY + cur))
        else:
            cur = hasher(_NODE + (cur + sib if left else sib + cur))
            single = False
    return cur == root


class MerkleTrie:
    """Mutable binary Merkle trie over ``width``-bit keys."""

    def __init__(self, width: int, hasher: Hasher = sha256):
        self.width = width
        self.hasher = hasher
        self._root = None

    # ------------------------------------------------------------ building

    @classmethod
    def from_items(
        cls, width: int, items: Iterable[tuple[int, bytes]], hasher: Hasher = sha256
    ) -> MerkleTrie:
        """Bulk-build from (key, value-hash) pairs; one hash per branch."""
        trie = cls(width, hasher)
        pairs = sorted(items)
        keys = [k for k, _ in pairs]
        for a, b in zip(keys, keys[1:]):
            if a == b:
                raise ValueError(f"duplicate key {a:#x}")
        if keys and keys[-1] >> width:
            raise ValueError("key exceeds trie width")
        vals = [v for _, v in pairs]

        def build(lo: int, hi: int, top: int):
            if hi - lo == 1:
                return trie._leaf(keys[lo], vals[lo])
            k0 = keys[lo]
            s = cpl(k0, keys[hi - 1], width)
            threshold = _truncate(k0, s, width) | (1 << (width - 1 - s))
            mid = bisect_left(keys, threshold, lo, hi)
            return _Branch(s, k0, build(lo, mid, s + 1), build(mid, hi, s + 1), top)

        if keys:
            trie._root = build(0, len(keys), 0)
        return trie

    @classmethod
    def from_root(cls, width: int, root: bytes, hasher: Hasher = sha256) -> MerkleTrie:
        """A trie that knows nothing but its root digest."""
        trie = cls(width, hasher)
        if root != EMPTY:
            trie._root = _Pruned(0, 0, 0, root, None)
        return trie

    def copy(self) -> MerkleTrie:
        out = MerkleTrie(self.width, self.hasher)
        out._root = _clone(self._root)
        return out

    def _leaf(self, key: int, vhash: bytes) -> _Leaf:
        return _Leaf(key, vhash, leaf_digest(key, vhash, self.width, self.hasher))

    # ------------------------------------------------------------- digests

    @property
    def root(self) -> bytes:
        return EMPTY if self._root is None else self._digest(self._root)

    def _digest(self, node) -> bytes:
        if isinstance(node, _Leaf):
            return node.digest
        if node.cached is None:
            if isinstance(node, _Branch):
                node.cached = self._chain(self._core(node), node.prefix, node.split, node.top)
            else:
                node.cached = self._chain(node.known_digest, node.prefix, node.known, node.top)
        return node.cached

    def _core(self, node: _Branch) -> bytes:
        if node.core is None:
            node.core = self.hasher(_NODE + self._digest(node.left) + self._digest(node.right))
        return node.core

    def _chain(self, digest: bytes, prefix: int, start: int, stop: int) -> bytes:
        """Hash a branch-kind digest at depth ``start`` up a unary chain to ``stop``."""
        h = self.hasher
        w = self.width
        for j in range(start - 1, stop - 1, -1):
            if (prefix >> (w - 1 - j)) & 1:
                digest = h(_NODE + EMPTY + digest)
            else:
                digest = h(_NODE + digest + EMPTY)
        return digest

    def _digest_at(self, node, depth: int) -> bytes:
        if isinstance(node, _Leaf):
            return node.digest
        if depth == node.top:
            return self._digest(node)
        if isinstance(node, _Branch):
            return self._chain(self._core(node), node.prefix, node.split, depth)
        return self._chain(node.known_digest, node.prefix, node.known, depth)

    # ------------------------------------------------------------- queries

    def __len__(self) -> int:
        return sum(1 for _ in self._leaves(self._root, strict=False))

    def get(self, key: int) -> Optional[bytes]:
        """Value hash stored at ``key``; ``None`` when provably absent."""
        w = self.width
        node = self._root
        while True:
            if node is None:
                return None
            if isinstance(node, _Leaf):
                return node.vhash if node.key == key else None
            if isinstance(node, _Branch):
                if cpl(key, node.prefix, w) < node.split:
                    return None
                node = node.right if _bit(key, node.split, w) else node.left
                continue
            if min(cpl(key, node.prefix, w), node.known) < node.known:
                return None
            raise NotHeldError(key)

    def holds(self, key: int) -> bool:
        try:
            self.get(key)
        except NotHeldError:
            return False
        return True

    def prove(self, key: int) -> MerkleProof:
        w = self.width
        sibs: list[Optional[bytes]] = []
        node = self._root
        terminal_key = None
        terminal_vhash = None
        while True:
            if node is None:
                break
            if isinstance(node, _Leaf):
                terminal_key, terminal_vhash = node.key, node.vhash
                break
            if isinstance(node, _Branch):
                limit = node.split
            else:
                limit = node.known
            j = min(cpl(key, node.prefix, w), limit)
            if j < limit:
                sibs.extend([None] * (j - len(sibs)))
                sibs.append(self._digest_at(node, j + 1))
                break
            if isinstance(node, _Pruned):
                raise NotHeldError(key)
            sibs.extend([None] * (node.split - len(sibs)))
            if _bit(key, node.split, w):
                sibs.append(self._digest(node.left))
                node = node.right
            else:
                sibs.append(self._digest(node.right))
                node = node.left
        return MerkleProof(key, w, tuple(sibs), terminal_key, terminal_vhash, self.root)

    def digest_at(self, path: int, plen: int) -> bytes:
        """Digest of the subtree whose keys start with the ``plen``-bit ``path``."""
        node, depth = self._locate(path, plen)
        return EMPTY if node is None else self._digest_at(node, plen)

    def kind_at(self, path: int, plen: int) -> str:
        """'empty', 'leaf', 'branch' or 'unknown' for the subtree at (path, plen)."""
        node, _ = self._locate(path, plen)
        return "empty" if node is None else _kind(node, plen)

    def _locate(self, path: int, plen: int):
        """Node whose subtree equals the subtree at (path, plen), or None if empty."""
        w = self.width
        key = path << (w - plen) if plen else 0
        node = self._root
        while node is not None:
            if isinstance(node, _Leaf):
                return (node, plen) if cpl(node.key, key, w) >= plen else (None, plen)
            limit = node.split if isinstance(node, _Branch) else node.known
            j = min(cpl(key, node.prefix, w), limit, plen)
            if j < plen and j < limit:
                return None, plen
            if plen <= limit:
                return node, plen
            if isinstance(node, _Pruned):
                raise NotHeldError(path)
            node = node.right if _bit(key, node.split, w) else node.left
        return None, plen

    def proof_path(self, path: int, plen: int) -> list[Optional[bytes]]:
        """Sibling digests at depths ``0..plen-1`` beside the prefix ``path``."""
        return [d for d, _ in self.proof_path_kinds(path, plen)]

    def proof_path_kinds(self, path: int, plen: int) -> list[tuple[Optional[bytes], Optional[str]]]:
        w = self.width
        key = path << (w - plen) if plen else 0
        out: list[tuple[Optional[bytes], Optional[str]]] = []
        node = self._root
        while len(out) < plen and node is not None:
            if isinstance(node, _Leaf):
                j = cpl(node.key, key, w)
                if j < plen:
                    out.extend([(None, None)] * (j - len(out)))
                    out.append((node.digest, "leaf"))
                break
            limit = node.split if isinstance(node, _Branch) else node.known
            j = min(cpl(key, node.prefix, w), limit)
            if j < limit:
                if j < plen:
                    out.extend([(None, None)] * (j - len(out)))
                    out.append((self._digest_at(node, j + 1), _kind(node, j + 1)))
                break
            if limit >= plen:
                break
            if isinstance(node, _Pruned):
                raise NotHeldError(path)
            out.extend([(None, None)] * (node.split - len(out)))
            if _bit(key, node.split, w):
                sib, node = node.left, node.right
            else:
                sib, node = node.right, node.left
            out.append((self._digest(sib), _kind(sib, len(out) + 1)))
        out.extend([(None, None)] * (plen - len(out)))
        return out

    def items(self, path: int = 0, plen: int = 0) -> Iterator[tuple[int, bytes]]:
        """Leaves under a prefix in key order; raises if any part is pruned."""
        node, _ = self._locate(path, plen)
        for leaf in self._leaves(node, strict=True):
            yield leaf.key, leaf.vhash

    def keys(self) -> list[int]:
        return [leaf.key for leaf in self._leaves(self._root, strict=False)]

    def _leaves(self, node, strict: bool) -> Iterator[_Leaf]:
        stack = [node]
        while stack:
            n = stack.pop()
            if n is None:
                continue
            if isinstance(n, _Leaf):
                yield n
            elif isinstance(n, _Branch):
                stack.append(n.right)
                stack.append(n.left)
            elif strict:
                raise NotHeldError(n.prefix)

    def is_complete(self) -> bool:
        """True when no part of the trie is pruned."""
        stack = [self._root]
        while stack:
            n = stack.pop()
            if isinstance(n, _Pruned):
                return False
            if isinstance(n, _Branch):
                stack.extend((n.left, n.right))
        return True

    # ------------------------------------------------------------ mutation

    def set(self, key: int, vhash: bytes) -> None:
        if key >> self.width:
            raise ValueError("key exceeds trie width")
        self._root = self._set(self._root, 0, key, vhash)

    def _set(self, node, top: int, key: int, vhash: bytes):
        w = self.width
        if node is None:
            return self._leaf(key, vhash)
        if isinstance(node, _Leaf):
            if node.key == key:
                return self._leaf(key, vhash)
            return self._join(top, cpl(key, node.key, w), node, self._leaf(key, vhash), key)
        if isinstance(node, _Branch):
            j = cpl(key, node.prefix, w)
            if j < node.split:
                return self._join(top, j, node, self._leaf(key, vhash), key)
            if _bit(key, node.split, w):
                node.right = self._set(node.right, node.split + 1, key, vhash)
            else:
                node.left = self._set(node.left, node.split + 1, key, vhash)
            node.core = None
            node.cached = None
            return node
        j = min(cpl(key, node.prefix, w), node.known)
        if j < node.known:
            return self._join(top, j, node, self._leaf(key, vhash), key)
        raise CannotUpdateError(f"key {key:#x} lies in a pruned subtree")

    def _join(self, top: int, split: int, existing, leaf: _Leaf, key: int) -> _Branch:
        if not isinstance(existing, _Leaf):
            existing.top = split + 1
            existing.cached = None
        if _bit(key, split, self.width):
            return _Branch(split, key, existing, leaf, top)
        return _Branch(split, key, leaf, existing, top)

    def graft(self, proof: MerkleProof) -> None:
        """Expand pruned regions along ``proof.key`` using ``proof``.

        The proof must be valid against the current root.  Afterwards
        ``get``/``set``/``prove`` work for the key.
        """
        if proof.root != self.root or proof.width != self.width:
            raise VerificationError("proof root does not match trie root")
        self._root = self._graft(self._root, proof)

    def _graft(self, node, proof: MerkleProof):
        w = self.width
        key = proof.key
        if node is None or isinstance(node, _Leaf):
            return node
        if isinstance(node, _Branch):
            if cpl(key, node.prefix, w) < node.split:
                return node
            if _bit(key, node.split, w):
                node.right = self._graft(node.right, proof)
            else:
                node.left = self._graft(node.left, proof)
            return node
        if min(cpl(key, node.prefix, w), node.known) < node.known:
            return node
        built = self._from_proof(proof, node.top)
        got = EMPTY if built is None else self._digest(built)
        if got != self._digest(node):
            raise VerificationError(f"proof for {key:#x} disagrees with pruned digest")
        return built

    def _from_proof(self, proof: MerkleProof, start: int):
        def terminal(_start):
            if proof.terminal_key is None:
                return None
            return self._leaf(proof.terminal_key, proof.terminal_vhash)

        return self._build_path(proof.key, proof.siblings, None, start, terminal)

    def _build_path(self, key: int, sibs, kinds, start: int, terminal):
        """Explicit path from depth ``start`` down to ``len(sibs)`` with pruned siblings."""
        w = self.width
        s = start
        while s < len(sibs) and sibs[s] is None:
            s += 1
        if s >= len(sibs):
            return terminal(start)
        other_prefix = _truncate(key ^ (1 << (w - 1 - s)), s + 1, w)
        skind = kinds[s] if kinds else None
        child = self._build_path(key, sibs, kinds, s + 1, terminal)
        if child is None:
            if skind == "leaf":
                # a lone leaf beside an empty side floats up; its key is unknown here
                return _Pruned(start, start, _truncate(key, start, w), sibs[s], "leaf")
            return _Pruned(start, s + 1, other_prefix, sibs[s], "branch")
        other = _Pruned(s + 1, s + 1, other_prefix, sibs[s], skind)
        if _bit(key, s, w):
            return _Branch(s, key, other, child, start)
        return _Branch(s, key, child, other, start)

    def graft_subtree(
        self,
        path: int,
        plen: int,
        sub: MerkleTrie,
        proof_path: Sequence[tuple[Optional[bytes], Optional[str]]],
    ) -> None:
        """Replace the pruned region containing (path, plen) with ``sub``'s subtree there.

        ``proof_path`` gives the sibling digests and kinds above the subtree.
        The rebuilt region must hash to the digest already known for it.
        """
        if len(proof_path) != plen or sub.width != self.width:
            raise ValueError("proof path length must equal the prefix length")
        w = self.width
        key = path << (w - plen) if plen else 0
        sibs = [d for d, _ in proof_path]
        kinds = [k for _, k in proof_path]
        found, _ = sub._locate(path, plen)

        def terminal(start):
            node = _clone(found)
            if node is not None and not isinstance(node, _Leaf):
                node.top = start
                node.cached = None
            return node

        def walk(node, top):
            if node is None:
                if self._build_path(key, sibs, kinds, top, terminal) is not None:
                    raise VerificationError("snapshot disagrees with an empty region")
                return None
            if isinstance(node, _Leaf):
                return node
            if isinstance(node, _Branch):
                if cpl(key, node.prefix, w) < min(node.split, plen):
                    return node
                if node.split >= plen:
                    return self._replace(node, key, sibs, kinds, node.top, terminal)
                if _bit(key, node.split, w):
                    node.right = walk(node.right, node.split + 1)
                else:
                    node.left = walk(node.left, node.split + 1)
                node.core = None
                node.cached = None
                return node
            if cpl(key, node.prefix, w) < min(node.known, plen):
                return node
            return self._replace(node, key, sibs, kinds, node.top, terminal)

        self._root = walk(self._root, 0)

    def _replace(self, node, key, sibs, kinds, top, terminal):
        built = self._build_path(key, sibs, kinds, top, terminal)
        got = EMPTY if built is None else self._digest(built)
        if got != self._digest(node):
            raise VerificationError("grafted subtree disagrees with the known digest")
        return built

    def prune(self, keep_regions: Sequence[tuple[int, int]], keep_keys: Iterable[int] = ()) -> None:
        """Collapse every branch that holds no kept region or kept key.

        Collapsed branches keep their split depth, so the trie still knows
        which side of every kept path they sit on.
        """
        regions = [(path << (self.width - plen) if plen else 0, plen) for path, plen in keep_regions]
        self._root, _ = self._prune(self._root, regions, set(keep_keys), 0)

    def _prune(self, node, regions, keep: set, top: int):
        w = self.width
        if node is None or isinstance(node, _Pruned):
            return node, False
        if isinstance(node, _Leaf):
            return node, node.key in keep or any(cpl(node.key, k, w) >= p for k, p in regions)
        split = node.split
        touched = False
        for k, p in regions:
            if cpl(node.prefix, k, w) >= min(p, split):
                if p <= split:
                    return node, True
                touched = True
        node.left, kl = self._prune(node.left, regions, keep, split + 1)
        node.right, kr = self._prune(node.right, regions, keep, split + 1)
        if touched or kl or kr:
            return node, True
        collapsed = _Pruned(top, split, _truncate(node.prefix, split, w), self._core(node), "branch")
        return collapsed, False

    def subtrie(self, path: int, plen: int) -> MerkleTrie:
        """Copy holding only the subtree at (path, plen) plus the proof path to it."""
        out = self.copy()
        out.prune([(path, plen)])
        return out


def _kind(node, depth: int) -> Optional[str]:
    if isinstance(node, _Leaf):
        return "leaf"
    if isinstance(node, _Branch) or depth < node.known:
        return "branch"
    return node.kind


def _clone(node):
    if node is None or isinstance(node, _Leaf):
        return node
    if isinstance(node, _Branch):
        out = _Branch(node.split, node.prefix, _clone(node.left), _clone(node.right), node.top)
        out.core = node.core
        out.cached = node.cached
        return out
    out = _Pruned(node.top, node.known, node.prefix, node.known_digest, node.kind)
    out.cached = node.cached
    return out


def fold_path(
    digest: bytes,
    kind: str,
    path: int,
    siblings: Sequence[Optional[bytes]],
    width: int,
    hasher: Hasher = sha256,
    sibling_kinds: Optional[Sequence[Optional[str]]] = None,
) -> bytes:
    """Combine a subtree digest at depth ``len(siblings)`` with its proof path.

    ``kind`` is the subtree's kind ('empty', 'leaf' or 'branch').  An empty
    subtree beside a single-leaf sibling passes the sibling through, so
    ``sibling_kinds`` is consulted in that one case.
    """
    plen = len(siblings)
    key = path << (width - plen) if plen else 0
    cur = digest
    single = kind == "leaf"
    empty = kind == "empty"
    for i in range(plen - 1, -1, -1):
        sib = siblings[i]
        left = not _bit(key, i, width)
        if sib is None:
            if single or empty:
                continue
            cur = hasher(_NODE + (cur + EMPTY if left else EMPTY + cur))
        elif empty:
            skind = sibling_kinds[i] if sibling_kinds else None
            if skind == "leaf":
                cur, single, empty = sib, True, False
            else:
                cur = hasher(_NODE + (cur + sib if left else sib + cur))
                empty = False
        else:
            cur = hasher(_NODE + (cur + sib if left else sib + cur))
            single = False
    return cur
