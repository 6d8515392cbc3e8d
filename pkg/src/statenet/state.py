"""Prefix-owned partial state: account trie slice, slot tries, deduplicated code.

A node holds every account whose trie key shares its first ``prefix_len`` bits
with ``prefix_path``; outside that range it keeps only the digests needed to
recompute the global root (the proof path), plus whatever remote records it
has admitted after verifying their proofs.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

from .address import cpl
from .merkle import (
    EMPTY,
    CannotUpdateError,
    Hasher,
    MerkleProof,
    MerkleTrie,
    NotHeldError,
    VerificationError,
    fold_path,
    sha256,
    verify_proof,
)

EXTERNAL = "external"
CONTRACT = "contract"
HEADER_BYTES = {EXTERNAL: 60, CONTRACT: 124}
SLOT_VALUE_BYTES = 32
ZERO_SLOT = bytes(SLOT_VALUE_BYTES)


@dataclass(frozen=True)
class AccountRecord:
    address: int
    kind: str = EXTERNAL
    nonce: int = 0
    balance: int = 0
    storage_root: bytes = EMPTY
    code_hash: Optional[bytes] = None

    def encode(self) -> bytes:
        tag = b"C" if self.kind == CONTRACT else b"E"
        body = tag + self.nonce.to_bytes(8, "big") + self.balance.to_bytes(16, "big")
        if self.kind == CONTRACT:
            body += self.storage_root + (self.code_hash or EMPTY)
        return body

    @property
    def charged_bytes(self) -> int:
        return HEADER_BYTES[self.kind]


@dataclass(frozen=True)
class SlotRecord:
    key: int
    value: bytes

    def __post_init__(self) -> None:
        if len(self.value) != SLOT_VALUE_BYTES:
            raise ValueError("slot values are exactly 32 bytes")


@dataclass(frozen=True)
class AccountWrite:
    address: int
    nonce: Optional[int] = None
    balance: Optional[int] = None


@dataclass(frozen=True)
class SlotWrite:
    address: int
    key: int
    value: bytes


Write = Union[AccountWrite, SlotWrite]


@dataclass
class AccountBundle:
    """Account record with proofs, as served to a peer.

    ``record`` is ``None`` for an account proven absent.  ``slots`` pairs each
    returned slot (``None`` when absent) with its proof against the record's
    storage root.
    """

    address: int
    record: Optional[AccountRecord]
    proof: MerkleProof
    slots: list[tuple[int, Optional[bytes], MerkleProof]] = field(default_factory=list)
    code: Optional[bytes] = None
    missing_slots: list[int] = field(default_factory=list)

    def verify(self, root: bytes, hasher: Hasher = sha256) -> bool:
        leaf = None if self.record is None else self.record.encode()
        if self.proof.key != self.address or not verify_proof(root, leaf, self.proof, hasher):
            return False
        if self.record is None:
            return not self.slots and self.code is None
        sroot = self.record.storage_root
        for key, value, proof in self.slots:
            if proof.key != key or not verify_proof(sroot, value, proof, hasher):
                return False
        if self.code is not None and hasher(self.code) != self.record.code_hash:
            return False
        return True


@dataclass
class Snapshot:
    """All leaves under ``path`` plus the proof path that ties them to ``root``."""

    path: int
    plen: int
    width: int
    root: bytes
    records: list[AccountRecord]
    slots: dict[int, dict[int, bytes]]
    code: dict[bytes, bytes]
    proof_path: list[tuple[Optional[bytes], Optional[str]]]

    def subtree(self, hasher: Hasher = sha256) -> MerkleTrie:
        return MerkleTrie.from_items(self.width, ((r.address, hasher(r.encode())) for r in self.records), hasher)

    def verify(self, root: Optional[bytes] = None, hasher: Hasher = sha256) -> bool:
        root = self.root if root is None else root
        w = self.width
        for r in self.records:
            if self.plen and r.address >> (w - self.plen) != self.path:
                return False
            if r.kind == CONTRACT:
                slot_trie = MerkleTrie.from_items(
                    w, ((k, hasher(v)) for k, v in self.slots.get(r.address, {}).items()), hasher
                )
                if slot_trie.root != r.storage_root:
                    return False
                if r.code_hash is not None and r.code_hash not in self.code:
                    return False
        sub = self.subtree(hasher)
        digest = sub.digest_at(self.path, self.plen)
        kind = sub.kind_at(self.path, self.plen)
        sibs = [d for d, _ in self.proof_path]
        kinds = [k for _, k in self.proof_path]
        return fold_path(digest, kind, self.path, sibs, w, hasher, kinds) == root

    @property
    def leaf_count(self) -> int:
        return len(self.records)


class CodeStore:
    """Code blobs keyed by hash, stored once however many accounts use them."""

    def __init__(self) -> None:
        self._blobs: dict[bytes, bytes] = {}
        self._refs: dict[bytes, int] = defaultdict(int)

    def add(self, code_hash: bytes, blob: bytes) -> None:
        self._blobs.setdefault(code_hash, blob)
        self._refs[code_hash] += 1

    def release(self, code_hash: bytes) -> None:
        self._refs[code_hash] -= 1
        if self._refs[code_hash] <= 0:
            self._refs.pop(code_hash, None)
            self._blobs.pop(code_hash, None)

    def get(self, code_hash: bytes) -> Optional[bytes]:
        return self._blobs.get(code_hash)

    def __contains__(self, code_hash: bytes) -> bool:
        return code_hash in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)

    @property
    def stored_bytes(self) -> int:
        return sum(len(b) for b in self._blobs.values())

    def copy(self) -> CodeStore:
        out = CodeStore()
        out._blobs = dict(self._blobs)
        out._refs = defaultdict(int, self._refs)
        return out


class PartialState:
    """Authenticated slice of global state owned under a key prefix."""

    def __init__(
        self,
        width: int,
        prefix_path: int,
        prefix_len: int,
        accounts: MerkleTrie,
        records: dict[int, AccountRecord],
        slot_tries: dict[int, MerkleTrie],
        slot_values: dict[int, dict[int, bytes]],
        code: CodeStore,
        hasher: Hasher = sha256,
    ):
        self.width = width
        self.prefix_path = prefix_path
        self.prefix_len = prefix_len
        self.accounts = accounts
        self.records = records
        self.slot_tries = slot_tries
        self.slot_values = slot_values
        self.code = code
        self.hasher = hasher
        self.verified_remote = 0
        self.unverified_used = 0
        self.syncing = False  # while True the node owns nothing and validates statelessly

    # -------------------------------------------------------- construction

    @classmethod
    def genesis(
        cls,
        width: int,
        records: Iterable[AccountRecord],
        slots: Optional[Mapping[int, Mapping[int, bytes]]] = None,
        code: Optional[Mapping[bytes, bytes]] = None,
        hasher: Hasher = sha256,
    ) -> PartialState:
        """Full state (prefix length 0); storage roots are recomputed from ``slots``."""
        slots = slots or {}
        code = code or {}
        recs: dict[int, AccountRecord] = {}
        slot_tries: dict[int, MerkleTrie] = {}
        slot_values: dict[int, dict[int, bytes]] = {}
        store = CodeStore()
        for r in records:
            if r.address >> width:
                raise ValueError(f"account {r.address:#x} exceeds width {width}")
            if r.kind == CONTRACT:
                values = dict(slots.get(r.address, {}))
                trie = MerkleTrie.from_items(width, ((k, hasher(v)) for k, v in values.items()), hasher)
                slot_tries[r.address] = trie
                slot_values[r.address] = values
                r = replace(r, storage_root=trie.root)
                if r.code_hash is not None:
                    if r.code_hash not in code:
                        raise ValueError(f"missing code for {r.address:#x}")
                    store.add(r.code_hash, code[r.code_hash])
            recs[r.address] = r
        trie = MerkleTrie.from_items(width, ((a, hasher(r.encode())) for a, r in recs.items()), hasher)
        return cls(width, 0, 0, trie, recs, slot_tries, slot_values, store, hasher)

    def restrict(self, prefix_path: int, prefix_len: int) -> PartialState:
        """Copy holding only the accounts under ``prefix_path/prefix_len``."""
        if prefix_len < self.prefix_len or not self._in_owned(prefix_path, prefix_len):
            raise NotHeldError(prefix_path)
        trie = self.accounts.subtrie(prefix_path, prefix_len)
        w = self.width
        keep = {a: r for a, r in self.records.items() if cpl(a, prefix_path << (w - prefix_len), w) >= prefix_len}
        store = CodeStore()
        for r in keep.values():
            if r.code_hash is not None:
                store.add(r.code_hash, self.code.get(r.code_hash))
        return PartialState(
            w,
            prefix_path,
            prefix_len,
            trie,
            keep,
            {a: self.slot_tries[a].copy() for a in keep if a in self.slot_tries},
            {a: dict(self.slot_values[a]) for a in keep if a in self.slot_values},
            store,
            self.hasher,
        )

    @classmethod
    def empty(cls, width: int, prefix_path: int, prefix_len: int, root: bytes, hasher: Hasher = sha256) -> PartialState:
        """A node that knows only the current root (joins and syncs later)."""
        return cls(width, prefix_path, prefix_len, MerkleTrie.from_root(width, root, hasher), {}, {}, {}, CodeStore(), hasher)

    # ------------------------------------------------------------- queries

    @property
    def global_root(self) -> bytes:
        return self.accounts.root

    @property
    def owned_key(self) -> int:
        return self.prefix_path << (self.width - self.prefix_len) if self.prefix_len else 0

    def owns(self, address: int) -> bool:
        if self.syncing:
            return False
        return cpl(address, self.owned_key, self.width) >= self.prefix_len

    def holds(self, address: int) -> bool:
        """Owned, or a remote record admitted and still resident."""
        return address in self.records or (self.owns(address) and self.accounts.holds(address))

    def holds_slot(self, address: int, key: int) -> bool:
        if self.owns(address):
            return True
        return key in self.slot_values.get(address, {})

    def holds_code(self, code_hash: bytes) -> bool:
        return code_hash in self.code

    def _in_owned(self, path: int, plen: int) -> bool:
        if plen < self.prefix_len:
            return False
        return plen == 0 or path >> (plen - self.prefix_len) == self.prefix_path if self.prefix_len else True

    def proof_path(self) -> list[Optional[bytes]]:
        return self.accounts.proof_path(self.prefix_path, self.prefix_len)

    def subtree_root(self) -> bytes:
        return self.accounts.digest_at(self.prefix_path, self.prefix_len)

    def check_proof_path(self) -> bool:
        """Subtree root folded with the proof path reproduces the global root."""
        sk = self.accounts.proof_path_kinds(self.prefix_path, self.prefix_len)
        digest = self.subtree_root()
        kind = self.accounts.kind_at(self.prefix_path, self.prefix_len)
        folded = fold_path(
            digest, kind, self.prefix_path, [d for d, _ in sk], self.width, self.hasher, [k for _, k in sk]
        )
        return folded == self.global_root

    def get_with_proof(self, address: int, slot_keys: Optional[Iterable[int]] = None) -> AccountBundle:
        """Record, account proof, slot records with proofs, and code.

        ``slot_keys=None`` returns every slot of the contract.  Raises
        :class:`NotHeldError` when the account is neither owned nor cached.
        """
        if not self.holds(address):
            raise NotHeldError(address)
        record = self.records.get(address)
        proof = self.accounts.prove(address)
        bundle = AccountBundle(address, record, proof)
        if record is None or record.kind != CONTRACT:
            return bundle
        trie = self.slot_tries.get(address)
        values = self.slot_values.get(address, {})
        owned = self.owns(address)
        if slot_keys is None:
            if not owned:
                raise NotHeldError(address)
            slot_keys = sorted(values)
        for key in slot_keys:
            if trie is None or (not owned and key not in values):
                bundle.missing_slots.append(key)
                continue
            try:
                sproof = trie.prove(key)
            except NotHeldError:
                bundle.missing_slots.append(key)
                continue
            bundle.slots.append((key, values.get(key), sproof))
        if record.code_hash is not None:
            bundle.code = self.code.get(record.code_hash)
        return bundle

    def read_account(self, address: int) -> Optional[AccountRecord]:
        if not self.holds(address):
            raise NotHeldError(address)
        return self.records.get(address)

    def read_slot(self, address: int, key: int) -> bytes:
        if not self.holds_slot(address, key):
            raise NotHeldError((address, key))
        return self.slot_values.get(address, {}).get(key, ZERO_SLOT)

    def measure_proof_size(self, address: int) -> int:
        """Wire bytes of the account proof: 32 per present sibling plus framing."""
        if not self.holds(address):
            raise NotHeldError(address)
        return self.accounts.prove(address).wire_size

    @property
    def stored_bytes(self) -> int:
        """Charged bytes held locally: headers, 64 per slot, code once per hash."""
        total = sum(r.charged_bytes for r in self.records.values())
        total += sum(64 * len(v) for v in self.slot_values.values())
        return total + self.code.stored_bytes

    # ------------------------------------------------------ remote records

    def admit(self, bundle: AccountBundle, slots: Optional[Iterable[int]] = None) -> None:
        """Verify a served bundle against the current root and keep its data.

        ``slots`` limits which of the bundle's slots are kept (default all).
        Code is not stored here; callers manage cached code in ``self.code``.
        """
        if not bundle.verify(self.global_root, self.hasher):
            raise VerificationError(f"bundle for {bundle.address:#x} does not verify")
        self.verified_remote += 1 + len(bundle.slots)
        addr = bundle.address
        if not self.accounts.holds(addr):
            self.accounts.graft(bundle.proof)
        if bundle.record is None or self.owns(addr):
            return
        record = bundle.record
        self.records[addr] = record
        if record.kind != CONTRACT:
            return
        trie = self.slot_tries.get(addr)
        if trie is None or trie.root != record.storage_root:
            trie = MerkleTrie.from_root(self.width, record.storage_root, self.hasher)
            self.slot_tries[addr] = trie
            self.slot_values[addr] = {}
        values = self.slot_values[addr]
        wanted = None if slots is None else set(slots)
        for key, value, sproof in bundle.slots:
            if wanted is not None and key not in wanted:
                continue
            if not trie.holds(key):
                trie.graft(sproof)
            values[key] = ZERO_SLOT if value is None else value

    def forget(self, address: int) -> None:
        """Drop a non-owned record and its slots (cache eviction)."""
        if self.owns(address):
            return
        self.records.pop(address, None)
        self.slot_tries.pop(address, None)
        self.slot_values.pop(address, None)

    def forget_slot(self, address: int, key: int) -> None:
        if not self.owns(address):
            self.slot_values.get(address, {}).pop(key, None)

    def compact(self) -> None:
        """Prune trie regions that back no owned or resident record."""
        self.accounts.prune([(self.prefix_path, self.prefix_len)], self.records.keys())
        for addr, trie in self.slot_tries.items():
            if not self.owns(addr):
                trie.prune([], self.slot_values.get(addr, {}).keys())

    # ---------------------------------------------------------- block writes

    def apply_block_writes(
        self,
        writes: Sequence[Write],
        touched: Iterable[AccountBundle] = (),
        retain: Optional[Mapping[int, Iterable[int]]] = None,
    ) -> bytes:
        """Apply a block's writes in order and return the new global root.

        Every written account must be owned, already held, or covered by a
        bundle in ``touched`` whose proofs verify against the pre-block root.
        All proofs are checked before any value changes.

        ``retain`` maps each non-owned account to keep afterwards to the slot
        keys to keep with it; other non-owned records are dropped.  By default
        the currently held records are kept and nothing new is added.
        """
        pre_root = self.global_root
        remote: dict[int, AccountBundle] = {}
        for bundle in touched:
            if not bundle.verify(pre_root, self.hasher):
                raise VerificationError(f"pre-state proof for {bundle.address:#x} does not verify")
            remote[bundle.address] = bundle
            self.verified_remote += 1 + len(bundle.slots)
        if retain is None:
            retain = {a: tuple(self.slot_values.get(a, ())) for a in self.records if not self.owns(a)}
        retain = {a: set(ks) for a, ks in retain.items() if not self.owns(a)}
        missing = [a for a in retain if a not in self.records and a not in remote]
        if missing:
            raise CannotUpdateError(f"cannot retain {missing[0]:#x} without its proof")

        by_account: dict[int, list[Write]] = {}
        for w in writes:
            by_account.setdefault(w.address, []).append(w)
        for a in retain:
            by_account.setdefault(a, [])

        plans = []
        for addr, ws in by_account.items():
            owned = self.owns(addr)
            local = owned or addr in self.records
            if not local and addr not in remote:
                raise CannotUpdateError(f"no proof for unowned account {addr:#x}")
            bundle = remote.get(addr)
            record = self.records.get(addr) if local else bundle.record
            slot_writes = [w for w in ws if isinstance(w, SlotWrite)]
            if slot_writes and (record is None or record.kind != CONTRACT):
                raise CannotUpdateError(f"slot write to non-contract {addr:#x}")
            trie = None
            values: dict[int, bytes] = {}
            if record is not None and record.kind == CONTRACT:
                if owned:
                    trie = self.slot_tries[addr]
                    values = self.slot_values[addr]
                else:
                    old = self.slot_tries.get(addr) if local else None
                    if old is not None and old.root == record.storage_root:
                        trie = old.copy()
                        values = dict(self.slot_values.get(addr, {}))
                    else:
                        trie = MerkleTrie.from_root(self.width, record.storage_root, self.hasher)
                    if bundle is not None:
                        for k, v, sproof in bundle.slots:
                            if not trie.holds(k):
                                trie.graft(sproof)
                            values.setdefault(k, ZERO_SLOT if v is None else v)
                for sw in slot_writes:
                    if not trie.holds(sw.key):
                        raise CannotUpdateError(f"no proof for slot {sw.key:#x} of {addr:#x}")
            if not self.accounts.holds(addr):
                self.accounts.graft(bundle.proof)
            plans.append((addr, ws, record, trie, values))

        for addr, ws, record, trie, values in plans:
            if not ws and addr in self.records:
                if not self.owns(addr):
                    keep = retain[addr]
                    self.slot_values[addr] = {k: v for k, v in values.items() if k in keep}
                    if trie is not None:
                        self.slot_tries[addr] = trie
                continue
            if record is None:
                record = AccountRecord(addr)
            for w in ws:
                if isinstance(w, AccountWrite):
                    record = replace(
                        record,
                        nonce=record.nonce if w.nonce is None else w.nonce,
                        balance=record.balance if w.balance is None else w.balance,
                    )
                else:
                    trie.set(w.key, self.hasher(w.value))
                    values[w.key] = w.value
            if trie is not None:
                record = replace(record, storage_root=trie.root)
            if ws:
                self.accounts.set(addr, self.hasher(record.encode()))
            if self.owns(addr):
                self.records[addr] = record
            elif addr in retain:
                keep = retain[addr]
                self.records[addr] = record
                if trie is not None:
                    self.slot_tries[addr] = trie
                    self.slot_values[addr] = {k: v for k, v in values.items() if k in keep}
        for addr in [a for a in self.records if not self.owns(a) and a not in retain]:
            self.forget(addr)
        self.compact()
        return self.global_root

    # -------------------------------------------------------------- sync

    def subtree_snapshot(self, path: int, plen: int) -> Snapshot:
        if not self._in_owned(path, plen):
            raise NotHeldError(path)
        w = self.width
        key = path << (w - plen) if plen else 0
        records = [self.records[a] for a, _ in self.accounts.items(path, plen)]
        slots = {r.address: dict(self.slot_values.get(r.address, {})) for r in records if r.kind == CONTRACT}
        code = {}
        for r in records:
            if r.code_hash is not None:
                code[r.code_hash] = self.code.get(r.code_hash)
        assert all(cpl(r.address, key, w) >= plen for r in records)
        return Snapshot(
            path, plen, w, self.global_root, records, slots, code, self.accounts.proof_path_kinds(path, plen)
        )

    def load_snapshot(self, snap: Snapshot, replay: Sequence[tuple[Sequence[Write], Sequence[AccountBundle]]] = ()) -> None:
        """Install a verified snapshot, replaying later blocks on top of it.

        ``replay`` holds (writes, touched bundles) for every block applied to
        the network after the snapshot's root, oldest first.
        """
        if not snap.verify(hasher=self.hasher):
            raise VerificationError("snapshot does not verify against its root")
        if not self._in_owned(snap.path, snap.plen):
            raise NotHeldError(snap.path)
        w = self.width
        temp = PartialState.empty(w, snap.path, snap.plen, snap.root, self.hasher)
        sub = snap.subtree(self.hasher)
        temp.accounts.graft_subtree(snap.path, snap.plen, sub, snap.proof_path)
        for r in snap.records:
            temp.records[r.address] = r
            if r.kind == CONTRACT:
                values = dict(snap.slots.get(r.address, {}))
                temp.slot_values[r.address] = values
                temp.slot_tries[r.address] = MerkleTrie.from_items(
                    w, ((k, self.hasher(v)) for k, v in values.items()), self.hasher
                )
                if r.code_hash is not None:
                    temp.code.add(r.code_hash, snap.code[r.code_hash])
        for writes, bundles in replay:
            temp.apply_block_writes(writes, [b for b in bundles if not temp.holds(b.address)])
        if temp.global_root != self.global_root:
            raise VerificationError("replayed snapshot does not reach the current root")
        fresh = temp.accounts.subtrie(snap.path, snap.plen)
        self.accounts.graft_subtree(
            snap.path, snap.plen, fresh, fresh.proof_path_kinds(snap.path, snap.plen)
        )
        for addr, r in temp.records.items():
            if temp.owns(addr):
                self.records[addr] = r
                if r.kind == CONTRACT:
                    self.slot_tries[addr] = temp.slot_tries[addr]
                    self.slot_values[addr] = temp.slot_values[addr]
                    if r.code_hash is not None:
                        self.code.add(r.code_hash, temp.code.get(r.code_hash))

    def diff_hashes(self, path: int, plen: int) -> tuple[bytes, tuple[bytes, bytes], tuple[str, str]]:
        """Digest at ``path`` and of both children, with the children's kinds."""
        if not self._in_owned(path, plen):
            raise NotHeldError(path)
        if plen >= self.width:
            raise ValueError("path already addresses a single key")
        a = self.accounts
        children = ((path << 1, plen + 1), ((path << 1) | 1, plen + 1))
        digests = tuple(a.digest_at(p, n) for p, n in children)
        kinds = tuple(a.kind_at(p, n) for p, n in children)
        return a.digest_at(path, plen), digests, kinds

    def owned_items(self) -> Iterator[tuple[int, bytes]]:
        return self.accounts.items(self.prefix_path, self.prefix_len)
