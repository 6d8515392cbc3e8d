"""Validator node: block proposal, gossip, missing-state pull, verification, execution, caching.

Nodes are event handlers driven by the simulator.  Everything a node
executes that it does not own arrives as an :class:`AccountBundle` whose
proofs are checked against the block's parent root first.  Proofs served
for a block are always pinned to that block's parent root: a node keeps a
per-block witness (pre-state bundles for every touched account) and answers
requests for the block from it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

from .address import NodeIdentity
from .cache import MERKLE, SegmentedCache, optional_cache
from .chain import (
    EXEC_CODE,
    READ_ACCOUNT,
    READ_SLOT,
    WRITE_ACCOUNT,
    WRITE_SLOT,
    AccessTraceLog,
    Block,
    StateList,
    Transaction,
    state_list_from_log,
    state_list_from_ops,
)
from .merkle import NotHeldError
from .messages import (
    BlockAnnounce,
    DiffRequest,
    DiffResponse,
    SnapshotRequest,
    SnapshotResponse,
    StateRequest,
    StateResponse,
    WantedItem,
)
from .routing import LookupFailed
from .sim import Delivery, Timer
from .state import (
    CONTRACT,
    ZERO_SLOT,
    AccountBundle,
    AccountRecord,
    AccountWrite,
    PartialState,
    SlotWrite,
    Snapshot,
    Write,
)

if TYPE_CHECKING:
    from .network import Network


class Unresolved(RuntimeError):
    """Execution touched state that was neither local nor received."""


class ExecutionError(ValueError):
    """A transaction is invalid against the pre-state (e.g. slot write to an external account)."""


@dataclass
class NodeConfig:
    fanout: int = 8
    alpha: int = 3
    mode: str = MERKLE
    cache: Optional[dict[str, int]] = None
    request_timeout_us: int = 5_000_000
    witness_window: int = 4
    max_fetch_attempts: int = 4
    snapshot_chunk_bits: int = 2  # a joining node fetches its range in 2^bits snapshots


# ------------------------------------------------------------ execution


class StateView:
    """Read access to pre-block state: verified bundles first, then local storage."""

    def __init__(
        self,
        state: PartialState,
        bundles: Optional[Mapping[int, AccountBundle]] = None,
        codes: Optional[Mapping[bytes, bytes]] = None,
        verified: Optional[Iterable[int]] = None,
    ):
        self.state = state
        self.bundles = dict(bundles or {})
        self.codes = dict(codes or {})
        self.verified = set(self.bundles) if verified is None else set(verified)
        self._slots = {a: {k: v for k, v, _ in b.slots} for a, b in self.bundles.items()}

    def _remote(self, a: int) -> None:
        if a not in self.verified:
            self.state.unverified_used += 1

    def account(self, a: int) -> Optional[AccountRecord]:
        b = self.bundles.get(a)
        if b is not None:
            self._remote(a)
            return b.record
        if self.state.holds(a):
            return self.state.records.get(a)
        raise Unresolved(f"account {a:#x}")

    def slot(self, a: int, k: int) -> bytes:
        got = self._slots.get(a)
        if got is not None and k in got:
            self._remote(a)
            v = got[k]
            return ZERO_SLOT if v is None else v
        if self.state.holds(a) and self.state.holds_slot(a, k):
            return self.state.read_slot(a, k)
        raise Unresolved(f"slot {k:#x} of {a:#x}")

    def code(self, a: int) -> bytes:
        rec = self.account(a)
        if rec is None or rec.code_hash is None:
            raise ExecutionError(f"exec_code on {a:#x}, which has no code")
        blob = self.codes.get(rec.code_hash)
        if blob is None:
            blob = self.state.code.get(rec.code_hash)
        if blob is None:
            raise Unresolved(f"code of {a:#x}")
        return blob


@dataclass
class Execution:
    writes: list[Write]
    log: AccessTraceLog
    kinds: dict[int, str]
    code_hashes: dict[int, Optional[bytes]]
    code_sizes: dict[int, int]

    def state_list(self) -> StateList:
        return state_list_from_log(self.log, self.kinds, self.code_hashes, self.code_sizes)


def execute(view: StateView, transactions: Sequence[Transaction]) -> Execution:
    """Run access-list transactions in order; later ops see earlier writes."""
    log = AccessTraceLog()
    accounts: dict[int, Optional[AccountRecord]] = {}
    slots: dict[tuple[int, int], bytes] = {}
    pre: dict[int, Optional[AccountRecord]] = {}
    code_hashes: dict[int, Optional[bytes]] = {}
    code_sizes: dict[int, int] = {}
    writes: list[Write] = []

    def acct(a: int) -> Optional[AccountRecord]:
        if a not in pre:
            pre[a] = view.account(a)
        return accounts.get(a, pre[a]) if a in accounts else pre[a]

    def slot(a: int, k: int) -> bytes:
        acct(a)
        if (a, k) in slots:
            return slots[(a, k)]
        return view.slot(a, k)

    def source_value(src: tuple):
        if len(src) == 2 and src[1] is not None:
            log.slot(src[0], src[1])
            return slot(src[0], src[1])
        log.account(src[0])
        rec = acct(src[0])
        return 0 if rec is None else rec.balance

    for tx in transactions:
        for op in tx.ops:
            a = op.address
            if op.kind == READ_ACCOUNT:
                log.account(a)
                acct(a)
            elif op.kind == READ_SLOT:
                log.slot(a, op.key)
                slot(a, op.key)
            elif op.kind == EXEC_CODE:
                log.exec(a)
                blob = view.code(a)
                acct(a)
                code_hashes[a] = pre[a].code_hash
                code_sizes[a] = len(blob)
            elif op.kind == WRITE_ACCOUNT:
                v = source_value(op.source) if op.source is not None else op.value
                if isinstance(v, bytes):
                    v = int.from_bytes(v[-16:], "big")
                log.account(a)
                rec = acct(a) or AccountRecord(a)
                if op.field == "nonce":
                    rec = AccountRecord(rec.address, rec.kind, rec.nonce + 1 if v is None else int(v), rec.balance, rec.storage_root, rec.code_hash)
                    writes.append(AccountWrite(a, nonce=rec.nonce))
                else:
                    rec = AccountRecord(rec.address, rec.kind, rec.nonce, int(v or 0), rec.storage_root, rec.code_hash)
                    writes.append(AccountWrite(a, balance=rec.balance))
                accounts[a] = rec
            elif op.kind == WRITE_SLOT:
                v = source_value(op.source) if op.source is not None else op.value
                if isinstance(v, int):
                    v = v.to_bytes(32, "big")
                log.slot(a, op.key)
                rec = acct(a)
                if rec is None or rec.kind != CONTRACT:
                    raise ExecutionError(f"slot write to non-contract {a:#x}")
                if v is None or len(v) != 32:
                    raise ExecutionError("slot values are 32 bytes")
                slots[(a, op.key)] = v
                writes.append(SlotWrite(a, op.key, v))
    kinds = {a: (r.kind if r is not None else "external") for a, r in pre.items()}
    return Execution(writes, log, kinds, code_hashes, code_sizes)


# -------------------------------------------------------------- witness


@dataclass
class Witness:
    """Pre-state of one block's touched accounts, with proofs against ``parent_root``."""

    parent_root: bytes
    bundles: dict[int, AccountBundle]
    codes: dict[bytes, bytes]


def build_witness(
    state: PartialState,
    state_list: StateList,
    received: Mapping[int, AccountBundle],
    codes: Mapping[bytes, bytes],
) -> Witness:
    out: dict[int, AccountBundle] = {}
    blobs: dict[bytes, bytes] = {}
    for e in state_list:
        a = e.address
        if state.holds(a):
            b = state.get_with_proof(a, e.slots)
            b.code = None
            if b.missing_slots:
                got = {k: (k, v, p) for k, v, p in received[a].slots}
                b.slots.extend(got[k] for k in b.missing_slots)
                b.missing_slots = []
        else:
            r = received[a]
            b = AccountBundle(a, r.record, r.proof, list(r.slots))
        out[a] = b
        if e.code and e.code_hash is not None:
            blob = codes.get(e.code_hash) or state.code.get(e.code_hash)
            blobs[e.code_hash] = blob
    return Witness(state.global_root, out, blobs)


def serve_items(
    items: Sequence[WantedItem],
    state: PartialState,
    witness: Optional[Witness] = None,
) -> StateResponse:
    """Answer a state request from a block witness, or from current state when none is given."""
    resp = StateResponse(0)
    for it in items:
        a = it.address
        if not it.header:
            resp.slots_only.add(a)
        if it.header or it.slots is None or it.slots:
            if witness is not None:
                b = _from_witness(witness, it, resp)
            else:
                b = _from_state(state, it, resp)
            if b is not None:
                resp.bundles.append(b)
        if it.code_hash is not None:
            blob = (witness.codes.get(it.code_hash) if witness else None) or state.code.get(it.code_hash)
            if blob is None:
                resp.not_held.append((a, None, it.code_hash))
            else:
                resp.codes[it.code_hash] = blob
    return resp


def _from_witness(w: Witness, it: WantedItem, resp: StateResponse) -> Optional[AccountBundle]:
    src = w.bundles.get(it.address)
    if src is None:
        resp.not_held.append((it.address, None, None))
        return None
    have = {k: (k, v, p) for k, v, p in src.slots}
    keys = sorted(have) if it.slots is None else it.slots
    b = AccountBundle(it.address, src.record, src.proof)
    for k in keys:
        if k in have:
            b.slots.append(have[k])
        else:
            resp.not_held.append((it.address, k, None))
    return b


def _from_state(state: PartialState, it: WantedItem, resp: StateResponse) -> Optional[AccountBundle]:
    try:
        b = state.get_with_proof(it.address, it.slots)
    except NotHeldError:
        resp.not_held.append((it.address, None, None))
        return None
    b.code = None
    resp.not_held.extend((it.address, k, None) for k in b.missing_slots)
    b.missing_slots = []
    return b


# ----------------------------------------------------------------- node


@dataclass
class BlockJob:
    announce: BlockAnnounce
    sender: Optional[int]
    parent_root: bytes
    wanted: list[WantedItem]
    bundles: dict[int, AccountBundle] = field(default_factory=dict)
    codes: dict[bytes, bytes] = field(default_factory=dict)
    verified: set[int] = field(default_factory=set)
    outstanding: dict[int, tuple[int, tuple[WantedItem, ...]]] = field(default_factory=dict)
    late: dict[int, tuple[int, tuple[WantedItem, ...]]] = field(default_factory=dict)  # timed out, still welcome
    tried: set[int] = field(default_factory=set)
    attempts: int = 0
    failed: bool = False


@dataclass
class SyncJob:
    """Snapshot sync of a joining node's owned range."""

    chunks: list[tuple[int, int]]
    staged: dict[tuple[int, int], Snapshot] = field(default_factory=dict)
    outstanding: dict[tuple[int, int], int] = field(default_factory=dict)  # chunk -> peer
    tried: dict[tuple[int, int], set[int]] = field(default_factory=dict)
    history: list[tuple[bytes, list[Write], list[AccountBundle]]] = field(default_factory=list)
    exchanges: int = 0
    installed: bool = False
    verify_peer: Optional[int] = None
    verify_attempts: int = 0
    started: int = 0
    synced_at: Optional[int] = None


@dataclass
class NodeMetrics:
    executed: dict[int, tuple[int, bytes]] = field(default_factory=dict)  # block -> (time, post root)
    received_at: dict[int, int] = field(default_factory=dict)
    forward_start: dict[int, int] = field(default_factory=dict)  # last forward's uplink start
    first_request: dict[int, int] = field(default_factory=dict)
    requests_sent: int = 0
    lookups: int = 0
    lookup_failures: int = 0
    timeouts: int = 0
    rejected_responses: int = 0
    rejected_blocks: dict[int, str] = field(default_factory=dict)
    duplicates: int = 0
    request_log: list[tuple[int, int, tuple[WantedItem, ...]]] = field(default_factory=list)  # (block, peer, items)

    def forward_before_fetch(self) -> bool:
        return all(
            n in self.forward_start and self.forward_start[n] < t for n, t in self.first_request.items()
        )


class ProtocolNode:
    def __init__(self, identity: NodeIdentity, state: PartialState, net: Network, config: NodeConfig = NodeConfig()):
        if state.prefix_len != identity.prefix_len:
            raise ValueError("state prefix length differs from the identity's")
        self.identity = identity
        self.key = identity.key
        self.state = state
        self.net = net
        self.config = config
        self.cache: SegmentedCache = optional_cache(config.cache, config.mode)
        self.cached_code: set[bytes] = set()
        self.seen: set[tuple[int, bytes]] = set()
        self.jobs: dict[int, BlockJob] = {}
        self.buffered: dict[bytes, tuple[BlockAnnounce, Optional[int]]] = {}
        self.witness: dict[int, Witness] = {}
        self.queued: dict[int, list[tuple[int, StateRequest]]] = {}
        self.height = -1
        self.metrics = NodeMetrics()
        self._nonce = 0
        self.sync: Optional[SyncJob] = None

    # ---------------------------------------------------------- dispatch

    def on_event(self, payload) -> None:
        if isinstance(payload, Timer):
            if payload.kind == "timeout":
                self._timeout(*payload.data)
            elif payload.kind == "snapshot-timeout":
                self._snapshot_timeout(*payload.data)
            return
        assert isinstance(payload, Delivery)
        msg = payload.message
        if isinstance(msg, BlockAnnounce):
            self.handle_block(msg, payload.src)
        elif isinstance(msg, StateRequest):
            self.handle_state_request(msg, payload.src)
        elif isinstance(msg, StateResponse):
            self.handle_state_response(msg, payload.src)
        elif isinstance(msg, SnapshotRequest):
            self.handle_snapshot_request(msg, payload.src)
        elif isinstance(msg, SnapshotResponse):
            self.handle_snapshot_response(msg, payload.src)
        elif isinstance(msg, DiffRequest):
            self.handle_diff_request(msg, payload.src)
        elif isinstance(msg, DiffResponse):
            self.handle_diff_response(msg, payload.src)

    # ----------------------------------------------------------- queries

    def compute_missing(self, state_list: StateList) -> list[WantedItem]:
        """Entries of ``state_list`` held neither in owned storage nor in cache."""
        st = self.state
        out = []
        codes_seen: set[bytes] = set()
        for e in state_list:
            a = e.address
            header = not st.holds(a)
            slots = tuple(k for k in e.slots if header or not st.holds_slot(a, k))
            code = None
            if e.code and e.code_hash is not None and not st.holds_code(e.code_hash) and e.code_hash not in codes_seen:
                code = e.code_hash
                codes_seen.add(code)
            if header or slots or code:
                out.append(WantedItem(a, header, slots, code))
        return out

    # ------------------------------------------------------------ gossip

    def _forward(self, announce: BlockAnnounce) -> None:
        n = announce.block.number
        for peer in self.net.peers[self.key]:
            res = self.net.send(self.key, peer, announce, n)
            if res is not None:
                self.metrics.forward_start[n] = max(self.metrics.forward_start.get(n, -1), res[0])

    def handle_block(self, announce: BlockAnnounce, sender: Optional[int]) -> None:
        blk = announce.block
        if blk.id in self.seen:
            self.metrics.duplicates += 1
            return
        self.seen.add(blk.id)
        self.metrics.received_at[blk.number] = self.net.sim.now
        self._forward(announce)
        if blk.parent_root != self.state.global_root:
            self.buffered[blk.parent_root] = (announce, sender)
            return
        self._start(announce, sender)

    def _start(self, announce: BlockAnnounce, sender: Optional[int]) -> None:
        blk = announce.block
        job = BlockJob(announce, sender, blk.parent_root, self.compute_missing(announce.state_list))
        self.jobs[blk.number] = job
        if not job.wanted:
            self._complete(job)
        elif sender is None:
            self._fallback(job, job.wanted)
        else:
            self._request(job, sender, tuple(job.wanted))

    # ----------------------------------------------------------- pulling

    def _request(self, job: BlockJob, dst: int, items: tuple[WantedItem, ...]) -> None:
        self._nonce += 1
        n = job.announce.block.number
        job.outstanding[self._nonce] = (dst, items)
        self.metrics.requests_sent += 1
        self.metrics.request_log.append((n, dst, items))
        res = self.net.send(self.key, dst, StateRequest(n, items, self._nonce), n)
        if res is not None and n not in self.metrics.first_request:
            self.metrics.first_request[n] = res[0]
        self.net.sim.schedule(self.config.request_timeout_us, self.key, Timer("timeout", (n, self._nonce)))

    def _fallback(self, job: BlockJob, items: Sequence[WantedItem]) -> None:
        """Locate a storer for each item by iterative lookup and ask it directly."""
        job.attempts += 1
        if job.attempts > self.config.max_fetch_attempts * max(1, len(items)):
            # a slow but live peer may still answer; give up only when none is pending
            if not job.late:
                self._fail(job, "fetch attempts exhausted")
            return
        n = job.announce.block.number
        groups: dict[int, list[WantedItem]] = {}
        for it in items:
            self.metrics.lookups += 1
            try:
                holder = self.net.lookup(self.key, it.address, n, exclude=job.tried)
            except LookupFailed:
                self.metrics.lookup_failures += 1
                if not job.late:
                    self._fail(job, f"no storer for {it.address:#x}")
                return
            groups.setdefault(holder, []).append(it)
        for holder, its in groups.items():
            self._request(job, holder, tuple(its))

    def _timeout(self, number: int, nonce: int) -> None:
        job = self.jobs.get(number)
        if job is None or nonce not in job.outstanding:
            return
        dst, items = job.outstanding.pop(nonce)
        job.late[nonce] = (dst, items)
        self.metrics.timeouts += 1
        job.tried.add(dst)
        self._fallback(job, items)

    def handle_state_response(self, resp: StateResponse, src: int) -> None:
        job = self.jobs.get(resp.block_number)
        if job is None:
            return
        if resp.nonce in job.late:
            # the retry is already under way; keep whatever verifies
            del job.late[resp.nonce]
            if self._accept(job, resp):
                job.failed = False
                self.metrics.rejected_blocks.pop(resp.block_number, None)
            self._advance(job)
            return
        if resp.nonce not in job.outstanding:
            return
        _, items = job.outstanding.pop(resp.nonce)
        if not self._accept(job, resp):
            self.metrics.rejected_responses += 1
            job.tried.add(src)
            self._fallback(job, items)
            return
        if resp.not_held:
            job.tried.add(src)
        self._advance(job)

    def _accept(self, job: BlockJob, resp: StateResponse) -> bool:
        """Verify every bundle and code blob against the parent root, then merge."""
        h = self.state.hasher
        for b in resp.bundles:
            if not b.verify(job.parent_root, h):
                return False
        for ch, blob in resp.codes.items():
            if h(blob) != ch:
                return False
        for b in resp.bundles:
            self.state.verified_remote += 1 + len(b.slots)
            job.verified.add(b.address)
            cur = job.bundles.get(b.address)
            if cur is None:
                job.bundles[b.address] = AccountBundle(b.address, b.record, b.proof, list(b.slots))
            else:
                have = {k for k, _, _ in cur.slots}
                cur.slots.extend(s for s in b.slots if s[0] not in have)
        job.codes.update(resp.codes)
        return True

    def _remaining(self, job: BlockJob) -> list[WantedItem]:
        out = []
        for it in job.wanted:
            b = job.bundles.get(it.address)
            have = {k for k, _, _ in b.slots} if b is not None else set()
            header = it.header and b is None
            slots = tuple(k for k in (it.slots or ()) if k not in have)
            code = it.code_hash if it.code_hash is not None and it.code_hash not in job.codes else None
            if header or slots or code:
                out.append(WantedItem(it.address, header, slots, code))
        return out

    def _advance(self, job: BlockJob) -> None:
        if job.outstanding or job.failed:
            return
        rem = self._remaining(job)
        if rem:
            self._fallback(job, rem)
        else:
            self._complete(job)

    def _fail(self, job: BlockJob, why: str) -> None:
        job.failed = True
        self.metrics.rejected_blocks[job.announce.block.number] = why

    # --------------------------------------------------------- execution

    def _complete(self, job: BlockJob) -> None:
        blk = job.announce.block
        view = StateView(self.state, job.bundles, job.codes, job.verified)
        try:
            ex = execute(view, blk.transactions)
        except (Unresolved, ExecutionError) as e:
            self._fail(job, f"execution: {e}")
            return
        sl = ex.state_list()
        if sl.items() != job.announce.state_list.items():
            self._fail(job, "state list does not match execution")
            return
        post = self._finish(job, ex, sl)
        if post != blk.post_root:
            self.metrics.rejected_blocks[blk.number] = "post root mismatch"

    def _finish(self, job: BlockJob, ex: Execution, sl: StateList) -> bytes:
        """Witness, cache refresh, then one deferred proof update for the whole block."""
        blk = job.announce.block
        witness = build_witness(self.state, sl, job.bundles, job.codes)
        retain = self._touch_cache(sl, job)
        if self.sync is not None:
            self.sync.history.append((self.state.global_root, list(ex.writes), list(witness.bundles.values())))
        post = self.state.apply_block_writes(ex.writes, job.bundles.values(), retain)
        self.witness[blk.number] = witness
        for old in [x for x in self.witness if x <= blk.number - self.config.witness_window]:
            del self.witness[old]
        self.height = blk.number
        self.metrics.executed[blk.number] = (self.net.sim.now, post)
        self.jobs.pop(blk.number, None)
        for src, req in self.queued.pop(blk.number, []):
            self.handle_state_request(req, src)
        nxt = self.buffered.pop(post, None)
        if nxt is not None:
            self._start(*nxt)
        if self.sync is not None:
            self._sync_progress()
        return post

    def _touch_cache(self, sl: StateList, job: BlockJob) -> dict[int, set[int]]:
        """Count this block's non-owned accesses; returns the resident set to retain."""
        st = self.state
        model = self.net.model
        binary = model.proof_layout == "binary"
        cache = self.cache
        # blobs used by this block, captured before refreshes start evicting them
        blobs = {e.code_hash: job.codes.get(e.code_hash) or st.code.get(e.code_hash) for e in sl if e.code and e.code_hash}
        for e in sl:
            a = e.address
            if st.owns(a):
                continue
            b = job.bundles.get(a)
            rec = b.record if b is not None else st.records.get(a)
            if rec is None:
                continue  # absent accounts are not cached
            proof = b.proof if b is not None else (st.accounts.prove(a) if binary else None)
            cache.touch("header", ("h", a), rec.charged_bytes, model.account_proof_bytes(proof))
            sproofs = {k: p for k, _, p in b.slots} if b is not None else {}
            for k in e.slots:
                sp = sproofs.get(k)
                if sp is None and binary:
                    sp = st.slot_tries[a].prove(k)
                cache.touch("slot", ("s", a, k), 64, model.slot_proof_bytes(sp))
            if e.code and e.code_hash is not None:
                self._touch_code(e.code_hash, blobs.get(e.code_hash))
        retain: dict[int, set[int]] = {}
        for key in cache.segments["header"].keys():
            retain.setdefault(key[1], set())
        for key in cache.segments["slot"].keys():
            retain.setdefault(key[1], set()).add(key[2])
        return retain

    def _touch_code(self, h: bytes, blob: Optional[bytes]) -> None:
        st = self.state
        if h in st.code and h not in self.cached_code:
            return  # code of an owned contract
        if not blob:
            return
        res = self.cache.touch("code", ("c", h), len(blob))
        if res.admitted and h not in self.cached_code:
            st.code.add(h, blob)
            self.cached_code.add(h)
        for key in res.evicted:
            if key[1] in self.cached_code:
                self.cached_code.discard(key[1])
                st.code.release(key[1])

    def prewarm(self, bundle: AccountBundle, slots: Sequence[int] = ()) -> None:
        """Verify and cache a non-owned account (and some of its slots) ahead of time."""
        st = self.state
        if st.owns(bundle.address) or bundle.record is None:
            raise ValueError("only existing non-owned accounts can be cached")
        st.admit(bundle, slots)
        model = self.net.model
        self.cache.touch("header", ("h", bundle.address), bundle.record.charged_bytes, model.account_proof_bytes(bundle.proof))
        for k, _, p in bundle.slots:
            if k in slots:
                self.cache.touch("slot", ("s", bundle.address, k), 64, model.slot_proof_bytes(p))

    # ----------------------------------------------------------- serving

    def serve(self, req: StateRequest) -> StateResponse:
        resp = serve_items(req.items, self.state, self.witness.get(req.block_number))
        resp.block_number = req.block_number
        resp.nonce = req.nonce
        return resp

    def handle_state_request(self, req: StateRequest, src: int) -> None:
        n = req.block_number
        if n not in self.witness and n in self.jobs:
            self.queued.setdefault(n, []).append((src, req))
            return
        self.net.send(self.key, src, self.serve(req), n)

    # ---------------------------------------------------------- proposal

    def propose_block(self, transactions: Sequence[Transaction]) -> tuple[Block, StateList]:
        """Gather state, execute, apply, and gossip a new block on top of the current root."""
        number = self.height + 1
        parent = self.state.global_root
        pre = state_list_from_ops(transactions, {})
        placeholder = Block(number, self.key, parent, parent, tuple(transactions))
        job = BlockJob(BlockAnnounce(placeholder, pre), None, parent, self.compute_missing(pre))
        self._fetch_sync(job)
        view = StateView(self.state, job.bundles, job.codes, job.verified)
        code_items = []
        for e in pre:
            if not e.code:
                continue
            rec = view.account(e.address)
            if rec is not None and rec.code_hash is not None and not self.state.holds_code(rec.code_hash):
                code_items.append(WantedItem(e.address, False, (), rec.code_hash))
        if code_items:
            job.wanted.extend(code_items)
            self._fetch_sync(job)
            view = StateView(self.state, job.bundles, job.codes, job.verified)
        ex = execute(view, transactions)
        sl = ex.state_list()
        if sl.items() != pre.items() | {("code", h) for h in ex.code_hashes.values() if h is not None}:
            raise AssertionError("state list differs from the execution trace")
        post = self._finish(job, ex, sl)
        block = Block(number, self.key, parent, post, tuple(transactions))
        announce = BlockAnnounce(block, sl)
        self.seen.add(block.id)
        self.metrics.received_at[number] = self.net.sim.now
        self._forward(announce)
        return block, sl

    def _fetch_sync(self, job: BlockJob) -> None:
        """Resolve missing items by lookup and direct fetch, retrying other storers on bad proofs."""
        for _ in range(self.config.max_fetch_attempts):
            rem = self._remaining(job)
            if not rem:
                return
            groups: dict[int, list[WantedItem]] = {}
            for it in rem:
                self.metrics.lookups += 1
                try:
                    holder = self.net.lookup(self.key, it.address, job.announce.block.number, exclude=job.tried)
                except LookupFailed:
                    self.metrics.lookup_failures += 1
                    raise
                groups.setdefault(holder, []).append(it)
            for holder, its in groups.items():
                self._nonce += 1
                req = StateRequest(job.announce.block.number, tuple(its), self._nonce)
                resp = self.net.fetch(self.key, holder, req)
                if not self._accept(job, resp):
                    self.metrics.rejected_responses += 1
                    job.tried.add(holder)
                elif resp.not_held:
                    job.tried.add(holder)
        if self._remaining(job):
            raise LookupFailed("proposal aborted: state could not be gathered")

    # ------------------------------------------------------------ joining

    def start_sync(self) -> None:
        """Begin fetching the owned range as snapshots while validating statelessly."""
        st = self.state
        c = min(self.config.snapshot_chunk_bits, st.width - st.prefix_len)
        chunks = [((st.prefix_path << c) | i, st.prefix_len + c) for i in range(1 << c)]
        st.syncing = True
        self.sync = SyncJob(chunks, started=self.net.sim.now)
        for ch in chunks:
            self._request_chunk(ch)

    def _request_chunk(self, chunk: tuple[int, int]) -> None:
        job = self.sync
        tried = job.tried.setdefault(chunk, {self.key})
        try:
            peer = self.net.lookup_region(self.key, chunk, exclude=tried)
        except LookupFailed:
            self.metrics.lookup_failures += 1
            return
        tried.add(peer)
        job.outstanding[chunk] = peer
        self.net.send(self.key, peer, SnapshotRequest(*chunk), "sync")
        self.net.sim.schedule(self.config.request_timeout_us, self.key, Timer("snapshot-timeout", (chunk, peer)))

    def _snapshot_timeout(self, chunk: tuple[int, int], peer: int) -> None:
        if self.sync is not None and self.sync.outstanding.get(chunk) == peer:
            del self.sync.outstanding[chunk]
            self.metrics.timeouts += 1
            self._request_chunk(chunk)

    def handle_snapshot_request(self, req: SnapshotRequest, src: int) -> None:
        st = self.state
        snap = None
        if not st.syncing and st._in_owned(req.path, req.plen):
            snap = st.subtree_snapshot(req.path, req.plen)
        self.net.send(self.key, src, SnapshotResponse(req.path, req.plen, snap), "sync")

    def handle_snapshot_response(self, resp: SnapshotResponse, src: int) -> None:
        job = self.sync
        chunk = (resp.path, resp.plen)
        if job is None or job.outstanding.get(chunk) != src:
            return
        del job.outstanding[chunk]
        job.exchanges += 1
        snap = resp.snapshot
        if snap is None or snap.path != resp.path or snap.plen != resp.plen or not snap.verify(hasher=self.state.hasher):
            self.metrics.rejected_responses += 1
            self._request_chunk(chunk)
            return
        job.staged[chunk] = snap
        self._sync_progress()

    def _replay_from(self, root: bytes):
        job = self.sync
        if root == self.state.global_root:
            return []
        for i, (parent, _, _) in enumerate(job.history):
            if parent == root:
                return [(w, b) for _, w, b in job.history[i:]]
        return None

    def _sync_progress(self) -> None:
        job = self.sync
        if not job.installed:
            if len(job.staged) < len(job.chunks):
                return
            replays = {ch: self._replay_from(s.root) for ch, s in job.staged.items()}
            if any(r is None for r in replays.values()):
                return  # a storer is ahead of us; retry after the next block
            st = self.state
            for ch in job.chunks:
                st.load_snapshot(job.staged[ch], replays[ch])
            st.syncing = False
            job.installed = True
            job.history.clear()
            for seg in ("header", "slot"):
                for key in [k for k in self.cache.segments[seg].keys() if st.owns(k[1])]:
                    self.cache.discard(seg, key)
        if job.synced_at is None and job.verify_peer is None:
            self._request_verify()

    def _request_verify(self) -> None:
        st = self.state
        job = self.sync
        job.verify_attempts += 1
        try:
            peer = self.net.lookup_region(self.key, (st.prefix_path, st.prefix_len), exclude={self.key})
        except LookupFailed:
            self.metrics.lookup_failures += 1
            return
        job.verify_peer = peer
        self.net.send(self.key, peer, DiffRequest(st.prefix_path, st.prefix_len), "sync")

    def handle_diff_request(self, req: DiffRequest, src: int) -> None:
        self.net.send(self.key, src, self.diff_response(req), "sync")

    def diff_response(self, req: DiffRequest) -> DiffResponse:
        st = self.state
        if st.syncing or not st._in_owned(req.path, req.plen) or req.plen >= st.width:
            return DiffResponse(req.path, req.plen, b"", (b"", b""), ("", ""))
        digest, children, kinds = st.diff_hashes(req.path, req.plen)
        proof = st.accounts.proof_path_kinds(req.path, req.plen) if req.with_proof else []
        return DiffResponse(req.path, req.plen, digest, children, kinds, proof)

    def handle_diff_response(self, resp: DiffResponse, src: int) -> None:
        job = self.sync
        if job is None or job.verify_peer != src:
            return
        job.verify_peer = None
        if resp.digest and resp.digest == self.state.subtree_root():
            job.synced_at = self.net.sim.now
        elif job.verify_attempts >= 8:
            self.metrics.rejected_blocks[-1] = "sync verification failed"
        # otherwise the peer sits at another height; _sync_progress asks again after the next block

    @property
    def synced(self) -> bool:
        return self.sync is None or self.sync.synced_at is not None
