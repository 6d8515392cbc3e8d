"""Per-block extra bandwidth of a measured node, computed from a trace without Merkle work.

The byte rules mirror what a :class:`~statenet.protocol.ProtocolNode` does when
it receives a block: every state-list entry it neither owns nor holds in
cache is requested from the sender in one StateRequest and answered in one
StateResponse.  Proof sizes come from the size model (nominal hexary
proofs), so no tries are built.  ``tests/test_bandwidth.py`` checks these
numbers against the ledger of a live simulated network.

"Extra" bytes are request bytes sent plus response bytes received.  In
Verkle mode the block witness carried on the announcement is added too.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cache import MERKLE, SEGMENTS, VERKLE, SegmentedCache, split_capacity
from .chain import EXEC_CODE, READ_ACCOUNT, READ_SLOT, WRITE_ACCOUNT, WRITE_SLOT, AccessTraceLog, StateList, state_list_from_log
from .workload.sizes import DEFAULT_MODEL, SizeModel, VerkleWitnessModel, default_verkle_model
from .workload.trace import HEADER_SIZES, AccessTrace

EXTRA_CATEGORIES = ("headers", "account_proofs", "slot_data", "slot_proofs", "code", "witness", "request", "control")


@dataclass
class TraceAccess:
    """A trace flattened into per-block state-list entries (first-access order)."""

    width: int
    n_blocks: int
    n_txs: np.ndarray
    e_block: np.ndarray
    e_addr: np.ndarray
    e_header: np.ndarray
    e_slots: list[tuple[int, ...]]
    e_nslots: np.ndarray
    e_code: np.ndarray  # code id, -1 when the entry does not execute code
    code_size: dict[int, int]
    contract_addr: np.ndarray
    contract_code: np.ndarray
    state_lists: list[StateList] = field(repr=False, default_factory=list)

    @classmethod
    def from_trace(cls, trace: AccessTrace) -> TraceAccess:
        if trace.width > 63:
            raise ValueError("the fast path handles widths up to 63 bits")
        u = trace.universe()
        kinds = {a: k for a, k in u.kinds.items()}
        rows = []
        n_txs = []
        lists = []
        for b, (_, txs) in enumerate(trace.blocks()):
            log = AccessTraceLog()
            for tx in txs:
                for o in tx:
                    if o.op in (READ_ACCOUNT, WRITE_ACCOUNT):
                        log.account(o.address)
                    elif o.op in (READ_SLOT, WRITE_SLOT):
                        log.slot(o.address, o.key)
                    elif o.op == EXEC_CODE:
                        log.exec(o.address)
            hashes = {a: u.code_ids[a].to_bytes(8, "big") for a in log.code}
            sizes = {a: u.code_sizes[u.code_ids[a]] for a in log.code}
            sl = state_list_from_log(log, kinds, hashes, sizes)
            lists.append(sl)
            n_txs.append(len(txs))
            for e in sl:
                code = u.code_ids[e.address] if e.code else -1
                rows.append((b, e.address, 124 if e.kind == "contract" else 60, e.slots, code))
        contracts = sorted(a for a in u.code_ids)
        return cls(
            trace.width,
            len(lists),
            np.asarray(n_txs, dtype=np.int64),
            np.asarray([r[0] for r in rows], dtype=np.int64),
            np.asarray([r[1] for r in rows], dtype=np.uint64),
            np.asarray([r[2] for r in rows], dtype=np.int64),
            [r[3] for r in rows],
            np.asarray([len(r[3]) for r in rows], dtype=np.int64),
            np.asarray([r[4] for r in rows], dtype=np.int64),
            dict(u.code_sizes),
            np.asarray(contracts, dtype=np.uint64),
            np.asarray([u.code_ids[a] for a in contracts], dtype=np.int64),
            lists,
        )

    def owned_mask(self, addrs: np.ndarray, node_id: int, prefix_len: int) -> np.ndarray:
        if prefix_len == 0:
            return np.ones(len(addrs), dtype=bool)
        shift = np.uint64(self.width - prefix_len)
        return (addrs >> shift) == np.uint64(node_id >> (self.width - prefix_len))

    def owned_codes(self, node_id: int, prefix_len: int) -> set[int]:
        m = self.owned_mask(self.contract_addr, node_id, prefix_len)
        return set(int(c) for c in np.unique(self.contract_code[m]))

    def hot_set(self, model: SizeModel = DEFAULT_MODEL, mode: str = MERKLE, blocks: Optional[range] = None) -> dict[str, int]:
        """Bytes of every distinct header, slot and code item accessed, charged as the cache would."""
        sel = np.ones(len(self.e_block), dtype=bool) if blocks is None else (
            (self.e_block >= blocks.start) & (self.e_block < blocks.stop)
        )
        aproof = model.account_proof_bytes() if mode == MERKLE else 0
        sproof = model.slot_proof_bytes() if mode == MERKLE else 0
        headers: dict[int, int] = {}
        slots: set[tuple[int, int]] = set()
        codes: set[int] = set()
        for i in np.flatnonzero(sel):
            a = int(self.e_addr[i])
            headers[a] = int(self.e_header[i])
            slots.update((a, k) for k in self.e_slots[i])
            if self.e_code[i] >= 0:
                codes.add(int(self.e_code[i]))
        return {
            "header": sum(h + aproof for h in headers.values()),
            "slot": len(slots) * (model.slot_record + sproof),
            "code": sum(self.code_size[c] for c in codes),
        }


@dataclass
class NodeBandwidth:
    """Per-block extra bytes for one measured node, split by category."""

    per_block: np.ndarray  # (blocks, categories) over EXTRA_CATEGORIES
    bypasses: int = 0
    touches: int = 0

    @property
    def totals(self) -> np.ndarray:
        return self.per_block.sum(axis=1)


def _item_costs(model: SizeModel, mode: str) -> tuple[int, int, int]:
    merkle = mode == MERKLE
    return (
        model.account_proof_bytes() if merkle else 0,
        model.slot_proof_bytes() if merkle else 0,
        model.envelope + 8,
    )


def witness_per_block(access: TraceAccess, verkle: Optional[VerkleWitnessModel] = None) -> np.ndarray:
    v = verkle or default_verkle_model()
    return np.asarray([v.for_state_list(sl) for sl in access.state_lists], dtype=np.int64)


def node_bandwidth_nocache(
    access: TraceAccess,
    node_id: int,
    prefix_len: int,
    model: SizeModel = DEFAULT_MODEL,
    mode: str = MERKLE,
    witness: Optional[np.ndarray] = None,
) -> NodeBandwidth:
    """Vectorized extra bytes for a node without a cache."""
    aproof, sproof, env = _item_costs(model, mode)
    nb = access.n_blocks
    miss = ~access.owned_mask(access.e_addr, node_id, prefix_len)
    b = access.e_block[miss]
    ns = access.e_nslots[miss]
    cols = {c: np.zeros(nb, dtype=np.int64) for c in EXTRA_CATEGORIES}

    def add(cat: str, idx: np.ndarray, w) -> None:
        cols[cat] += np.bincount(idx, weights=np.broadcast_to(w, idx.shape), minlength=nb).astype(np.int64)

    add("headers", b, access.e_header[miss])
    add("account_proofs", b, aproof)
    add("slot_data", b, ns * model.slot_record)
    add("slot_proofs", b, ns * sproof)
    add("request", b, model.key_bytes + 2 + model.key_bytes * ns)
    # code: once per (block, code id) among non-owned codes
    owned = access.owned_codes(node_id, prefix_len)
    has = (access.e_code >= 0) & miss
    if has.any():
        pairs = np.unique(np.stack([access.e_block[has], access.e_code[has]], axis=1), axis=0)
        keep = np.asarray([int(c) not in owned for c in pairs[:, 1]], dtype=bool)
        pairs = pairs[keep]
        if len(pairs):
            sizes = np.asarray([access.code_size[int(c)] for c in pairs[:, 1]], dtype=np.int64)
            add("code", pairs[:, 0], sizes)
            add("request", pairs[:, 0], model.digest)
    any_missing = np.bincount(b, minlength=nb) > 0
    cols["request"] += np.where(any_missing, env, 0)
    cols["control"] += np.where(any_missing, env, 0)
    if mode == VERKLE:
        cols["witness"] += witness if witness is not None else witness_per_block(access)
    return NodeBandwidth(np.stack([cols[c] for c in EXTRA_CATEGORIES], axis=1))


def node_bandwidth_cached(
    access: TraceAccess,
    node_id: int,
    prefix_len: int,
    cache: SegmentedCache,
    model: SizeModel = DEFAULT_MODEL,
    witness: Optional[np.ndarray] = None,
) -> NodeBandwidth:
    """Sequential replay through a segmented frequency cache, as a protocol node would."""
    mode = cache.mode
    aproof, sproof, env = _item_costs(model, mode)
    charge_a = model.account_proof_bytes()
    charge_s = model.slot_proof_bytes()
    nb = access.n_blocks
    out = np.zeros((nb, len(EXTRA_CATEGORIES)), dtype=np.int64)
    ci = {c: i for i, c in enumerate(EXTRA_CATEGORIES)}
    owned_e = access.owned_mask(access.e_addr, node_id, prefix_len).tolist()
    owned_codes = access.owned_codes(node_id, prefix_len)
    addrs = access.e_addr.tolist()
    heads = access.e_header.tolist()
    codes = access.e_code.tolist()
    hdr = cache.segments["header"]
    slot = cache.segments["slot"]
    code = cache.segments["code"]
    # a non-owned record is retained while its header or any of its slots is resident
    resident: dict[int, int] = {}
    for k in slot.keys():
        resident[k[1]] = resident.get(k[1], 0) + 1

    def held(a: int) -> bool:
        return ("h", a) in hdr or resident.get(a, 0) > 0

    bounds = np.searchsorted(access.e_block, np.arange(nb + 1)).tolist()
    touches = 0
    for blk in range(nb):
        lo, hi = bounds[blk], bounds[blk + 1]
        asked_codes: set[int] = set()
        cnt = [0] * len(EXTRA_CATEGORIES)
        missing = False
        for i in range(lo, hi):
            if owned_e[i]:
                continue
            a = addrs[i]
            keys = access.e_slots[i]
            head = not held(a)
            ms = keys if head else [k for k in keys if ("s", a, k) not in slot]
            c = codes[i]
            want_code = c >= 0 and c not in owned_codes and ("c", c) not in code and c not in asked_codes
            if not (head or ms or want_code):
                continue
            missing = True
            n = len(ms)
            if head:
                cnt[0] += heads[i]
                cnt[1] += aproof
            cnt[2] += n * model.slot_record
            cnt[3] += n * sproof
            cnt[6] += model.key_bytes + 2 + model.key_bytes * n
            if want_code:
                asked_codes.add(c)
                cnt[4] += access.code_size[c]
                cnt[6] += model.digest
        if missing:
            cnt[6] += env
            cnt[7] += env
        out[blk] = cnt
        # cache refresh after execution, in state-list order
        for i in range(lo, hi):
            if owned_e[i]:
                continue
            a = addrs[i]
            cache.touch("header", ("h", a), heads[i], charge_a)
            for k in access.e_slots[i]:
                r = cache.touch("slot", ("s", a, k), model.slot_record, charge_s)
                if r.admitted and not r.hit:
                    resident[a] = resident.get(a, 0) + 1
                for _, b, _ in r.evicted:
                    resident[b] -= 1
            touches += 1 + len(access.e_slots[i])
            c = codes[i]
            if c >= 0 and c not in owned_codes:
                cache.touch("code", ("c", c), access.code_size[c])
                touches += 1
    if mode == VERKLE:
        out[:, ci["witness"]] += witness if witness is not None else witness_per_block(access)
    bypasses = sum(s.bypasses for s in cache.segments.values())
    return NodeBandwidth(out, bypasses, touches)


def frequency_entries(
    access: TraceAccess, node_id: int, prefix_len: int, model: SizeModel = DEFAULT_MODEL
) -> dict[str, list[tuple]]:
    """(key, charged bytes, access count) per segment for every non-owned item of the trace.

    Charged bytes include proofs; :func:`preload` strips them in Verkle mode.
    """
    owned_e = access.owned_mask(access.e_addr, node_id, prefix_len)
    owned_codes = access.owned_codes(node_id, prefix_len)
    aproof, sproof = model.account_proof_bytes(), model.slot_proof_bytes()
    count: dict[str, dict] = {s: {} for s in SEGMENTS}
    size: dict = {}
    for i in np.flatnonzero(~owned_e):
        a = int(access.e_addr[i])
        h = ("h", a)
        count["header"][h] = count["header"].get(h, 0) + 1
        size[h] = (int(access.e_header[i]), aproof)
        for k in access.e_slots[i]:
            s = ("s", a, k)
            count["slot"][s] = count["slot"].get(s, 0) + 1
            size[s] = (model.slot_record, sproof)
        c = int(access.e_code[i])
        if c >= 0 and c not in owned_codes:
            key = ("c", c)
            count["code"][key] = count["code"].get(key, 0) + 1
            size[key] = (access.code_size[c], 0)
    return {s: [(k, size[k], n) for k, n in cnt.items()] for s, cnt in count.items()}


def preload(cache: SegmentedCache, entries: dict[str, list[tuple]]) -> None:
    """Fill each segment with its most frequently accessed items until full."""
    for seg, rows in entries.items():
        cache.segments[seg].prewarm((k, cache.charge(*sz), n) for k, sz, n in rows)


def baseline_per_block(access: TraceAccess, model: SizeModel = DEFAULT_MODEL) -> np.ndarray:
    """Block-only gossip bytes: envelope, block header and transactions."""
    return model.envelope + model.block_header_bytes + model.tx_bytes * access.n_txs


def state_list_per_block(access: TraceAccess, model: SizeModel = DEFAULT_MODEL) -> np.ndarray:
    return np.asarray([model.state_list_bytes(sl) for sl in access.state_lists], dtype=np.int64)


def measured_ids(n: int, width: int, seed: int) -> list[int]:
    rng = np.random.default_rng(seed)
    return [int(x) for x in rng.integers(0, 1 << width, size=n, dtype=np.uint64)]


@dataclass
class BandwidthPoint:
    prefix_len: int
    mode: str
    cache_bytes: int
    mean_extra: float  # bytes per measured block, averaged over nodes
    categories: dict[str, float]
    bypass_rate: float = 0.0


def measure_point(
    access: TraceAccess,
    node_ids: Sequence[int],
    prefix_len: int,
    mode: str = MERKLE,
    cache_bytes: int = 0,
    cache_split: Optional[dict[str, float]] = None,
    warmup: int = 0,
    model: SizeModel = DEFAULT_MODEL,
    witness: Optional[np.ndarray] = None,
    prewarm: bool = False,
) -> BandwidthPoint:
    """Mean extra bytes per block over ``node_ids`` (blocks after ``warmup`` only).

    ``prewarm`` fills caches from the whole trace's access counts before the
    first block, so short traces measure a cache in steady state.
    """
    if warmup >= access.n_blocks:
        raise ValueError("warm-up consumes every block")
    if mode == VERKLE and witness is None:
        witness = witness_per_block(access)
    acc = np.zeros(len(EXTRA_CATEGORIES))
    bypass = touches = 0
    for nid in node_ids:
        if cache_bytes > 0:
            weights = cache_split or {s: 1.0 for s in SEGMENTS}
            cache = SegmentedCache(split_capacity(cache_bytes, weights), mode)
            if prewarm:
                preload(cache, frequency_entries(access, nid, prefix_len, model))
            r = node_bandwidth_cached(access, nid, prefix_len, cache, model, witness)
            bypass += r.bypasses
            touches += r.touches
        else:
            r = node_bandwidth_nocache(access, nid, prefix_len, model, mode, witness)
        acc += r.per_block[warmup:].mean(axis=0)
    acc /= len(node_ids)
    cats = {c: float(v) for c, v in zip(EXTRA_CATEGORIES, acc)}
    return BandwidthPoint(prefix_len, mode, cache_bytes, float(acc.sum()), cats, bypass / touches if touches else 0.0)
