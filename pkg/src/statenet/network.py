"""A simulated validator network: nodes, routing tables, gossip overlay, clock and ledger.

Lookups run synchronously over the routing tables (their message bytes are
booked to the ledger at the current time); state, snapshot and diff traffic
travels through the event simulator.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence, Union

from .address import Address, NodeIdentity, cpl
from .cache import MERKLE
from .chain import Block, Transaction
from .messages import DiffRequest, LookupRequest, LookupResponse, SnapshotRequest, SnapshotResponse, StateRequest
from .protocol import NodeConfig, ProtocolNode, StateView, execute
from .routing import LookupFailed, RoutingTable, bootstrap, iterative_lookup
from .sim import (
    US,
    BandwidthLedger,
    ConstantLatency,
    RegionLatency,
    RegionTable,
    Simulator,
    UniformLatency,
    build_overlay,
    ms,
)
from .state import CONTRACT, EXTERNAL, AccountRecord, PartialState, Snapshot, VerificationError
from .workload.sizes import DEFAULT_MODEL, SizeModel, VerkleWitnessModel, message_bytes
from .workload.trace import AccessTrace, Universe, code_blob


@dataclass
class SimConfig:
    """Everything besides the workload trace that determines a run."""

    nodes: int = 200
    width: int = 32
    prefix_lens: Union[int, Sequence[int]] = (3, 4, 5)  # constant, per-node list, or choices
    per_node: bool = False  # True: prefix_lens lists one value per node
    k: int = 16
    fanout: int = 8
    alpha: int = 3
    cache: Optional[dict[str, int]] = None
    latency: str = "regions"  # regions | constant | uniform
    latency_ms: tuple[float, float] = (50.0, 50.0)
    uplink_mbps: Optional[float] = None  # None: per-region rates from the region file
    regions_file: Optional[str] = None
    table_peers: int = 256
    block_interval_ms: int = 12_000
    request_timeout_ms: int = 5_000
    seed: int = 0
    mode: str = MERKLE

    def node_config(self) -> NodeConfig:
        return NodeConfig(
            fanout=self.fanout,
            alpha=self.alpha,
            mode=self.mode,
            cache=self.cache,
            request_timeout_us=self.request_timeout_ms * 1000,
        )

    def digest(self) -> str:
        return hashlib.sha256(repr(sorted(self.__dict__.items())).encode()).hexdigest()[:16]


# ------------------------------------------------------------- genesis


def genesis_from_universe(u: Universe, balance: int = 10**9) -> PartialState:
    """Full genesis state for every account a trace mentions, with deterministic slot values."""
    records = []
    slots: dict[int, dict[int, bytes]] = {}
    code: dict[bytes, bytes] = {}
    for a in sorted(u.kinds):
        if u.kinds[a] == "contract":
            h = None
            if a in u.code_ids:
                blob = code_blob(u.code_ids[a], u.code_sizes[u.code_ids[a]])
                h = hashlib.sha256(blob).digest()
                code[h] = blob
            records.append(AccountRecord(a, CONTRACT, 1, balance, code_hash=h))
            slots[a] = {k: hashlib.sha256(f"g:{a}:{k}".encode()).digest() for k in sorted(u.slots.get(a, ()))}
        else:
            records.append(AccountRecord(a, EXTERNAL, 0, balance))
    return PartialState.genesis(u.width, records, slots, code)


class Oracle:
    """Monolithic full-state executor used as ground truth."""

    def __init__(self, genesis: PartialState):
        self.state = genesis.restrict(0, 0)
        self.roots: list[bytes] = []
        self.write_sets: list[list] = []

    def apply(self, transactions: Sequence[Transaction]) -> bytes:
        ex = execute(StateView(self.state), transactions)
        root = self.state.apply_block_writes(ex.writes)
        self.roots.append(root)
        self.write_sets.append(ex.writes)
        return root

    def leaves(self, path: int, plen: int) -> list[tuple[int, bytes]]:
        return list(self.state.accounts.items(path, plen))


# ------------------------------------------------------------- network


def _covered(keys: Sequence[int], pls: Sequence[int], width: int) -> bool:
    """Every prefix region at the deepest prefix length has at least one storer."""
    depth = max(pls)
    seen = set()
    for key, pl in zip(keys, pls):
        base = key >> (width - pl) if pl else 0
        span = depth - pl
        for low in range(1 << span):
            seen.add((base << span) | low)
    return len(seen) == 1 << depth


@dataclass
class RejoinReport:
    diff_requests: int
    snapshots: int
    stale_paths: list[tuple[int, int]] = field(default_factory=list)


class Network:
    def __init__(
        self,
        config: SimConfig,
        genesis: PartialState,
        model: SizeModel = DEFAULT_MODEL,
        verkle: Optional[VerkleWitnessModel] = None,
        keep_log: bool = False,
        max_redraws: int = 100,
        identities: Optional[Sequence[NodeIdentity]] = None,
        peers: Optional[dict[int, list[int]]] = None,
    ):
        if genesis.prefix_len != 0 or genesis.width != config.width:
            raise ValueError("genesis must be a full state of the configured width")
        self.config = config
        self.model = model
        self.verkle = verkle
        self.mode = config.mode
        self.width = w = config.width
        if identities is None:
            rng = random.Random(config.seed)
            for _ in range(max_redraws):
                keys = [rng.getrandbits(w) for _ in range(config.nodes)]
                pls = self._draw_prefix_lens(rng)
                if len(set(keys)) == len(keys) and _covered(keys, pls, w):
                    break
            else:
                raise ValueError("could not draw a node population that covers every account")
            identities = [NodeIdentity(Address(x, w), pl) for x, pl in zip(keys, pls)]
        elif len(identities) != config.nodes:
            raise ValueError("identities must list config.nodes entries")
        self.identities = list(identities)
        self.tables = {i.key: RoutingTable(i, config.k) for i in self.identities}
        bootstrap(self.tables, self.identities, config.table_peers, random.Random(config.seed + 1))
        if peers is None:
            cands = {x: [p.key for p in t.entries()] for x, t in self.tables.items()}
            peers = build_overlay(cands, config.fanout, config.seed + 2)
        self.peers = {k: list(v) for k, v in peers.items()}
        self._index = {i.key: j for j, i in enumerate(self.identities)}
        self.regions: Optional[RegionTable] = None
        self._uplink: dict[int, float] = {}
        self._build_links()
        self.ledger = BandwidthLedger()
        self.sim = Simulator(self._latency, self._uplink_of, self.ledger, keep_log)
        self.nodes: dict[int, ProtocolNode] = {}
        ncfg = config.node_config()
        for ident in self.identities:
            path = ident.key >> (w - ident.prefix_len) if ident.prefix_len else 0
            node = ProtocolNode(ident, genesis.restrict(path, ident.prefix_len), self, ncfg)
            self.nodes[ident.key] = node
            self.sim.handlers[ident.key] = node.on_event
        self.oracle = Oracle(genesis)
        self.blocks: list[Block] = []

    def _draw_prefix_lens(self, rng: random.Random) -> list[int]:
        c = self.config
        if isinstance(c.prefix_lens, int):
            return [c.prefix_lens] * c.nodes
        if c.per_node:
            if len(c.prefix_lens) != c.nodes:
                raise ValueError("per-node prefix lengths must list one value per node")
            return list(c.prefix_lens)
        return [rng.choice(list(c.prefix_lens)) for _ in range(c.nodes)]

    def _build_links(self) -> None:
        c = self.config
        if c.latency == "regions":
            self.regions = RegionTable.load(c.regions_file)
            assign = self.regions.assign(c.nodes, c.seed + 3)
            self._region_of = {i.key: r for i, r in zip(self.identities, assign)}
            self._lat = RegionLatency(self.regions, _KeyMap(self._region_of), c.seed + 4)
            for i in self.identities:
                self._uplink[i.key] = self.regions.upload_mbps[self._region_of[i.key]] * 1e6
        elif c.latency == "constant":
            self._lat = ConstantLatency(ms(c.latency_ms[0]))
        elif c.latency == "uniform":
            self._lat = UniformLatency(ms(c.latency_ms[0]), ms(c.latency_ms[1]), c.seed + 4)
        else:
            raise ValueError(f"unknown latency model {c.latency!r}")
        if c.uplink_mbps is not None or not self._uplink:
            rate = (c.uplink_mbps or 20.0) * 1e6
            self._default_uplink = rate
            for i in self.identities:
                self._uplink[i.key] = rate
        else:
            self._default_uplink = 20.0 * 1e6

    def _latency(self, src: int, dst: int) -> int:
        if self.regions is not None and (src not in self._region_of or dst not in self._region_of):
            return ms(self.regions.rtt_ms[0][0] / 2)
        return self._lat(src, dst)

    def _uplink_of(self, node: int) -> float:
        return self._uplink.get(node, self._default_uplink)

    # --------------------------------------------------------- transport

    def send(self, src: int, dst: int, message: Any, block: Any = None) -> Optional[tuple[int, int]]:
        split = message_bytes(message, self.mode, self.model, self.verkle).split
        return self.sim.transmit(src, dst, message, split, block)

    def _book(self, src: int, dst: int, message: Any, block: Any) -> None:
        split = message_bytes(message, self.mode, self.model, self.verkle).split
        self.ledger.book_send(src, block, split)
        self.ledger.book_recv(dst, block, split)

    def alive(self, key: int) -> bool:
        return key not in self.sim.dead

    def lookup(self, requester: int, account: int, block: Any = None, exclude: Iterable[int] = ()) -> int:
        """Iterative lookup for a storer of ``account``; lookup bytes are booked now."""
        ex = set(exclude)
        res = iterative_lookup(
            self.tables[requester],
            account,
            self.tables,
            self.config.alpha,
            alive=lambda k: k not in ex and self.alive(k),
        )
        self._book_queries(requester, account, res.queries, block)
        return res.holder.key

    def lookup_region(self, requester: int, region: tuple[int, int], exclude: Iterable[int] = ()) -> int:
        """A live node whose owned range contains the whole region (path, plen)."""
        path, plen = region
        w = self.width
        key = path << (w - plen) if plen else 0
        ex = set(exclude)

        def holds(p: NodeIdentity, acct: int) -> bool:
            return p.key != requester and p.prefix_len <= plen and cpl(p.key, acct, w) >= p.prefix_len

        res = iterative_lookup(
            self.tables[requester],
            key,
            self.tables,
            self.config.alpha,
            holds=holds,
            alive=lambda k: k not in ex and self.alive(k) and not self.nodes[k].state.syncing,
        )
        self._book_queries(requester, key, res.queries, "sync")
        return res.holder.key

    def _book_queries(self, requester: int, target: int, queries, block) -> None:
        for q, n in queries:
            self._book(requester, q, LookupRequest(target), block)
            self._book(q, requester, LookupResponse(target, [None] * n), block)

    def fetch(self, src: int, dst: int, req: StateRequest):
        """Synchronous request/response used by a proposer gathering state."""
        self._book(src, dst, req, req.block_number)
        resp = self.nodes[dst].serve(req)
        self._book(dst, src, resp, req.block_number)
        return resp

    # ------------------------------------------------------------ blocks

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def run_block(self, proposer: int, transactions: Sequence[Transaction]) -> Block:
        """Propose one block, let it disseminate to quiescence, advance to the next slot."""
        t0 = self.sim.now
        node = self.nodes[proposer]
        block, _ = node.propose_block(transactions)
        self.blocks.append(block)
        self.oracle.apply(transactions)
        self.sim.run()
        self.sim.run(until=t0 + ms(self.config.block_interval_ms))
        return block

    def pick_proposer(self, number: int) -> int:
        live = sorted(k for k in self.nodes if self.alive(k) and self.nodes[k].synced)
        h = hashlib.sha256(f"proposer:{self.config.seed}:{number}".encode()).digest()
        return live[int.from_bytes(h[:8], "big") % len(live)]

    def run_trace(self, trace: AccessTrace, blocks: Optional[int] = None) -> list[Block]:
        out = []
        for i, (_, txs) in enumerate(trace.transactions()):
            if blocks is not None and i >= blocks:
                break
            out.append(self.run_block(self.pick_proposer(len(self.blocks)), txs))
        return out

    # ------------------------------------------------------------- checks

    def converged(self) -> bool:
        root = self.oracle.state.global_root
        return all(n.state.global_root == root for k, n in self.nodes.items() if self.alive(k))

    def unverified_used(self) -> int:
        return sum(n.state.unverified_used for n in self.nodes.values())

    def forward_before_fetch(self) -> bool:
        return all(n.metrics.forward_before_fetch() for n in self.nodes.values())

    def check_owned_against_oracle(self, key: int) -> bool:
        st = self.nodes[key].state
        return list(st.owned_items()) == self.oracle.leaves(st.prefix_path, st.prefix_len)

    # -------------------------------------------------------------- churn

    def churn_join(self, identity: NodeIdentity, observers: Optional[int] = None) -> ProtocolNode:
        """Add an empty node that validates statelessly while syncing its range by snapshots."""
        if identity.key in self.nodes:
            raise ValueError("node id already in use")
        if identity.width != self.width:
            raise ValueError(f"node id is {identity.width} bits, the network uses {self.width}")
        w = self.width
        path = identity.key >> (w - identity.prefix_len) if identity.prefix_len else 0
        root = self.oracle.state.global_root
        state = PartialState.empty(w, path, identity.prefix_len, root)
        node = ProtocolNode(identity, state, self, self.config.node_config())
        node.height = self.height
        self.nodes[identity.key] = node
        self.identities.append(identity)
        self.sim.handlers[identity.key] = node.on_event
        table = RoutingTable(identity, self.config.k)
        rng = random.Random(f"join:{self.config.seed}:{identity.key}")
        others = sorted(k for k in self.tables)
        for k in rng.sample(others, min(self.config.table_peers, len(others))):
            table.observe(self.tables[k].owner)
        self.tables[identity.key] = table
        for k in rng.sample(others, min(observers or self.config.fanout, len(others))):
            self.tables[k].observe(identity)
            self.peers[k].append(identity.key)
        self.peers[identity.key] = sorted(rng.sample([p.key for p in table.entries()], min(self.config.fanout, len(table))))
        if self.regions is not None:
            self._region_of[identity.key] = 0
        node.start_sync()
        return node

    def rejoin(self, key: int) -> RejoinReport:
        """Bring a node that missed blocks back to the current root by diff descent.

        Subtrees whose digest matches an up-to-date storer are reused from the
        stale copy; the rest are fetched as snapshots.  Exchanges are
        synchronous and booked to the ledger under the "sync" block key.
        """
        node = self.nodes[key]
        self.sim.revive(key)
        old = node.state
        w = self.width
        region = (old.prefix_path, old.prefix_len)
        peer = self.lookup_region(key, region, exclude={key})
        peer_node = self.nodes[peer]
        report = RejoinReport(0, 0)

        def diff(path: int, plen: int, with_proof: bool = False):
            req = DiffRequest(path, plen, with_proof)
            self._book(key, peer, req, "sync")
            resp = peer_node.diff_response(req)
            self._book(peer, key, resp, "sync")
            report.diff_requests += 1
            return resp

        def own(path: int, plen: int) -> bytes:
            return old.accounts.digest_at(path, plen)

        top = diff(*region, with_proof=True)
        stale: list[tuple[int, int]] = []
        if top.digest != own(*region):
            todo = [(region, top)]
            while todo:
                (path, plen), resp = todo.pop()
                for bit in (0, 1):
                    child = ((path << 1) | bit, plen + 1)
                    if resp.children[bit] == own(*child):
                        continue
                    if resp.kinds[bit] in ("leaf", "empty") or child[1] >= w:
                        stale.append(child)
                    else:
                        todo.append((child, diff(*child)))
        report.stale_paths = sorted(stale)
        records = {a: r for a, r in old.records.items() if old.owns(a) and not _under_any(a, stale, w)}
        slots = {a: dict(old.slot_values.get(a, {})) for a, r in records.items() if r.kind == CONTRACT}
        code = {r.code_hash: old.code.get(r.code_hash) for r in records.values() if r.code_hash is not None}
        for path, plen in stale:
            req = SnapshotRequest(path, plen)
            self._book(key, peer, req, "sync")
            snap = peer_node.state.subtree_snapshot(path, plen)
            self._book(peer, key, SnapshotResponse(path, plen, snap), "sync")
            report.snapshots += 1
            for r in snap.records:
                records[r.address] = r
                if r.kind == CONTRACT:
                    slots[r.address] = dict(snap.slots.get(r.address, {}))
            code.update(snap.code)
        root = peer_node.state.global_root
        merged = Snapshot(region[0], region[1], w, root, sorted(records.values(), key=lambda r: r.address), slots, code, top.proof_path)
        fresh = PartialState.empty(w, region[0], region[1], root, old.hasher)
        fresh.load_snapshot(merged)
        if fresh.subtree_root() != top.digest:
            raise VerificationError("rejoined range does not match the storer's digest")
        node.state = fresh
        node.cache = type(node.cache)({s: c.capacity for s, c in node.cache.segments.items()}, node.cache.mode)
        node.cached_code.clear()
        node.height = peer_node.height
        node.witness.clear()
        node.jobs.clear()
        node.buffered.clear()
        return report


def _under_any(a: int, regions: Sequence[tuple[int, int]], width: int) -> bool:
    return any(cpl(a, p << (width - n), width) >= n for p, n in regions)


class _KeyMap:
    """Adapter so region latency can index by node key."""

    def __init__(self, m: dict[int, int]):
        self.m = m

    def __getitem__(self, k: int) -> int:
        return self.m[k]
