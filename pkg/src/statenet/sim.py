"""Deterministic discrete-event network simulator.

Time is kept in integer microseconds.  Events pop in (time, sequence)
order, so equal-time events fire in creation order.  The only bandwidth
constraint is the sender's uplink: messages leaving one node are serialized
FIFO at its upload rate, then spend a per-link propagation delay in flight.
"""
from __future__ import annotations

import hashlib
import heapq
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import networkx as nx
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

US = 1_000_000  # microseconds per second


def ms(x: float) -> int:
    return int(round(x * 1000))


# ------------------------------------------------------------- latency


def _link_hash(seed: int, a: int, b: int) -> float:
    """Uniform [0, 1) value fixed per directed link."""
    h = hashlib.sha256(f"{seed}:{a}:{b}".encode()).digest()
    return int.from_bytes(h[:8], "big") / 2**64


class ConstantLatency:
    def __init__(self, delay_us: int):
        if delay_us < 0:
            raise ValueError("latency must be non-negative")
        self.delay_us = delay_us

    def __call__(self, src: int, dst: int) -> int:
        return self.delay_us


class UniformLatency:
    """One-way delay drawn once per directed link from [lo, hi] microseconds."""

    def __init__(self, lo_us: int, hi_us: int, seed: int = 0):
        if not 0 <= lo_us <= hi_us:
            raise ValueError("need 0 <= lo <= hi")
        self.lo, self.hi, self.seed = lo_us, hi_us, seed

    def __call__(self, src: int, dst: int) -> int:
        return self.lo + int((self.hi - self.lo) * _link_hash(self.seed, src, dst))


@dataclass(frozen=True)
class RegionTable:
    """Inter-region round-trip times (ms), node shares and upload rates (Mbit/s)."""

    names: tuple[str, ...]
    rtt_ms: tuple[tuple[float, ...], ...]
    node_share: tuple[float, ...]
    upload_mbps: tuple[float, ...]
    jitter: float = 0.1

    def __post_init__(self) -> None:
        n = len(self.names)
        if any(len(row) != n for row in self.rtt_ms) or len(self.rtt_ms) != n:
            raise ValueError("rtt matrix must be square and match the region names")
        if len(self.node_share) != n or len(self.upload_mbps) != n:
            raise ValueError("node_share and upload_mbps need one entry per region")
        if abs(sum(self.node_share) - 1.0) > 1e-6:
            raise ValueError("node shares must sum to 1")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RegionTable:
        names = tuple(d["names"])
        rtt = tuple(tuple(float(x) for x in d["rtt_ms"][n]) for n in names)
        return cls(
            names,
            rtt,
            tuple(float(d["node_share"][n]) for n in names),
            tuple(float(d["upload_mbps"][n]) for n in names),
            float(d.get("jitter", 0.1)),
        )

    @classmethod
    def load(cls, path=None) -> RegionTable:
        """Read a region file; ``None`` loads the shipped default."""
        if path is None:
            text = resources.files("statenet").joinpath("data/regions.toml").read_text()
        else:
            with open(path) as f:
                text = f.read()
        return cls.from_dict(tomllib.loads(text))

    def assign(self, n: int, seed: int = 0) -> list[int]:
        """Region index per node, proportional to the node shares."""
        rng = np.random.default_rng(seed)
        return [int(x) for x in rng.choice(len(self.names), size=n, p=np.asarray(self.node_share))]


class RegionLatency:
    """One-way delay = RTT/2 between the two regions, with fixed per-link jitter."""

    def __init__(self, table: RegionTable, regions: Sequence[int], seed: int = 0):
        self.table = table
        self.regions = regions
        self.seed = seed

    def __call__(self, src: int, dst: int) -> int:
        base = self.table.rtt_ms[self.regions[src]][self.regions[dst]] / 2
        j = self.table.jitter
        return ms(base * (1 - j + 2 * j * _link_hash(self.seed, src, dst)))


# ------------------------------------------------------------ ledger


class BandwidthLedger:
    """Bytes sent and received per (node, block, category)."""

    def __init__(self) -> None:
        self.sent: dict[tuple[int, Any, str], int] = defaultdict(int)
        self.recv: dict[tuple[int, Any, str], int] = defaultdict(int)
        self.dropped = 0

    def book_send(self, node: int, block: Any, split: Mapping[str, int]) -> None:
        for cat, n in split.items():
            self.sent[(node, block, cat)] += n

    def book_recv(self, node: int, block: Any, split: Mapping[str, int]) -> None:
        for cat, n in split.items():
            self.recv[(node, block, cat)] += n

    def book_drop(self, split: Mapping[str, int]) -> None:
        self.dropped += sum(split.values())

    @property
    def total_sent(self) -> int:
        return sum(self.sent.values())

    @property
    def total_received(self) -> int:
        return sum(self.recv.values())

    def received(self, node: int, block: Any = None, categories: Optional[Iterable[str]] = None) -> int:
        cats = None if categories is None else set(categories)
        return sum(
            v
            for (n, b, c), v in self.recv.items()
            if n == node and (block is None or b == block) and (cats is None or c in cats)
        )

    def by_category(self, direction: str = "recv") -> dict[str, int]:
        src = self.recv if direction == "recv" else self.sent
        out: dict[str, int] = defaultdict(int)
        for (_, _, c), v in src.items():
            out[c] += v
        return dict(sorted(out.items()))

    def check(self) -> None:
        """Sent bytes are either received or counted as dropped."""
        if self.total_sent != self.total_received + self.dropped:
            raise AssertionError(
                f"ledger not conserved: sent {self.total_sent} != received {self.total_received} + dropped {self.dropped}"
            )


# --------------------------------------------------------- simulator


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    target: int = field(compare=False)
    payload: Any = field(compare=False)


@dataclass
class Delivery:
    src: int
    message: Any
    nbytes: int
    split: dict[str, int]
    block: Any = None
    sent_at: int = 0


@dataclass
class Timer:
    kind: str
    data: Any = None


class Simulator:
    def __init__(
        self,
        latency: Callable[[int, int], int],
        uplink_bps: Callable[[int], float],
        ledger: Optional[BandwidthLedger] = None,
        keep_log: bool = False,
    ):
        self.latency = latency
        self.uplink_bps = uplink_bps
        self.ledger = ledger or BandwidthLedger()
        self.now = 0
        self._seq = 0
        self._queue: list[SimEvent] = []
        self.handlers: dict[int, Callable[[Any], None]] = {}
        self.free_at: dict[int, int] = defaultdict(int)
        self.dead: set[int] = set()
        self.drops = 0
        self.processed = 0
        self._log_hash = hashlib.sha256()
        self.log: Optional[list[str]] = [] if keep_log else None

    def schedule(self, delay: int, target: int, payload: Any) -> int:
        if delay < 0:
            raise ValueError("cannot schedule into the past")
        self._seq += 1
        heapq.heappush(self._queue, SimEvent(self.now + int(delay), self._seq, target, payload))
        return self._seq

    def serialization_us(self, src: int, nbytes: int) -> int:
        bps = self.uplink_bps(src)
        return int(math.ceil(nbytes * 8 * US / bps)) if nbytes else 0

    def transmit(
        self, src: int, dst: int, message: Any, split: Mapping[str, int], block: Any = None
    ) -> Optional[tuple[int, int]]:
        """Queue ``message`` on ``src``'s uplink.

        Returns (transmission start, delivery time), or None when the target
        has left the network (the message is dropped and counted).
        """
        nbytes = sum(split.values())
        start = max(self.now, self.free_at[src])
        done = start + self.serialization_us(src, nbytes)
        self.free_at[src] = done
        self.ledger.book_send(src, block, split)
        if dst in self.dead:
            self.drops += 1
            self.ledger.book_drop(split)
            return None
        arrive = done + self.latency(src, dst)
        self.schedule(arrive - self.now, dst, Delivery(src, message, nbytes, dict(split), block, start))
        return start, arrive

    def kill(self, node: int) -> None:
        self.dead.add(node)

    def revive(self, node: int) -> None:
        self.dead.discard(node)

    def _record(self, ev: SimEvent) -> None:
        p = ev.payload
        if isinstance(p, Delivery):
            kind, nbytes = type(p.message).__name__, p.nbytes
        elif isinstance(p, Timer):
            kind, nbytes = "timer:" + p.kind, 0
        else:
            kind, nbytes = type(p).__name__, 0
        line = f"{ev.time},{ev.target},{kind},{nbytes}"
        self._log_hash.update(line.encode() + b"\n")
        if self.log is not None:
            self.log.append(line)

    def step(self) -> bool:
        if not self._queue:
            return False
        ev = heapq.heappop(self._queue)
        self.now = ev.time
        self.processed += 1
        p = ev.payload
        if isinstance(p, Delivery) and ev.target in self.dead:
            self.drops += 1
            self.ledger.book_drop(p.split)
            return True
        if isinstance(p, Delivery):
            self.ledger.book_recv(ev.target, p.block, p.split)
        self._record(ev)
        handler = self.handlers.get(ev.target)
        if handler is not None:
            handler(p)
        return True

    def run(self, until: Optional[int] = None, max_events: Optional[int] = None) -> int:
        """Process events (up to time ``until``); returns how many ran."""
        n = 0
        while self._queue:
            if until is not None and self._queue[0].time > until:
                break
            if max_events is not None and n >= max_events:
                break
            self.step()
            n += 1
        if until is not None and self.now < until:
            self.now = until
        return n

    @property
    def pending(self) -> int:
        return len(self._queue)

    @property
    def log_digest(self) -> str:
        return self._log_hash.hexdigest()

    def export_log(self, path) -> None:
        if self.log is None:
            raise RuntimeError("simulator was created without keep_log")
        with open(path, "w") as f:
            f.write("time_us,node,kind,bytes\n")
            for line in self.log:
                f.write(line + "\n")


# ----------------------------------------------------------- overlay


def build_overlay(
    candidates: Mapping[int, Sequence[int]], fanout: int, seed: int = 0
) -> dict[int, list[int]]:
    """Pick ``fanout`` outbound gossip peers per node, then make the graph strongly connected.

    If the random choice leaves several strongly connected components, each
    component gets one extra edge to the next in a ring.
    """
    rng = random.Random(seed)
    peers: dict[int, list[int]] = {}
    for node in sorted(candidates):
        pool = sorted(set(candidates[node]) - {node})
        peers[node] = sorted(rng.sample(pool, min(fanout, len(pool))))
    g = nx.DiGraph()
    g.add_nodes_from(peers)
    g.add_edges_from((a, b) for a, bs in peers.items() for b in bs)
    comps = [sorted(c) for c in nx.strongly_connected_components(g)]
    if len(comps) > 1:
        comps.sort(key=lambda c: c[0])
        for i, c in enumerate(comps):
            nxt = comps[(i + 1) % len(comps)]
            peers[c[0]].append(nxt[0])
    return peers


# ------------------------------------------------------- propagation


@dataclass
class Coverage:
    """Time (us after proposal) at which each node first held the block."""

    times: list[int]
    n_nodes: int

    def fraction_at(self, t: int) -> float:
        return sum(1 for x in self.times if x <= t) / self.n_nodes

    def percentile(self, q: float) -> int:
        """Earliest time by which at least ``q`` of all nodes hold the block."""
        need = math.ceil(q * self.n_nodes - 1e-9)
        if need <= 0:
            return 0
        if need > len(self.times):
            raise ValueError(f"only {len(self.times)}/{self.n_nodes} nodes received the block")
        return sorted(self.times)[need - 1]

    def curve(self) -> list[tuple[int, float]]:
        out = []
        for i, t in enumerate(sorted(self.times), start=1):
            if out and out[-1][0] == t:
                out[-1] = (t, i / self.n_nodes)
            else:
                out.append((t, i / self.n_nodes))
        return out

    def percentiles(self, qs: Sequence[float] = (0.5, 0.67, 0.95, 0.99)) -> dict[float, int]:
        return {q: self.percentile(q) for q in qs}


@dataclass
class PropagationNet:
    """A topology reusable across block sizes: regions, uplinks and gossip peers."""

    n: int
    peers: dict[int, list[int]]
    latency: Callable[[int, int], int]
    uplink: list[float]
    validation_us: int = 0


def propagation_net(
    n: int,
    fanout: int = 8,
    seed: int = 0,
    regions: Optional[RegionTable] = None,
    table_peers: int = 64,
    k: int = 16,
    width: int = 32,
    validation_us: int = 0,
) -> PropagationNet:
    """Seeded topology: region per node, routing tables, gossip overlay from the tables."""
    from .address import Address, NodeIdentity
    from .routing import RoutingTable, bootstrap

    regions = regions or RegionTable.load()
    assign = regions.assign(n, seed)
    rng = random.Random(seed)
    keys = rng.sample(range(1 << width), n) if width <= 60 else [rng.getrandbits(width) for _ in range(n)]
    idents = [NodeIdentity(Address(x, width), 0) for x in keys]
    tables = {i.key: RoutingTable(i, k) for i in idents}
    bootstrap(tables, idents, table_peers, random.Random(seed + 1))
    index = {x: j for j, x in enumerate(keys)}
    cands = {index[x]: [index[p.key] for p in tables[x].entries()] for x in keys}
    peers = build_overlay(cands, fanout, seed + 2)
    lat = RegionLatency(regions, assign, seed + 3)
    up = [regions.upload_mbps[r] * 1e6 for r in assign]
    return PropagationNet(n, peers, lat, up, validation_us)


def run_propagation(net: PropagationNet, block_bytes: int, proposer: int = 0) -> tuple[Coverage, Simulator]:
    """Flood one block of ``block_bytes`` through the gossip overlay."""
    sim = Simulator(net.latency, lambda i: net.uplink[i])
    got: dict[int, int] = {proposer: 0}
    split = {"block_body": block_bytes}

    def make(node: int):
        def handle(p) -> None:
            if isinstance(p, Timer):
                for peer in net.peers[node]:
                    sim.transmit(node, peer, "block", split, 0)
                return
            if node in got:
                return
            got[node] = sim.now
            sim.schedule(net.validation_us, node, Timer("forward"))

        return handle

    for i in range(net.n):
        sim.handlers[i] = make(i)
    sim.schedule(0, proposer, Timer("forward"))
    sim.run()
    sim.ledger.check()
    return Coverage(sorted(got.values()), net.n), sim
