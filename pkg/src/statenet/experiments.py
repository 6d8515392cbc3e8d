"""The evaluation experiments: lookup cost, extra bandwidth, propagation latency, storage, convergence.

Each runner takes an :class:`~statenet.config.ExperimentSpec` and returns a
:class:`Table` whose CSV form starts with a provenance line (seed, config
hash, size-model version, tool version).  Tables carry no timestamps, so a
rerun of the same spec is byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .address import Address, NodeIdentity
from .bandwidth import (
    EXTRA_CATEGORIES,
    TraceAccess,
    baseline_per_block,
    measure_point,
    measured_ids,
    state_list_per_block,
    witness_per_block,
)
from .cache import MERKLE, VERKLE
from .config import ConfigError, ExperimentSpec
from .network import Network, genesis_from_universe
from .routing import LookupFailed, RoutingTable, bootstrap, iterative_lookup
from .sim import ConstantLatency, RegionTable, UniformLatency, ms, propagation_net, run_propagation
from .workload.sizes import SIZE_MODEL_VERSION
from .workload.storage import empirical_replication, monte_carlo_loss, savings_from_fractions

TABLE_SCHEMA = "statenet-table/1"


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, table has {len(self.columns)} columns")
        self.rows.append(list(row))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def where(self, **match) -> list[dict]:
        out = []
        for r in self.rows:
            d = dict(zip(self.columns, r))
            if all(d[k] == v for k, v in match.items()):
                out.append(d)
        return out

    def header_line(self) -> str:
        items = " ".join(f"{k}={v}" for k, v in sorted(self.provenance.items()))
        return f"# {TABLE_SCHEMA} {items}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(self.header_line() + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def manifest(self) -> dict:
        text = self.to_csv()
        return {
            "schema": TABLE_SCHEMA,
            "table": f"{self.name}.csv",
            "columns": self.columns,
            "rows": len(self.rows),
            "sha256": hashlib.sha256(text.encode()).hexdigest(),
            "provenance": dict(sorted(self.provenance.items())),
        }

    def write(self, out_dir) -> tuple[Path, Path]:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        csv_path = d / f"{self.name}.csv"
        csv_path.write_text(self.to_csv())
        man = d / f"{self.name}.manifest.json"
        man.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return csv_path, man


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def provenance(spec: ExperimentSpec) -> dict:
    return {
        "axis": spec.axis,
        "experiment": spec.kind,
        "name": spec.name,
        "seed": spec.seed,
        "config": spec.digest(),
        "size_model": SIZE_MODEL_VERSION,
        "tool": f"statenet-{__version__}",
    }


def _table(spec: ExperimentSpec, columns: list[str]) -> Table:
    return Table(spec.name, columns, provenance=provenance(spec))


# ------------------------------------------------------------------ search


def lookup_population(n: int, k: int, prefix_len: int, width: int, seed: int, table_peers: int):
    rng = random.Random(seed)
    keys = rng.sample(range(1 << width), n) if width <= 60 else [rng.getrandbits(width) for _ in range(n)]
    ids = [NodeIdentity(Address(x, width), prefix_len) for x in keys]
    tables = {i.key: RoutingTable(i, k) for i in ids}
    bootstrap(tables, ids, table_peers, random.Random(seed + 1))
    return ids, tables


def run_search_experiment(spec: ExperimentSpec) -> Table:
    """Mean and tail lookup rounds per sweep value over seeded random (requester, account) pairs.

    Accounts are drawn uniformly from the covered part of the keyspace (a
    population too small for its prefix length leaves some prefixes with no
    storer; the ``covered`` column reports that share).  A lookup that still
    finds no holder counts toward the failure rate.
    """
    if spec.kind != "search-iterations":
        raise ConfigError("run_search_experiment needs kind = search-iterations")
    c = spec.sim
    if not isinstance(c.prefix_lens, int):
        raise ConfigError("search experiments use one uniform prefix length ([sim] prefix_lens = <int>)")
    m = int(spec.options["lookups"])
    t = _table(spec, ["nodes", "k", "prefix_len", "lookups", "mean_iterations", "p50", "p95", "max", "mean_messages", "failure_rate", "covered"])
    for v in spec.values:
        n, k, pl = c.nodes, c.k, c.prefix_lens
        if spec.axis == "k":
            k = int(v)
        elif spec.axis == "prefix_len":
            pl = int(v)
        else:
            n = int(v)
        ids, tables = lookup_population(n, k, pl, c.width, c.seed, c.table_peers)
        rng = random.Random(c.seed + 7)
        shift = c.width - pl
        prefixes = {i.key >> shift for i in ids}
        its, msgs, failed = [], [], 0
        for _ in range(m):
            account = rng.getrandbits(c.width)
            while account >> shift not in prefixes:
                account = rng.getrandbits(c.width)
            req = ids[rng.randrange(n)]
            try:
                r = iterative_lookup(tables[req.key], account, tables, c.alpha)
            except LookupFailed:
                failed += 1
                continue
            its.append(r.iterations)
            msgs.append(r.messages)
        a = np.asarray(its, dtype=float) if its else np.zeros(1)
        t.add(
            n, k, pl, m,
            float(a.mean()),
            float(np.percentile(a, 50)),
            float(np.percentile(a, 95)),
            int(a.max()),
            float(np.mean(msgs)) if msgs else 0.0,
            failed / m,
            len(prefixes) / 2**pl,
        )
    return t


# --------------------------------------------------------------- bandwidth


def _hot_split(access: TraceAccess, mode: str) -> dict[str, int]:
    return access.hot_set(mode=mode)


def run_bandwidth_experiment(spec: ExperimentSpec, access: Optional[TraceAccess] = None) -> Table:
    """Mean extra bytes per block for measured nodes, by category, at each sweep value.

    ``bandwidth-vs-prefix`` sweeps the prefix length with no cache (a value of
    ``width`` is the stateless case).  The cache kinds size the cache as a
    fraction of the Merkle-charged hot set (or in bytes) at a fixed prefix
    length; ``verkle-bandwidth`` reports both modes at equal capacity.
    """
    if spec.kind not in ("bandwidth-vs-prefix", "bandwidth-vs-cache", "verkle-bandwidth"):
        raise ConfigError(f"{spec.kind} is not a bandwidth experiment")
    o = spec.options
    access = access or TraceAccess.from_trace(spec.trace.load())
    warmup = int(o["warmup"])
    nodes = measured_ids(int(o["measured_nodes"]), access.width, spec.seed)
    base = float(baseline_per_block(access)[warmup:].mean())
    slist = float(state_list_per_block(access)[warmup:].mean())
    modes = (MERKLE, VERKLE) if spec.kind == "verkle-bandwidth" else (spec.sim.mode,)
    witness = witness_per_block(access) if VERKLE in modes else None
    hot_m = _hot_split(access, MERKLE)
    hot_total = sum(hot_m.values())
    lead = [] if spec.axis == "prefix_len" else [spec.axis]
    cols = lead + ["mode", "prefix_len", "cache_bytes", "extra_bytes"] + list(EXTRA_CATEGORIES)
    cols += ["baseline_bytes", "state_list_bytes", "extra_over_baseline", "bypass_rate"]
    t = _table(spec, cols)
    t.provenance["hot_set_bytes"] = hot_total
    for v in spec.values:
        for mode in modes:
            if spec.axis == "prefix_len":
                pl, cap = int(v), 0
            else:
                pl = int(o["prefix_len"])
                cap = int(round(float(v) * hot_total)) if spec.axis == "cache_fraction" else int(v)
            split = _hot_split(access, mode) if cap else None
            p = measure_point(
                access, nodes, pl, mode, cap, split, warmup, witness=witness, prewarm=bool(o["prewarm"])
            )
            t.add(
                *([v] if lead else []), mode, pl, cap, p.mean_extra,
                *[p.categories[c] for c in EXTRA_CATEGORIES],
                base, slist, p.mean_extra / base, p.bypass_rate,
            )
    return t


# ----------------------------------------------------------------- latency


def run_latency_experiment(spec: ExperimentSpec) -> Table:
    """Coverage percentiles per block size on one seeded topology, plus deltas to the first size."""
    if spec.kind != "propagation-latency":
        raise ConfigError("run_latency_experiment needs kind = propagation-latency")
    c = spec.sim
    regions = RegionTable.load(c.regions_file)
    net = propagation_net(
        c.nodes, c.fanout, c.seed, regions, int(spec.options["table_peers"]), c.k, c.width,
        ms(float(spec.options["validation_ms"])),
    )
    if c.latency == "constant":
        net.latency = ConstantLatency(ms(c.latency_ms[0]))
    elif c.latency == "uniform":
        net.latency = UniformLatency(ms(c.latency_ms[0]), ms(c.latency_ms[1]), c.seed + 3)
    if c.uplink_mbps is not None:
        net.uplink = [c.uplink_mbps * 1e6] * c.nodes
    qs = (0.5, 0.67, 0.95, 0.99, 1.0)
    names = ["t50_ms", "t67_ms", "t95_ms", "t99_ms", "t100_ms"]
    t = _table(spec, ["block_bytes"] + names + [f"d{n[1:]}" for n in names])
    first: Optional[list[float]] = None
    for v in spec.values:
        cov, _ = run_propagation(net, int(v))
        p = [cov.percentile(q) / 1000 for q in qs]
        first = first or p
        t.add(int(v), *p, *[a - b for a, b in zip(p, first)])
    return t


# ----------------------------------------------------------------- storage


def run_storage_report(spec: ExperimentSpec) -> Table:
    """Closed-form savings and loss probability, a Monte-Carlo check, and empirical replication."""
    if spec.kind != "storage-savings":
        raise ConfigError("run_storage_report needs kind = storage-savings")
    c = spec.sim
    trials = int(spec.options["trials"])
    items = int(spec.options["replication_items"])
    t = _table(spec, [
        "nodes", "prefix_len", "stored_fraction", "savings", "loss_probability",
        "mc_loss", "mc_savings", "mc_se", "mc_sigmas", "placement_prefix_len", "replication_mean", "replication_expected", "unreplicated",
    ])
    for v in spec.values:
        f = float(v) if spec.axis == "stored_fraction" else 2.0 ** (-float(v))
        r = savings_from_fractions([f] * c.nodes)
        mc, mc_sav, se = monte_carlo_loss([f] * c.nodes, trials, c.seed)
        sig = abs(mc - r.loss_probability) / se
        # integer prefix lengths for the placement check; fractional ones round to the nearest
        pl = max(0, int(round(-np.log2(f)))) if f > 0 else c.width
        reps = empirical_replication(c.nodes, pl, c.width, items, c.seed)
        t.add(
            c.nodes, -np.log2(f) if f > 0 else float(c.width), f, r.savings, r.loss_probability, mc, mc_sav, se, sig,
            pl, float(reps.mean()), c.nodes * 2.0 ** (-pl), float((reps == 0).mean()),
        )
    return t


# ------------------------------------------------------------- convergence


def run_protocol_experiment(spec: ExperimentSpec, on_block: Optional[Callable] = None) -> Table:
    """Full protocol run over a trace: per-block convergence, verification and ordering checks."""
    if spec.kind != "protocol-convergence":
        raise ConfigError("run_protocol_experiment needs kind = protocol-convergence")
    trace = spec.trace.load()
    blocks = int(spec.values[-1])
    net = Network(spec.sim, genesis_from_universe(trace.universe()))
    t = _table(spec, [
        "block", "proposer", "txs", "oracle_root", "nodes_converged", "nodes",
        "unverified_used", "forward_before_fetch", "requests", "lookups", "bytes_received",
    ])
    seen_bytes = 0
    for i, (_, txs) in enumerate(trace.transactions()):
        if i >= blocks:
            break
        prop = net.pick_proposer(len(net.blocks))
        b = net.run_block(prop, txs)
        root = net.oracle.state.global_root
        conv = sum(1 for n in net.nodes.values() if n.state.global_root == root)
        total = net.ledger.total_received
        t.add(
            b.number, f"{prop:0{(net.width + 3) // 4}x}", len(txs), root.hex()[:16], conv, len(net.nodes),
            net.unverified_used(), net.forward_before_fetch(),
            sum(n.metrics.requests_sent for n in net.nodes.values()),
            sum(n.metrics.lookups for n in net.nodes.values()),
            total - seen_bytes,
        )
        seen_bytes = total
        if on_block is not None:
            on_block(i, net)
    net.ledger.check()
    return t


RUNNERS = {
    "search-iterations": run_search_experiment,
    "bandwidth-vs-prefix": run_bandwidth_experiment,
    "bandwidth-vs-cache": run_bandwidth_experiment,
    "verkle-bandwidth": run_bandwidth_experiment,
    "propagation-latency": run_latency_experiment,
    "storage-savings": run_storage_report,
    "protocol-convergence": run_protocol_experiment,
}


def run_experiment(spec: ExperimentSpec) -> Table:
    return RUNNERS[spec.kind](spec)
