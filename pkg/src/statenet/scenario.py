"""Scripted protocol scenarios stored as TOML files.

A scenario lists accounts, nodes (bit-string id, prefix length, gossip
peers, pre-cached accounts), the transactions of one block and the
expected outcome.  See ``data/lifecycle.toml`` for the layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Optional

from .address import Address, NodeIdentity
from .chain import Op, Transaction
from .network import Network, SimConfig
from .state import EXTERNAL, AccountRecord, PartialState

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

SCHEMA = "statenet-scenario/1"


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioResult:
    network: Network
    names: dict[int, str]
    requests: dict[str, list[tuple[str, list[str]]]] = field(default_factory=dict)
    roots: dict[str, bytes] = field(default_factory=dict)
    balances: dict[str, int] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def load_scenario(path: Optional[str] = None) -> dict[str, Any]:
    if path is None:
        text = resources.files("statenet").joinpath("data/lifecycle.toml").read_text()
    else:
        with open(path) as f:
            text = f.read()
    d = tomllib.loads(text)
    if d.get("schema") != SCHEMA:
        raise ScenarioError(f"expected schema {SCHEMA!r}")
    return d


def run_scenario(d: dict[str, Any]) -> ScenarioResult:
    w = int(d["width"])

    def addr(bits: str) -> int:
        if len(bits) != w:
            raise ScenarioError(f"{bits!r} is not a {w}-bit string")
        return int(bits, 2)

    records = [AccountRecord(addr(a["address"]), EXTERNAL, 0, int(a["balance"])) for a in d["accounts"]]
    genesis = PartialState.genesis(w, records)
    names = [n["name"] for n in d["nodes"]]
    by_name = {n["name"]: addr(n["id"]) for n in d["nodes"]}
    if len(set(by_name.values())) != len(names):
        raise ScenarioError("node ids must be distinct")
    idents = [NodeIdentity(Address(by_name[n["name"]], w), int(n["prefix_len"])) for n in d["nodes"]]
    peers = {by_name[n["name"]]: [by_name[p] for p in n.get("peers", [])] for n in d["nodes"]}
    cap = int(d.get("cache_bytes", 0))
    cfg = SimConfig(
        nodes=len(idents),
        width=w,
        prefix_lens=[i.prefix_len for i in idents],
        per_node=True,
        k=max(1, len(idents)),
        fanout=max(len(p) for p in peers.values()),
        cache={"header": cap, "slot": cap, "code": cap} if cap else None,
        latency="constant",
        latency_ms=(float(d.get("latency_ms", 10)),) * 2,
        uplink_mbps=float(d.get("uplink_mbps", 100)),
        table_peers=len(idents),
    )
    net = Network(cfg, genesis, identities=idents, peers=peers)
    full = net.oracle.state
    for n in d["nodes"]:
        node = net.nodes[by_name[n["name"]]]
        for a in n.get("cache", []):
            node.prewarm(full.get_with_proof(addr(a), []))
    txs = []
    for t in d["transactions"]:
        ops = []
        for o in t["ops"]:
            src = o.get("source")
            if src is not None:
                src = (addr(src[0]),) if len(src) == 1 else (addr(src[0]), int(src[1]))
            ops.append(Op(o["kind"], addr(o["address"]), o.get("key"), o.get("value"), o.get("field"), src))
        txs.append(Transaction(int(t["id"]), tuple(ops)))
    net.run_block(by_name[d["proposer"]], txs)

    name_of = {v: k for k, v in by_name.items()}
    res = ScenarioResult(net, name_of)
    for key, node in net.nodes.items():
        nm = name_of[key]
        res.roots[nm] = node.state.global_root
        res.requests[nm] = [
            (name_of[dst], [format(it.address, f"0{w}b") for it in items]) for _, dst, items in node.metrics.request_log
        ]
    for a in d["accounts"]:
        rec = full.records.get(addr(a["address"]))
        res.balances[a["address"]] = rec.balance if rec else 0
    _check(d.get("expect", {}), res, net)
    return res


def _check(expect: dict[str, Any], res: ScenarioResult, net: Network) -> None:
    oracle_root = net.oracle.state.global_root
    for nm, root in res.roots.items():
        if root != oracle_root:
            res.failures.append(f"{nm} ended on a different root")
    for a, v in expect.get("balances", {}).items():
        if res.balances.get(a) != v:
            res.failures.append(f"balance of {a} is {res.balances.get(a)}, expected {v}")
    want = expect.get("requests", {})
    for nm, got in res.requests.items():
        exp = want.get(nm)
        if exp is None:
            if got:
                res.failures.append(f"{nm} sent unexpected requests {got}")
            continue
        if len(got) != 1 or got[0][0] != exp["peer"] or sorted(got[0][1]) != sorted(exp["addresses"]):
            res.failures.append(f"{nm} requested {got}, expected {exp}")
    if net.unverified_used():
        res.failures.append("unverified remote state was used")
    if not net.forward_before_fetch():
        res.failures.append("a node fetched state before forwarding the block")
