"""The ten acceptance criteria as runnable checks.

Each check returns a :class:`CriterionResult` with the measured values, the
verdict and the raw output text it was judged on; criterion 10 reruns
criteria 1-9 and compares those texts byte for byte.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cache import MERKLE, VERKLE
from .chain import Block
from .config import acceptance_spec
from .experiments import Table, run_experiment
from .messages import BlockAnnounce
from .workload.sizes import (
    REF_BLOCK_TOTAL,
    REF_BLOCK_WITNESS,
    data_size,
    default_verkle_model,
    fit_log_regression,
    hexary_proof_sizes,
    linear_r_squared,
    measure_hexary_curve,
    message_bytes,
    reference_access_set,
)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float
    limit_s: float
    metrics: dict = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    @property
    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} [{self.number}] {self.title}: {self.detail} ({self.seconds:.1f}s / {self.limit_s:.0f}s)"


def _json(d: dict) -> str:
    return json.dumps(d, sort_keys=True, indent=1, default=float) + "\n"


def _tables(*names: str) -> dict[str, Table]:
    return {n: run_experiment(acceptance_spec(n)) for n in names}


def _timed(fn: Callable[[], tuple[bool, str, dict, dict]], number: int, title: str, limit: float) -> CriterionResult:
    t0 = time.perf_counter()
    ok, detail, metrics, outputs = fn()
    dt = time.perf_counter() - t0
    within = dt < limit
    if not within:
        detail += f"; runtime {dt:.0f}s over limit"
    return CriterionResult(number, title, ok and within, detail, dt, limit, metrics, outputs)


# ---------------------------------------------------------------- criteria


def criterion_1() -> CriterionResult:
    def run():
        t = _tables("c1_storage")["c1_storage"]
        r = t.where()[0]
        ok = 1e-9 <= r["loss_probability"] <= 3e-9 and r["savings"] >= 0.979 and r["mc_sigmas"] <= 3.0
        detail = f"loss {r['loss_probability']:.3g}, savings {r['savings']:.2%}, Monte-Carlo {r['mc_sigmas']:.2f} sigma"
        return ok, detail, r, {t.name: t.to_csv()}

    return _timed(run, 1, "data-loss closed form", 10)


SLOT_TRIE_ENTRIES = 2**18


def criterion_2() -> CriterionResult:
    def run():
        rng = np.random.default_rng(2)
        keys = rng.integers(0, 2**63, size=SLOT_TRIE_ENTRIES, dtype=np.uint64) * np.uint64(2)
        proof = float(hexary_proof_sizes(keys).mean())
        data = 64.0
        share = proof / (proof + data)
        m = {"entries": SLOT_TRIE_ENTRIES, "mean_proof_bytes": proof, "slot_data_bytes": data, "proof_share": share}
        return share >= 0.95, f"proof share {share:.2%} at {SLOT_TRIE_ENTRIES} entries", m, {"c2_proof_share": _json(m)}

    return _timed(run, 2, "proof overhead", 60)


def criterion_3() -> CriterionResult:
    def run():
        curve = measure_hexary_curve([2**e for e in range(8, 21)], seed=1)
        fit = fit_log_regression(curve)
        m = {"a": fit.a, "b": fit.b, "r_squared": fit.r_squared, "curve": [[n, s] for n, s in curve]}
        return fit.r_squared >= 0.98, f"size = {fit.a:.1f} + {fit.b:.1f} ln n, R^2 {fit.r_squared:.4f}", m, {"c3_proof_fit": _json(m)}

    return _timed(run, 3, "proof-size regression", 120)


def criterion_4() -> CriterionResult:
    def run():
        ts = _tables("c4_search_k", "c4_search_prefix", "c4_search_nodes")
        its_k = ts["c4_search_k"].column("mean_iterations")
        mono = all(b <= a for a, b in zip(its_k, its_k[1:]))
        tp = ts["c4_search_prefix"]
        _, slope, r2 = linear_r_squared(tp.column("prefix_len"), tp.column("mean_iterations"))
        n1, n2 = ts["c4_search_nodes"].column("mean_iterations")
        change = abs(n2 - n1) / n1
        fails = max(max(t.column("failure_rate")) for t in ts.values())
        ok = mono and r2 >= 0.9 and slope > 0 and change < 0.2 and fails == 0
        detail = (
            f"k sweep {[round(x, 3) for x in its_k]} (non-increasing: {mono}); "
            f"PL fit R^2 {r2:.3f}; doubling nodes {change:.1%}; failure rate {fails}"
        )
        m = {"k_means": its_k, "pl_r_squared": r2, "pl_slope": slope, "node_change": change, "failure_rate": fails}
        return ok, detail, m, {n: t.to_csv() for n, t in ts.items()}

    return _timed(run, 4, "lookup behavior", 300)


def criterion_5() -> CriterionResult:
    def run():
        t = _tables("c5_bandwidth_prefix")["c5_bandwidth_prefix"]
        rows = t.where(mode=MERKLE)
        width = acceptance_spec("c5_bandwidth_prefix").sim.width
        sweep = [r for r in rows if r["prefix_len"] <= 10]
        x = [1 - 2.0 ** -r["prefix_len"] for r in sweep]
        y = [r["extra_bytes"] for r in sweep]
        _, _, r2 = linear_r_squared(x, y)
        zero = next(r["extra_bytes"] for r in rows if r["prefix_len"] == 0)
        stateless = next(r for r in rows if r["prefix_len"] == width)
        ratio = stateless["extra_over_baseline"]
        ok = zero == 0 and r2 >= 0.95 and ratio >= 20
        detail = f"PL 0 extra {zero:g} B; fit vs 1-2^-PL R^2 {r2:.4f}; stateless/baseline {ratio:.1f}x"
        return ok, detail, {"r_squared": r2, "ratio": ratio, "zero": zero}, {t.name: t.to_csv()}

    return _timed(run, 5, "bandwidth linearity and endpoints", 600)


def criterion_6() -> CriterionResult:
    def run():
        t = _tables("c6_cache")["c6_cache"]
        m0 = t.where(mode=MERKLE, cache_fraction=0.0)[0]["extra_bytes"]
        m1 = t.where(mode=MERKLE, cache_fraction=0.1)[0]["extra_bytes"]
        v1 = t.where(mode=VERKLE, cache_fraction=0.1)[0]["extra_bytes"]
        cut = 1 - m1 / m0
        ok = cut >= 0.40 and v1 < m1
        detail = f"10% cache cuts extra bytes by {cut:.1%}; Verkle {v1 / 1e3:.0f} kB < Merkle {m1 / 1e3:.0f} kB per block"
        return ok, detail, {"reduction": cut, "merkle": m1, "verkle": v1}, {t.name: t.to_csv()}

    return _timed(run, 6, "cache effect", 600)


def criterion_7() -> CriterionResult:
    def run():
        model = default_verkle_model()
        out = {}
        ok = True
        for label, seed in (("calibration_set", None), ("seeded_set", 1)):
            sl = reference_access_set(seed)
            ann = BlockAnnounce(Block(1, 0, b"\0" * 32, b"\0" * 32), sl)
            witness = message_bytes(ann, VERKLE, verkle=model).split["witness"]
            total = witness + data_size(sl).total
            ok &= abs(witness / REF_BLOCK_WITNESS - 1) <= 0.10 and abs(total / REF_BLOCK_TOTAL - 1) <= 0.10
            out[label] = {"witness_bytes": witness, "total_bytes": total}
        delta = model.witness_bytes([256]) - model.witness_bytes([1])
        out["same_leaf_delta"] = delta
        ok &= delta == 32
        s = out["seeded_set"]
        detail = (
            f"witness {s['witness_bytes'] / 1e3:.2f} kB, total {s['total_bytes'] / 1e3:.2f} kB "
            f"(seeded set); 256-vs-1 delta {delta} B"
        )
        return ok, detail, out, {"c7_verkle": _json(out)}

    return _timed(run, 7, "Verkle model calibration", 10)


def criterion_8() -> CriterionResult:
    def run():
        t = _tables("c8_protocol")["c8_protocol"]
        rows = t.where()
        blocks = int(acceptance_spec("c8_protocol").values[-1])
        conv = all(r["nodes_converged"] == r["nodes"] for r in rows)
        unverified = rows[-1]["unverified_used"]
        fbf = all(r["forward_before_fetch"] for r in rows)
        ok = len(rows) == blocks and conv and unverified == 0 and fbf
        detail = f"{len(rows)} blocks, {rows[-1]['nodes']} nodes: converged {conv}, unverified reads {unverified}, forward-before-fetch {fbf}"
        return ok, detail, {"blocks": len(rows), "converged": conv, "unverified": unverified, "fbf": fbf}, {t.name: t.to_csv()}

    return _timed(run, 8, "protocol safety and convergence", 600)


def criterion_9() -> CriterionResult:
    def run():
        t = _tables("c9_latency")["c9_latency"]
        big = t.rows[-1]
        r = dict(zip(t.columns, big))
        d67, d95 = r["d67_ms"], r["d95_ms"]
        ok = 0 < d67 < d95
        detail = f"t67 delta {d67 / 1e3:.2f} s < t95 delta {d95 / 1e3:.2f} s"
        return ok, detail, {"d67_ms": d67, "d95_ms": d95}, {t.name: t.to_csv()}

    return _timed(run, 9, "propagation latency", 900)


CRITERIA: dict[int, Callable[[], CriterionResult]] = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
}


def criterion_10(first: Optional[dict[int, CriterionResult]] = None) -> CriterionResult:
    """Rerun criteria 1-9 and compare every output byte for byte with ``first``."""
    t0 = time.perf_counter()
    first = dict(first or {})
    for n, fn in CRITERIA.items():
        if n not in first:
            first[n] = fn()
    differ = []
    count = 0
    for n, fn in CRITERIA.items():
        again = fn()
        for name, text in first[n].outputs.items():
            count += 1
            if again.outputs.get(name) != text:
                differ.append(name)
    dt = time.perf_counter() - t0
    ok = not differ and count > 0
    detail = f"{count} outputs identical on rerun" if ok else f"outputs differ: {', '.join(differ)}"
    return CriterionResult(10, "determinism", ok, detail, dt, float("inf"), {"outputs": count, "differ": differ})


def run_all(progress: Optional[Callable[[CriterionResult], None]] = None) -> list[CriterionResult]:
    results = {}
    for n, fn in CRITERIA.items():
        results[n] = fn()
        if progress:
            progress(results[n])
    r10 = criterion_10(results)
    if progress:
        progress(r10)
    return [results[n] for n in CRITERIA] + [r10]
