"""Synthetic access traces calibrated to mainnet locality statistics.

Calibration targets (defaults):

* the 100 most popular accounts receive 45% of account accesses,
* about two thirds of touched accounts are touched at most twice,
* transactions touch 9.45 storage slots on average,
* deployed code averages 1,630 bytes per contract while the access-weighted
  average is 9,692 bytes, with roughly one distinct blob per ten contracts.

Account popularity is a truncated power law whose exponent is found by
bisection against the realized draws.  Code sizes come from a two-part
mixture (a lognormal body plus a uniform block of large contracts); sizes are
then matched to contracts by a blend of size rank and noise whose weight is
bisected until popular contracts carry the target access-weighted mean.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..address import hashed_key
from ..chain import EXEC_CODE, READ_ACCOUNT, READ_SLOT, WRITE_ACCOUNT, WRITE_SLOT
from .trace import SLOT_OP_SIZE, AccessTrace, TraceOp


class CalibrationError(ValueError):
    """The requested parameters cannot meet a calibration target."""

    def __init__(self, target: str, msg: str):
        super().__init__(f"{target}: {msg}")
        self.target = target


@dataclass(frozen=True)
class TraceParams:
    width: int = 32
    accounts: int = 24_000
    blocks: int = 250
    txs_per_block: int = 120
    extra_accounts_mean: float = 1.33  # accounts per tx beyond the first two
    top100_share: float = 0.45
    skew: Optional[float] = None  # fixed exponent; None calibrates to top100_share
    slots_per_tx: float = 9.45
    slot_universe: int = 1 << 16
    slot_write_prob: float = 0.35
    balance_write_prob: float = 0.3
    hot_ranks: int = 200
    contract_prob_hot: float = 0.7
    contract_prob: float = 0.3
    low_touch_target: Optional[float] = 2 / 3  # None skips the check (tiny traces)
    low_touch_tol: float = 0.05
    code_access_mean: float = 9692.0
    distinct_code_frac: float = 0.10
    code_max: int = 24_576

    def validate(self) -> None:
        if self.accounts < 3:
            raise CalibrationError("accounts", "need at least 3 accounts")
        if self.blocks < 1 or self.txs_per_block < 1:
            raise CalibrationError("volume", "blocks and txs_per_block must be positive")
        if self.width < 8:
            raise CalibrationError("width", "width must be at least 8 bits")
        if self.accounts > (1 << self.width) // 4:
            raise CalibrationError("accounts", f"too many accounts for a {self.width}-bit space")
        if not 0 < self.top100_share < 1:
            raise CalibrationError("top100_share", "must lie in (0, 1)")
        if self.top100_share < min(100, self.accounts) / self.accounts:
            raise CalibrationError("top100_share", "below the uniform share; lower the account count")
        if self.slots_per_tx < 0:
            raise CalibrationError("slots_per_tx", "must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- helpers


def power_weights(n: int, s: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** (-s)
    return w / w.sum()


def _draw_accounts(params: TraceParams, rng: np.random.Generator):
    """Per-tx account counts and uniform variates, reused across bisection steps."""
    n_tx = params.blocks * params.txs_per_block
    p = 1.0 / (1.0 + params.extra_accounts_mean)
    counts = 2 + rng.geometric(p, size=n_tx) - 1
    u = rng.random(int(counts.sum()))
    return counts, u


def _ranks_from(u: np.ndarray, cdf: np.ndarray) -> np.ndarray:
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def _access_counts(ranks: np.ndarray, tx_index: np.ndarray, n: int) -> np.ndarray:
    """Per-rank count of transactions touching it (repeats within a tx count once)."""
    pairs = np.unique(tx_index.astype(np.int64) * n + ranks)
    return np.bincount(pairs % n, minlength=n)


def top_share(hits: np.ndarray, top: int = 100) -> float:
    total = hits.sum()
    return float(np.sort(hits)[::-1][:top].sum() / total) if total else 0.0


def low_touch_fraction(hits: np.ndarray, at_most: int = 2) -> float:
    touched = hits[hits > 0]
    return float((touched <= at_most).mean()) if len(touched) else 0.0


def calibrate_skew(params: TraceParams, counts, u, tol: float = 1e-3) -> float:
    """Exponent whose realized top-100 share matches the target."""
    n = params.accounts
    tx_index = np.repeat(np.arange(len(counts)), counts)

    def share(s: float) -> float:
        cdf = np.cumsum(power_weights(n, s))
        return top_share(_access_counts(_ranks_from(u, cdf), tx_index, n))

    lo, hi = 0.0, 3.0
    if share(hi) < params.top100_share:
        raise CalibrationError("top100_share", "unreachable even with exponent 3")
    for _ in range(40):
        mid = (lo + hi) / 2
        if share(mid) < params.top100_share:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return (lo + hi) / 2


def code_size_mixture(n: int, rng: np.random.Generator, code_max: int = 24_576) -> np.ndarray:
    """97% lognormal(ln 900, 0.8) capped at the size limit, 3% uniform(4000, limit)."""
    big = rng.random(n) < 0.03
    small = np.minimum(rng.lognormal(math.log(900), 0.8, size=n), code_max)
    large = rng.uniform(4000, code_max, size=n)
    return np.maximum(np.where(big, large, small).round().astype(np.int64), 1)


@dataclass
class CodeAssignment:
    sizes: np.ndarray  # per contract
    code_ids: np.ndarray  # per contract
    distinct: int

    @property
    def population_mean(self) -> float:
        return float(self.sizes.mean())

    @property
    def dedup_ratio(self) -> float:
        """Storage saved by keeping each distinct blob once."""
        uniq = {}
        for cid, s in zip(self.code_ids.tolist(), self.sizes.tolist()):
            uniq[cid] = s
        return 1.0 - sum(uniq.values()) / float(self.sizes.sum())


def sample_code_sizes(
    n: int,
    seed: int = 0,
    distinct_frac: float = 0.10,
    code_max: int = 24_576,
) -> CodeAssignment:
    """Sizes and shared code ids for ``n`` contracts (clones pick blobs uniformly)."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    k = max(1, int(round(n * distinct_frac)))
    blob_sizes = code_size_mixture(k, rng, code_max)
    ids = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)]) if n > k else np.arange(n)
    rng.shuffle(ids)
    return CodeAssignment(blob_sizes[ids], ids, k)


def match_sizes_to_popularity(
    assignment: CodeAssignment,
    weights: np.ndarray,
    target: float,
    rng: np.random.Generator,
) -> tuple[CodeAssignment, float]:
    """Permute code blobs over contracts so the access-weighted mean hits ``target``.

    Contracts sorted by weight receive blobs sorted by
    ``t * size_rank + (1 - t) * noise``; ``t`` is bisected.  The multiset of
    per-contract sizes (hence population mean and dedup) is unchanged.
    """
    n = len(weights)
    sizes, ids = assignment.sizes, assignment.code_ids
    by_weight = np.argsort(-weights, kind="stable")
    size_rank = np.argsort(np.argsort(sizes, kind="stable"), kind="stable") / max(n - 1, 1)
    noise = rng.random(n)
    wsum = weights.sum()
    if wsum <= 0:
        return assignment, 0.0

    def arrange(t: float):
        key = t * size_rank + (1 - t) * noise
        order = np.argsort(-key, kind="stable")
        new_sizes = np.empty_like(sizes)
        new_ids = np.empty_like(ids)
        new_sizes[by_weight] = sizes[order]
        new_ids[by_weight] = ids[order]
        return new_sizes, new_ids

    def wmean(t: float) -> float:
        s, _ = arrange(t)
        return float((s * weights).sum() / wsum)

    if wmean(1.0) < target:
        raise CalibrationError("code_access_mean", f"max reachable {wmean(1.0):.0f} B < {target:.0f} B")
    lo, hi = 0.0, 1.0
    if wmean(0.0) >= target:
        hi = 0.0
    for _ in range(50):
        if hi - lo < 1e-6:
            break
        mid = (lo + hi) / 2
        if wmean(mid) < target:
            lo = mid
        else:
            hi = mid
    s, i = arrange(hi)
    return CodeAssignment(s, i, assignment.distinct), hi


# ------------------------------------------------------------- generator


@dataclass
class TraceReport:
    skew: float
    code_blend: float
    top100_share: float
    low_touch_fraction: float
    slots_per_tx: float
    code_population_mean: float
    code_access_mean: float
    dedup_ratio: float
    accesses: int


def gen_trace(params: TraceParams = TraceParams(), seed: int = 0) -> tuple[AccessTrace, TraceReport]:
    """Deterministic synthetic trace plus the statistics it realizes."""
    params.validate()
    rng = np.random.default_rng(seed)
    n = params.accounts
    counts, u = _draw_accounts(params, rng)
    if params.skew is None:
        skew = calibrate_skew(params, counts, u)
    else:
        skew = params.skew
    cdf = np.cumsum(power_weights(n, skew))
    flat = _ranks_from(u, cdf)
    tx_index = np.repeat(np.arange(len(counts)), counts)
    per_tx = np.split(flat, np.cumsum(counts)[:-1])
    hits = _access_counts(flat, tx_index, n)

    # account identities and kinds by popularity rank
    addrs = np.empty(n, dtype=object)
    seen = set()
    for r in range(n):
        while True:
            a = int(rng.integers(0, 1 << params.width)) if params.width <= 62 else int.from_bytes(rng.bytes((params.width + 7) // 8), "big") >> (-params.width % 8)
            if a not in seen:
                seen.add(a)
                addrs[r] = a
                break
    cprob = np.where(np.arange(n) < params.hot_ranks, params.contract_prob_hot, params.contract_prob)
    is_contract = rng.random(n) < cprob
    contract_ranks = np.flatnonzero(is_contract)

    # slots per tx: geometric, scaled for txs that touch at least one contract
    has_contract = np.bincount(tx_index, weights=is_contract[flat], minlength=len(counts)) > 0
    frac = has_contract.mean() if len(has_contract) else 0.0
    if params.slots_per_tx > 0 and frac == 0:
        raise CalibrationError("slots_per_tx", "no transaction touches a contract")
    cond_mean = params.slots_per_tx / frac if frac else 0.0
    if cond_mean > params.slot_universe / 4:
        raise CalibrationError("slots_per_tx", "slot universe too small for the requested mean")
    n_slots = np.where(
        has_contract, rng.geometric(1.0 / (1.0 + cond_mean), size=len(per_tx)) - 1 if cond_mean else 0, 0
    )

    # code: sizes matched to exec frequency
    exec_hits = hits[contract_ranks].astype(float)
    code = sample_code_sizes(len(contract_ranks), int(rng.integers(1 << 31)), params.distinct_code_frac, params.code_max)
    code, blend = match_sizes_to_popularity(code, exec_hits, params.code_access_mean, rng)
    code_size = {int(r): int(s) for r, s in zip(contract_ranks, code.sizes)}
    code_id = {int(r): int(c) for r, c in zip(contract_ranks, code.code_ids)}

    ops: list[TraceOp] = []
    w = params.width
    slot_idx_max = math.log(params.slot_universe + 1)
    tx_id = 0
    total_slots = 0
    for b in range(params.blocks):
        for _ in range(params.txs_per_block):
            ranks = per_tx[tx_id]
            order = list(dict.fromkeys(int(r) for r in ranks))
            contracts = [r for r in order if is_contract[r]]
            for j, r in enumerate(order):
                a = addrs[r]
                hdr = 124 if is_contract[r] else 60
                ops.append(TraceOp(b, tx_id, READ_ACCOUNT, a, None, hdr))
                if j == 0:
                    ops.append(TraceOp(b, tx_id, WRITE_ACCOUNT, a, 0, hdr))
                elif rng.random() < params.balance_write_prob:
                    ops.append(TraceOp(b, tx_id, WRITE_ACCOUNT, a, 1, hdr))
                if is_contract[r]:
                    ops.append(TraceOp(b, tx_id, EXEC_CODE, a, code_id[r], code_size[r]))
            k = int(n_slots[tx_id])
            used: set[tuple[int, int]] = set()
            while len(used) < k:
                r = contracts[int(rng.integers(len(contracts)))]
                idx = int(math.exp(rng.random() * slot_idx_max)) - 1
                if (r, idx) in used:
                    continue
                used.add((r, idx))
                a = addrs[r]
                key = hashed_key(a.to_bytes(32, "big") + idx.to_bytes(8, "big"), w)
                op = WRITE_SLOT if rng.random() < params.slot_write_prob else READ_SLOT
                ops.append(TraceOp(b, tx_id, op, a, key, SLOT_OP_SIZE))
            total_slots += k
            tx_id += 1

    exec_total = exec_hits.sum()
    report = TraceReport(
        skew=skew,
        code_blend=blend,
        top100_share=top_share(hits),
        low_touch_fraction=low_touch_fraction(hits),
        slots_per_tx=total_slots / max(tx_id, 1),
        code_population_mean=code.population_mean,
        code_access_mean=float((code.sizes * exec_hits).sum() / exec_total) if exec_total else 0.0,
        dedup_ratio=code.dedup_ratio,
        accesses=int(hits.sum()),
    )
    if params.low_touch_target is not None:
        if abs(report.low_touch_fraction - params.low_touch_target) > params.low_touch_tol:
            raise CalibrationError(
                "low_touch_fraction",
                f"{report.low_touch_fraction:.3f} of touched accounts seen at most twice, "
                f"target {params.low_touch_target:.3f}; adjust accounts or volume",
            )
    return AccessTrace(params.width, ops), report


def trace_statistics(trace: AccessTrace) -> dict[str, float]:
    """Locality statistics recomputed from a trace alone."""
    per_acct: dict[int, int] = {}
    slots = 0
    n_tx = 0
    exec_bytes = 0
    execs = 0
    for _, txs in trace.blocks():
        for t in txs:
            n_tx += 1
            for a in {o.address for o in t if o.op == READ_ACCOUNT}:
                per_acct[a] = per_acct.get(a, 0) + 1
            slots += len({(o.address, o.key) for o in t if o.op in (READ_SLOT, WRITE_SLOT)})
            for o in t:
                if o.op == EXEC_CODE:
                    exec_bytes += o.size
                    execs += 1
    hits = np.array(list(per_acct.values()), dtype=np.int64)
    return {
        "transactions": n_tx,
        "accounts": len(per_acct),
        "top100_share": top_share(hits),
        "low_touch_fraction": low_touch_fraction(hits),
        "slots_per_tx": slots / n_tx if n_tx else 0.0,
        "code_access_mean": exec_bytes / execs if execs else 0.0,
    }
