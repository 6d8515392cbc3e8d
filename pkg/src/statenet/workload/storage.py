"""Aggregate storage savings and data-loss probability under the prefix rule.

A node with prefix length ``PL`` keeps a ``2^-PL`` share of the keyspace, so
an item is lost only if every node misses it.  Fractional prefix lengths are
accepted and stand for an average over nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class StorageResult:
    nodes: int
    savings: float
    loss_probability: float
    mean_replication: float


def stored_fraction(prefix_len: float) -> float:
    return 2.0 ** (-prefix_len)


def savings_from_fractions(fractions: Sequence[float]) -> StorageResult:
    f = np.asarray(fractions, dtype=float)
    if f.size == 0:
        raise ValueError("need at least one node")
    if ((f < 0) | (f > 1)).any():
        raise ValueError("stored fractions must lie in [0, 1]")
    savings = 1.0 - float(f.mean())
    if (f >= 1).any():
        loss = 0.0
    else:
        loss = math.exp(float(np.log1p(-f).sum()))
    return StorageResult(len(f), savings, loss, float(f.sum()))


def storage_savings(prefix_lens: Sequence[float]) -> tuple[float, float]:
    """(aggregate savings fraction, per-item loss probability) for the given prefix lengths."""
    r = savings_from_fractions([stored_fraction(p) for p in prefix_lens])
    return r.savings, r.loss_probability


def prefix_len_for_fraction(fraction: float) -> float:
    return -math.log2(fraction)


def monte_carlo_loss(
    fractions: Sequence[float], trials: int = 1_000_000, seed: int = 0
) -> tuple[float, float, float]:
    """Empirical (loss rate, savings, standard error of the loss rate).

    Each trial places one item: node ``i`` stores it with probability
    ``fractions[i]``.  Nodes sharing a fraction are drawn as one binomial.
    """
    rng = np.random.default_rng(seed)
    groups: dict[float, int] = {}
    for f in fractions:
        groups[float(f)] = groups.get(float(f), 0) + 1
    storers = np.zeros(trials, dtype=np.int64)
    for f, n in sorted(groups.items()):
        storers += rng.binomial(n, f, size=trials)
    loss = float((storers == 0).mean())
    savings = 1.0 - float(storers.mean()) / len(fractions)
    p = float(np.exp(np.log1p(-np.asarray(fractions, dtype=float)).sum())) if all(f < 1 for f in fractions) else 0.0
    se = math.sqrt(max(p * (1 - p), 1e-300) / trials)
    return loss, savings, se


def replication_counts(
    node_ids: Sequence[int],
    prefix_lens: Sequence[int],
    items: Sequence[int],
    width: int,
) -> np.ndarray:
    """Number of nodes covering each item under the prefix rule."""
    ids = np.asarray(node_ids, dtype=object)
    pls = np.asarray(prefix_lens, dtype=np.int64)
    out = np.zeros(len(items), dtype=np.int64)
    for pl in np.unique(pls):
        pl = int(pl)
        members = [int(x) for x, p in zip(ids, pls) if p == pl]
        if pl == 0:
            out += len(members)
            continue
        shift = width - pl
        counts: dict[int, int] = {}
        for x in members:
            counts[x >> shift] = counts.get(x >> shift, 0) + 1
        out += np.array([counts.get(int(it) >> shift, 0) for it in items], dtype=np.int64)
    return out


def empirical_replication(
    n_nodes: int,
    prefix_len: int,
    width: int = 32,
    n_items: int = 10_000,
    seed: int = 0,
    prefix_lens: Optional[Sequence[int]] = None,
) -> np.ndarray:
    rng = np.random.default_rng(seed)
    ids = [int(x) for x in rng.integers(0, 1 << width, size=n_nodes, dtype=np.uint64)]
    items = [int(x) for x in rng.integers(0, 1 << width, size=n_items, dtype=np.uint64)]
    pls = list(prefix_lens) if prefix_lens is not None else [prefix_len] * n_nodes
    return replication_counts(ids, pls, items, width)
