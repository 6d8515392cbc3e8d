"""Prefix-sharded validator state: partial Merkle state, storer lookup, gossip simulation and measurements."""
from __future__ import annotations

__version__ = "0.1.0"

from .address import Address, NodeIdentity, common_prefix_len, covers, xor_distance
from .cache import SegmentedCache
from .merkle import MerkleProof
from .state import PartialState

__all__ = [
    "Address",
    "MerkleProof",
    "NodeIdentity",
    "PartialState",
    "SegmentedCache",
    "__version__",
    "common_prefix_len",
    "covers",
    "xor_distance",
]
