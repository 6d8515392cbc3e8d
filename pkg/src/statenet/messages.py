"""Simulator wire messages.  Nothing is serialized; sizes come from the size model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .address import NodeIdentity
from .chain import Block, StateList
from .state import AccountBundle, Snapshot


@dataclass
class BlockAnnounce:
    block: Block
    state_list: StateList


@dataclass(frozen=True)
class WantedItem:
    """One account in a state request.

    ``slots=None`` asks for every slot.  ``header`` is False when only slots
    or code of an already-held account are needed.
    """

    address: int
    header: bool = True
    slots: Optional[tuple[int, ...]] = ()
    code_hash: Optional[bytes] = None


@dataclass
class StateRequest:
    block_number: int
    items: tuple[WantedItem, ...]
    nonce: int = 0


@dataclass
class StateResponse:
    """Bundles plus deduplicated code.

    ``not_held`` lists (address, slot or None, code hash or None) items the
    responder could not serve.  Bundles for addresses in ``slots_only`` are
    charged without header or account proof.
    """

    block_number: int
    bundles: list[AccountBundle] = field(default_factory=list)
    codes: dict[bytes, bytes] = field(default_factory=dict)
    not_held: list[tuple[int, Optional[int], Optional[bytes]]] = field(default_factory=list)
    slots_only: set[int] = field(default_factory=set)  # requester already holds the header
    nonce: int = 0


@dataclass
class Ping:
    nonce: int = 0


@dataclass
class Pong:
    nonce: int = 0


@dataclass
class LookupRequest:
    target: int
    want: Optional[WantedItem] = None


@dataclass
class LookupResponse:
    target: int
    candidates: list[NodeIdentity] = field(default_factory=list)
    payload: Optional[StateResponse] = None


@dataclass
class SnapshotRequest:
    path: int
    plen: int


@dataclass
class SnapshotResponse:
    path: int
    plen: int
    snapshot: Optional[Snapshot] = None


@dataclass
class DiffRequest:
    path: int
    plen: int
    with_proof: bool = False


@dataclass
class DiffResponse:
    path: int
    plen: int
    digest: bytes
    children: tuple[bytes, bytes]
    kinds: tuple[str, str]
    proof_path: list[tuple[Optional[bytes], Optional[str]]] = field(default_factory=list)
