"""Blocks, access-list transactions and state lists."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

READ_ACCOUNT = "read_account"
READ_SLOT = "read_slot"
WRITE_ACCOUNT = "write_account"
WRITE_SLOT = "write_slot"
EXEC_CODE = "exec_code"
OP_KINDS = (READ_ACCOUNT, READ_SLOT, WRITE_ACCOUNT, WRITE_SLOT, EXEC_CODE)
ACCOUNT_FIELDS = ("nonce", "balance")


@dataclass(frozen=True)
class Op:
    """One access-list operation.

    Writes carry an explicit ``value`` or a ``source`` to copy from: an
    account address (its balance) or an (address, slot key) pair.
    """

    kind: str
    address: int
    key: Optional[int] = None
    value: object = None
    field: Optional[str] = None
    source: Optional[tuple] = None

    def __post_init__(self) -> None:
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {self.kind!r}")
        if self.kind in (READ_SLOT, WRITE_SLOT) and self.key is None:
            raise ValueError(f"{self.kind} needs a slot key")
        if self.kind == WRITE_ACCOUNT and self.field not in ACCOUNT_FIELDS:
            raise ValueError(f"write_account field must be one of {ACCOUNT_FIELDS}")


def read_account(addr: int) -> Op:
    return Op(READ_ACCOUNT, addr)


def read_slot(addr: int, key: int) -> Op:
    return Op(READ_SLOT, addr, key)


def write_account(addr: int, field: str, value: Optional[int] = None, source: Optional[tuple] = None) -> Op:
    return Op(WRITE_ACCOUNT, addr, field=field, value=value, source=source)


def write_slot(addr: int, key: int, value: Optional[bytes] = None, source: Optional[tuple] = None) -> Op:
    return Op(WRITE_SLOT, addr, key, value=value, source=source)


def exec_code(addr: int) -> Op:
    return Op(EXEC_CODE, addr)


@dataclass(frozen=True)
class Transaction:
    id: int
    ops: tuple[Op, ...]

    def accounts(self) -> list[int]:
        seen = {}
        for op in self.ops:
            seen.setdefault(op.address, None)
            if op.source is not None:
                seen.setdefault(op.source[0], None)
        return list(seen)


@dataclass
class Block:
    number: int
    proposer: int
    parent_root: bytes
    post_root: bytes
    transactions: tuple[Transaction, ...] = ()

    @property
    def id(self) -> tuple[int, bytes]:
        return (self.number, self.post_root)


@dataclass(frozen=True)
class StateListEntry:
    address: int
    kind: str
    slots: tuple[int, ...] = ()
    code: bool = False
    code_hash: Optional[bytes] = None
    code_size: int = 0


@dataclass(frozen=True)
class StateList:
    entries: tuple[StateListEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def addresses(self) -> list[int]:
        return [e.address for e in self.entries]

    def slot_count(self) -> int:
        return sum(len(e.slots) for e in self.entries)

    def items(self) -> set[tuple]:
        """Flat set of ('account', a), ('slot', a, k) and ('code', h) items."""
        out: set[tuple] = set()
        for e in self.entries:
            out.add(("account", e.address))
            out.update(("slot", e.address, k) for k in e.slots)
            if e.code and e.code_hash is not None:
                out.add(("code", e.code_hash))
        return out


@dataclass
class AccessTraceLog:
    """What execution actually touched, in first-access order."""

    accounts: dict[int, None] = field(default_factory=dict)
    slots: dict[int, dict[int, None]] = field(default_factory=dict)
    code: dict[int, None] = field(default_factory=dict)

    def account(self, a: int) -> None:
        self.accounts.setdefault(a, None)

    def slot(self, a: int, k: int) -> None:
        self.account(a)
        self.slots.setdefault(a, {}).setdefault(k, None)

    def exec(self, a: int) -> None:
        self.account(a)
        self.code.setdefault(a, None)

    def items(self, code_hashes: dict[int, Optional[bytes]]) -> set[tuple]:
        out: set[tuple] = {("account", a) for a in self.accounts}
        for a, ks in self.slots.items():
            out.update(("slot", a, k) for k in ks)
        for a in self.code:
            h = code_hashes.get(a)
            if h is not None:
                out.add(("code", h))
        return out


def state_list_from_ops(
    transactions: Iterable[Transaction],
    kinds: dict[int, str],
    code_hashes: Optional[dict[int, Optional[bytes]]] = None,
    code_sizes: Optional[dict[int, int]] = None,
) -> StateList:
    """Build the list of touched accounts/slots/code from access lists."""
    log = AccessTraceLog()
    for tx in transactions:
        for op in tx.ops:
            if op.source is not None:
                if len(op.source) == 2 and op.source[1] is not None:
                    log.slot(op.source[0], op.source[1])
                else:
                    log.account(op.source[0])
            if op.kind in (READ_SLOT, WRITE_SLOT):
                log.slot(op.address, op.key)
            elif op.kind == EXEC_CODE:
                log.exec(op.address)
            else:
                log.account(op.address)
    return state_list_from_log(log, kinds, code_hashes, code_sizes)


def state_list_from_log(
    log: AccessTraceLog,
    kinds: dict[int, str],
    code_hashes: Optional[dict[int, Optional[bytes]]] = None,
    code_sizes: Optional[dict[int, int]] = None,
) -> StateList:
    code_hashes = code_hashes or {}
    code_sizes = code_sizes or {}
    entries = []
    for a in log.accounts:
        needs = a in log.code
        entries.append(
            StateListEntry(
                a,
                kinds.get(a, "external"),
                tuple(sorted(log.slots.get(a, {}))),
                needs,
                code_hashes.get(a) if needs else None,
                code_sizes.get(a, 0) if needs else 0,
            )
        )
    return StateList(tuple(entries))


def block_body_txs(block: Block) -> int:
    return len(block.transactions)


def flatten_ops(txs: Sequence[Transaction]) -> list[Op]:
    return [op for tx in txs for op in tx.ops]
