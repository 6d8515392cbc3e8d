"""Line-oriented access trace format.

    # statenet-trace/1 width=32
    block,tx,op,address_hex,key_hex,size

``key_hex`` is the slot key for slot ops, the code id for ``exec_code``,
the field for ``write_account`` (0 nonce, 1 balance) and empty for
``read_account``.  ``size`` is the header charge (60/124) for account ops,
64 for slot ops and the code size for ``exec_code``.  Hex fields are
lower-case and zero-padded to the trace width; that layout is canonical and
round-trips byte for byte.
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, TextIO, Union

from ..address import hex_digits
from ..chain import (
    EXEC_CODE,
    OP_KINDS,
    READ_ACCOUNT,
    READ_SLOT,
    WRITE_ACCOUNT,
    WRITE_SLOT,
    Op,
    Transaction,
)

SCHEMA = "statenet-trace/1"
COLUMNS = "block,tx,op,address_hex,key_hex,size"
SLOT_OP_SIZE = 64
HEADER_SIZES = {60: "external", 124: "contract"}


class TraceParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class TraceSchemaError(TraceParseError):
    """Well-formed line that violates the schema (e.g. address wider than the trace)."""


@dataclass(frozen=True, slots=True)
class TraceOp:
    block: int
    tx: int
    op: str
    address: int
    key: Optional[int]
    size: int


@dataclass
class AccessTrace:
    width: int = 32
    ops: list[TraceOp] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ops)

    def __eq__(self, other) -> bool:
        return isinstance(other, AccessTrace) and self.width == other.width and self.ops == other.ops

    def blocks(self) -> Iterator[tuple[int, list[list[TraceOp]]]]:
        """(block number, transactions as op lists) in trace order."""
        cur_block = None
        txs: list[list[TraceOp]] = []
        cur_tx = None
        for o in self.ops:
            if o.block != cur_block:
                if cur_block is not None:
                    yield cur_block, txs
                cur_block, txs, cur_tx = o.block, [], None
            if o.tx != cur_tx:
                txs.append([])
                cur_tx = o.tx
            txs[-1].append(o)
        if cur_block is not None:
            yield cur_block, txs

    @property
    def n_blocks(self) -> int:
        return len({o.block for o in self.ops})

    def universe(self) -> Universe:
        """Accounts, kinds, code ids/sizes and slot keys mentioned by the trace."""
        u = Universe(self.width)
        for o in self.ops:
            if o.op in (READ_ACCOUNT, WRITE_ACCOUNT):
                u.kinds.setdefault(o.address, HEADER_SIZES.get(o.size, "external"))
            elif o.op == EXEC_CODE:
                u.kinds[o.address] = "contract"
                u.code_ids[o.address] = o.key
                u.code_sizes[o.key] = o.size
            else:
                u.kinds[o.address] = "contract"
                u.slots.setdefault(o.address, set()).add(o.key)
        return u

    def transactions(self) -> Iterator[tuple[int, list[Transaction]]]:
        """Blocks as protocol transactions with deterministic write values."""
        for b, txs in self.blocks():
            out = []
            for t in txs:
                ops = []
                for i, o in enumerate(t):
                    if o.op == READ_ACCOUNT:
                        ops.append(Op(READ_ACCOUNT, o.address))
                    elif o.op == READ_SLOT:
                        ops.append(Op(READ_SLOT, o.address, o.key))
                    elif o.op == EXEC_CODE:
                        ops.append(Op(EXEC_CODE, o.address))
                    elif o.op == WRITE_SLOT:
                        ops.append(Op(WRITE_SLOT, o.address, o.key, value=write_value(b, t[0].tx, i)))
                    elif o.key == 0:
                        ops.append(Op(WRITE_ACCOUNT, o.address, field="nonce"))
                    else:
                        v = int.from_bytes(write_value(b, t[0].tx, i)[:8], "big")
                        ops.append(Op(WRITE_ACCOUNT, o.address, field="balance", value=v))
                out.append(Transaction(t[0].tx, tuple(ops)))
            yield b, out


def write_value(block: int, tx: int, index: int) -> bytes:
    return hashlib.sha256(f"w:{block}:{tx}:{index}".encode()).digest()


def code_blob(code_id: int, size: int) -> bytes:
    """Deterministic bytecode stand-in; distinct ids give distinct blobs."""
    seed = hashlib.sha256(f"code:{code_id}".encode()).digest()
    reps = size // len(seed) + 1
    return (seed * reps)[:size]


@dataclass
class Universe:
    width: int
    kinds: dict[int, str] = field(default_factory=dict)
    code_ids: dict[int, int] = field(default_factory=dict)
    code_sizes: dict[int, int] = field(default_factory=dict)
    slots: dict[int, set[int]] = field(default_factory=dict)


# ------------------------------------------------------------------ I/O


def emit_trace(trace: AccessTrace, out: Optional[TextIO] = None) -> str:
    buf = out or io.StringIO()
    w = hex_digits(trace.width)
    buf.write(f"# {SCHEMA} width={trace.width}\n")
    for o in trace.ops:
        key = "" if o.key is None else format(o.key, f"0{w}x")
        buf.write(f"{o.block},{o.tx},{o.op},{o.address:0{w}x},{key},{o.size}\n")
    return buf.getvalue() if out is None else ""


def write_trace(trace: AccessTrace, path) -> None:
    with open(path, "w", newline="\n") as f:
        emit_trace(trace, f)


def parse_trace(source: Union[str, TextIO, Iterable[str]]) -> AccessTrace:
    """Parse trace text (a string, open file or iterable of lines)."""
    lines = io.StringIO(source) if isinstance(source, str) else source
    width = None
    ops: list[TraceOp] = []
    for n, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if n == 1 and not line:
            continue
        if width is None:
            width = _header(n, line)
            continue
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise TraceParseError(n, f"expected 6 fields, got {len(parts)}")
        try:
            block, tx = int(parts[0]), int(parts[1])
            addr = int(parts[3], 16)
            key = int(parts[4], 16) if parts[4] else None
            size = int(parts[5])
        except ValueError as e:
            raise TraceParseError(n, f"bad number: {e}") from None
        op = parts[2]
        if op not in OP_KINDS:
            raise TraceParseError(n, f"unknown op {op!r}")
        if block < 0 or tx < 0 or size < 0:
            raise TraceParseError(n, "negative field")
        if addr >> width or (key is not None and key >> width):
            raise TraceSchemaError(n, f"value exceeds {width}-bit width")
        if (op == READ_ACCOUNT) == (key is not None):
            raise TraceSchemaError(n, f"{op} key field mismatch")
        if op == WRITE_ACCOUNT and key not in (0, 1):
            raise TraceSchemaError(n, "write_account field must be 0 (nonce) or 1 (balance)")
        if ops and (block, tx) < (ops[-1].block, ops[-1].tx):
            raise TraceSchemaError(n, "records out of order")
        ops.append(TraceOp(block, tx, op, addr, key, size))
    return AccessTrace(width if width is not None else 32, ops)


def read_trace(path) -> AccessTrace:
    with open(path, newline="") as f:
        return parse_trace(f)


def _header(n: int, line: str) -> int:
    parts = line.lstrip("#").split()
    if not line.startswith("#") or len(parts) != 2 or parts[0] != SCHEMA or not parts[1].startswith("width="):
        raise TraceParseError(n, f"missing '# {SCHEMA} width=N' header")
    try:
        width = int(parts[1][6:])
    except ValueError:
        raise TraceParseError(n, "bad width") from None
    if not 1 <= width <= 256:
        raise TraceSchemaError(n, "width must be in [1, 256]")
    return width
