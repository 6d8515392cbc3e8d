"""Shared identifier space for nodes, accounts and slots.

Addresses are fixed-width bit strings ordered as unsigned big-endian
integers.  Bit 0 is the most significant bit, so "prefix" always means the
leading bits.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Any

DEFAULT_WIDTH = 32


class WidthMismatch(ValueError):
    """Two addresses of different widths were combined."""


@dataclass(frozen=True, slots=True, order=True)
class Address:
    value: int
    width: int = DEFAULT_WIDTH

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise ValueError(f"width must be positive, got {self.width}")
        if not 0 <= self.value < (1 << self.width):
            raise ValueError(f"value {self.value:#x} does not fit in {self.width} bits")

    @classmethod
    def from_bits(cls, bits: str) -> Address:
        return cls(int(bits, 2), len(bits))

    @classmethod
    def from_hex(cls, text: str, width: int = DEFAULT_WIDTH) -> Address:
        return cls(int(text, 16), width)

    def bit(self, i: int) -> int:
        return (self.value >> (self.width - 1 - i)) & 1

    def prefix(self, n: int) -> int:
        """Leading ``n`` bits as an integer."""
        return self.value >> (self.width - n) if n else 0

    def bits(self) -> str:
        return format(self.value, f"0{self.width}b")

    def hex(self) -> str:
        return format(self.value, f"0{hex_digits(self.width)}x")

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(byte_len(self.width), "big")

    def __str__(self) -> str:
        return self.bits() if self.width <= 16 else "0x" + self.hex()


@dataclass(frozen=True, slots=True)
class NodeIdentity:
    id: Address
    prefix_len: int
    endpoint: Any = None

    def __post_init__(self) -> None:
        if not 0 <= self.prefix_len <= self.id.width:
            raise ValueError(f"prefix_len {self.prefix_len} outside [0, {self.id.width}]")

    @property
    def key(self) -> int:
        return self.id.value

    @property
    def width(self) -> int:
        return self.id.width


def byte_len(width: int) -> int:
    return (width + 7) // 8


def hex_digits(width: int) -> int:
    return (width + 3) // 4


def _check(a: Address, b: Address) -> None:
    if a.width != b.width:
        raise WidthMismatch(f"address widths differ: {a.width} vs {b.width}")


def cpl(a: int, b: int, width: int) -> int:
    """Common prefix length of two raw keys of the same width."""
    return width - (a ^ b).bit_length()


def common_prefix_len(a: Address, b: Address) -> int:
    _check(a, b)
    return cpl(a.value, b.value, a.width)


def xor_distance(a: Address, b: Address) -> int:
    _check(a, b)
    return a.value ^ b.value


def covers(node: NodeIdentity, account: Address) -> bool:
    """True iff ``node`` stores ``account`` under the prefix rule."""
    _check(node.id, account)
    return cpl(node.id.value, account.value, account.width) >= node.prefix_len


def covers_key(node_key: int, prefix_len: int, account_key: int, width: int) -> bool:
    return cpl(node_key, account_key, width) >= prefix_len


def random_address(rng: random.Random, width: int = DEFAULT_WIDTH) -> Address:
    return Address(rng.getrandbits(width), width)


def hashed_key(data: bytes, width: int = DEFAULT_WIDTH) -> int:
    """Uniformizing trie key for raw identifier bytes (first ``width`` bits of sha256)."""
    digest = int.from_bytes(hashlib.sha256(data).digest(), "big")
    return digest >> (256 - width) if width <= 256 else digest
