"""Information-theoretic message authentication.

Tags are a polynomial hash over GF(2^64) evaluated at a one-time multiplier
key, masked with a one-time pad.  Every tag consumes 128 fresh key bits; a
:class:`KeyPool` hands those out and remembers which ranges went where.
"""

from __future__ import annotations

import hmac
from dataclasses import dataclass, field
from typing import Sequence

from .errors import KeyDepletionError

MAC_KEY_BITS = 128
TAG_BITS = 64
_MASK = (1 << 64) - 1
# x^64 + x^4 + x^3 + x + 1, irreducible over GF(2)
_REDUCTION = 0x1B


def _reduce(p: int) -> int:
    # x^64 = x^4 + x^3 + x + 1, folded until the product fits in 64 bits.
    while p >> 64:
        h = p >> 64
        p = (p & _MASK) ^ h ^ (h << 1) ^ (h << 3) ^ (h << 4)
    return p


def _nibble_table(x: int) -> list[int]:
    """Carry-less products x * j for every 4-bit j."""
    table = [0, x]
    for j in range(2, 16):
        table.append(table[j >> 1] << 1 if j % 2 == 0 else table[j - 1] ^ x)
    return table


def _mul_table(table: list[int], y: int) -> int:
    z = 0
    shift = 0
    while y:
        z ^= table[y & 15] << shift
        y >>= 4
        shift += 4
    return _reduce(z)


def gf64_mul(x: int, y: int) -> int:
    """Multiply two field elements (ints < 2**64)."""
    return _mul_table(_nibble_table(x), y)


def poly_hash(message: bytes, key: int) -> int:
    """Horner evaluation of the 8-byte message blocks, then a length block.

    The last partial block is zero padded; the trailing bit-length block keeps
    padded and unpadded messages apart.
    """
    table = _nibble_table(key)
    h = 0
    for off in range(0, len(message), 8):
        block = message[off : off + 8].ljust(8, b"\0")
        h = _mul_table(table, h ^ int.from_bytes(block, "big"))
    return _mul_table(table, h ^ (8 * len(message) & _MASK))


def _bits_to_int(bits: Sequence[int]) -> int:
    value = 0
    for b in bits:
        value = (value << 1) | (int(b) & 1)
    return value


@dataclass(frozen=True)
class MacTag:
    value: int
    key_offset: int = 0

    def hex(self) -> str:
        return format(self.value, "016x")


def mac_sign(message: bytes, key_bits: Sequence[int], key_offset: int = 0) -> MacTag:
    if len(key_bits) < MAC_KEY_BITS:
        raise KeyDepletionError(f"MAC needs {MAC_KEY_BITS} key bits, got {len(key_bits)}")
    mult = _bits_to_int(key_bits[:64])
    pad = _bits_to_int(key_bits[64:128])
    return MacTag(poly_hash(bytes(message), mult) ^ pad, key_offset)


def mac_verify(message: bytes, tag: MacTag, key_bits: Sequence[int]) -> bool:
    if tag is None:
        return False
    expected = mac_sign(message, key_bits, tag.key_offset)
    return hmac.compare_digest(expected.value.to_bytes(8, "big"), (tag.value & _MASK).to_bytes(8, "big"))


@dataclass
class KeyPool:
    """A shared bit string consumed monotonically, with an audit trail.

    ``take`` hands out the next unused range.  ``at`` reads a caller-chosen
    range (used when both ends derive the offset from message identity).
    Every range is logged with a label naming the message it keyed, so reuse
    across distinct messages shows up in :meth:`overlapping_spans`.
    """

    bits: list = field(default_factory=list)
    cursor: int = 0
    spans: dict = field(default_factory=dict)

    def remaining(self) -> int:
        return len(self.bits) - self.cursor

    def extend(self, bits) -> None:
        self.bits.extend(int(b) for b in bits)

    def _log(self, lo, hi, label):
        self.spans.setdefault((lo, hi), set()).add(label)

    def take(self, n: int = MAC_KEY_BITS, label: str = "") -> tuple[int, list[int]]:
        if self.remaining() < n:
            raise KeyDepletionError(f"key pool exhausted: need {n} bits, {self.remaining()} left")
        off = self.cursor
        self.cursor += n
        self._log(off, off + n, label or f"take@{off}")
        return off, self.bits[off : off + n]

    def at(self, offset: int, n: int = MAC_KEY_BITS, label: str = "") -> list[int]:
        if offset < 0 or offset + n > len(self.bits):
            raise KeyDepletionError(f"key pool has no bits [{offset}, {offset + n})")
        self._log(offset, offset + n, label)
        return self.bits[offset : offset + n]

    def overlapping_spans(self) -> list[tuple]:
        """Spans that keyed two different messages or overlap partially."""
        bad = [(k, sorted(v)) for k, v in self.spans.items() if len(v) > 1]
        ranges = sorted(self.spans)
        for (lo1, hi1), (lo2, hi2) in zip(ranges, ranges[1:]):
            if lo2 < hi1:
                bad.append(((lo1, hi1), (lo2, hi2)))
        return bad
