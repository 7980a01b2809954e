"""Shared secret key material and the tag's release discipline.

A :class:`KeyStore` holds the 1D key ``k_0 k_1 ...``; round ``i`` owns bits
``4i .. 4i+3`` and the tag may emit only one of them, ever.  A
:class:`BlockKeySet` does the same for the multilateration scheme, where each
station has its own sub-key cut into two-bit blocks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import KeyDepletionError, ReleaseRefused


class Release(enum.Enum):
    UNRELEASED = "unreleased"
    RELEASED = "released"
    BURNED = "burned"


@dataclass(frozen=True)
class UnitState:
    status: Release
    index: int | None = None  # position within the round/block once released


_FRESH = UnitState(Release.UNRELEASED)


def key_index(i: int, a: int, b: int) -> int:
    """Position of the key bit answering challenge pair ``(a, b)`` in round ``i``."""
    return 4 * i + 2 * a + b


def _check_bit(name, value):
    if value not in (0, 1):
        raise ValueError(f"{name} must be 0 or 1, got {value!r}")


class _UnitRegistry:
    """One-of-m release state machine over equally sized key units."""

    def __init__(self, width: int):
        self.width = width
        self.states: dict[int, UnitState] = {}
        self.emitted: list[tuple[int, int]] = []

    def state(self, unit: int) -> UnitState:
        return self.states.get(unit, _FRESH)

    def claim(self, unit: int, which: int) -> None:
        st = self.state(unit)
        if st.status is Release.BURNED:
            raise ReleaseRefused(f"unit {unit} is burned")
        if st.status is Release.RELEASED:
            if st.index == which:
                return
            self.states[unit] = UnitState(Release.BURNED, st.index)
            raise ReleaseRefused(f"unit {unit} already released index {st.index}; request for {which} burns it")
        self.states[unit] = UnitState(Release.RELEASED, which)
        self.emitted.append((unit, which))

    def burn(self, unit: int) -> None:
        st = self.state(unit)
        self.states[unit] = UnitState(Release.BURNED, st.index)


class KeyStore:
    """The tag-side (or verifier-side) copy of the 1D shared key."""

    def __init__(self, bits: Iterable[int] = ()):
        self.bits: list[int] = [int(b) for b in bits]
        self._rounds = _UnitRegistry(4)

    def __len__(self):
        return len(self.bits)

    @property
    def rounds_available(self) -> int:
        return len(self.bits) // 4

    def extend(self, bits: Iterable[int]) -> None:
        self.bits.extend(int(b) for b in bits)

    def round_state(self, i: int) -> UnitState:
        return self._rounds.state(i)

    @property
    def emitted(self) -> list[tuple[int, int]]:
        """``(round, index_within_round)`` for every first-time release."""
        return list(self._rounds.emitted)

    def peek(self, i: int, a: int, b: int) -> int:
        """Verifier-side lookup; never changes release state."""
        idx = key_index(i, a, b)
        if idx >= len(self.bits):
            raise KeyDepletionError(f"round {i} needs key bit {idx}, only {len(self.bits)} held")
        return self.bits[idx]

    def release(self, i: int, a: int, b: int) -> int:
        _check_bit("a", a)
        _check_bit("b", b)
        if i < 0:
            raise ValueError("round index must be >= 0")
        idx = key_index(i, a, b)
        if idx >= len(self.bits):
            raise KeyDepletionError(f"round {i} needs key bit {idx}, only {len(self.bits)} held")
        self._rounds.claim(i, 2 * a + b)
        return self.bits[idx]

    def burn(self, i: int) -> None:
        self._rounds.burn(i)


def release_round_bit(store: KeyStore, i: int, a: int, b: int) -> int:
    return store.release(i, a, b)


class BlockKeySet:
    """Per-station sub-keys split into length-two blocks."""

    def __init__(self, subkeys: Sequence[Iterable[int]]):
        self.subkeys = [[int(b) for b in k] for k in subkeys]
        self._blocks = [_UnitRegistry(2) for _ in self.subkeys]

    @classmethod
    def from_shared(cls, bits: Sequence[int], stations: int = 4) -> "BlockKeySet":
        """Deal shared bits round-robin: bit j goes to sub-key ``j % stations``."""
        return cls([list(bits[s::stations]) for s in range(stations)])

    def blocks_available(self, station: int) -> int:
        return len(self.subkeys[station]) // 2

    def block_state(self, station: int, block: int) -> UnitState:
        return self._blocks[station].state(block)

    def emitted(self, station: int) -> list[tuple[int, int]]:
        return list(self._blocks[station].emitted)

    def peek(self, station: int, block: int, which: int) -> int:
        idx = 2 * block + which
        if idx >= len(self.subkeys[station]):
            raise KeyDepletionError(f"station {station} sub-key has no block {block}")
        return self.subkeys[station][idx]

    def release(self, station: int, block: int, which: int) -> int:
        _check_bit("which", which)
        if not 0 <= station < len(self.subkeys):
            raise ValueError(f"no station {station}")
        value = self.peek(station, block, which)
        self._blocks[station].claim(block, which)
        return value

    def burn(self, station: int, block: int) -> None:
        self._blocks[station].burn(block)


def release_block_bit(keys: BlockKeySet, station: int, block: int, which: int) -> int:
    return keys.release(station, block, which)


def bits_to_hex(bits: Sequence[int]) -> str:
    """MSB-first hex; a partial final nibble is zero-padded on the right."""
    if not bits:
        return ""
    padded = list(bits) + [0] * (-len(bits) % 4)
    value = int("".join(str(int(b)) for b in padded), 2)
    return format(value, f"0{len(padded) // 4}x")


def bits_from_hex(text: str, nbits: int | None = None) -> list[int]:
    text = text.strip().lower().removeprefix("0x")
    if not text:
        return []
    bits = [int(ch) for ch in format(int(text, 16), f"0{4 * len(text)}b")]
    if nbits is not None:
        if nbits > len(bits):
            raise ValueError(f"hex string holds {len(bits)} bits, {nbits} requested")
        bits = bits[:nbits]
    return bits
