"""Byte encodings for protocol messages.

Messages on the channel are opaque bytes.  Protocols here send short tuples
of non-negative integers; device-ID sets travel as bitmasks trimmed to their
lowest set bit so a set covering a narrow ID range stays small.
"""
from __future__ import annotations

import struct

import numpy as np

_LEN = struct.Struct("<I")


def pack_ints(*values: int) -> bytes:
    parts = []
    for v in values:
        if v < 0:
            raise ValueError("only non-negative integers are encodable")
        raw = v.to_bytes((v.bit_length() + 7) // 8, "little")
        parts.append(_LEN.pack(len(raw)))
        parts.append(raw)
    return b"".join(parts)


def unpack_ints(data: bytes) -> list[int]:
    out, pos, end = [], 0, len(data)
    while pos < end:
        (size,) = _LEN.unpack_from(data, pos)
        pos += 4
        out.append(int.from_bytes(data[pos:pos + size], "little"))
        pos += size
    return out


def mask_parts(mask: int) -> tuple[int, int]:
    """Split an ID bitmask into ``(offset, mask >> offset)``."""
    if mask == 0:
        return 0, 0
    low = (mask & -mask).bit_length() - 1
    return low, mask >> low


def mask_join(offset: int, shifted: int) -> int:
    return shifted << offset


def mask_from_ids(ids) -> int:
    arr = np.asarray(list(ids), dtype=np.int64)
    if arr.size == 0:
        return 0
    bits = np.zeros(int(arr.max()) + 1, dtype=np.uint8)
    bits[arr] = 1
    return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")


def ids_from_mask(mask: int) -> list[int]:
    if mask == 0:
        return []
    raw = np.frombuffer(mask.to_bytes((mask.bit_length() + 7) // 8, "little"), dtype=np.uint8)
    return np.flatnonzero(np.unpackbits(raw, bitorder="little")).tolist()


class IdSet:
    """Immutable ID set stored as ``bits << offset``.

    Keeping the offset separate means a set covering a narrow range of high
    IDs costs memory proportional to the range, not to the largest ID.
    Mixes with plain int bitmasks under ``|`` and ``==``.
    """

    __slots__ = ("offset", "bits")

    def __init__(self, offset: int = 0, bits: int = 0):
        if bits == 0:
            offset = 0
        else:
            low = (bits & -bits).bit_length() - 1
            offset, bits = offset + low, bits >> low
        self.offset = offset
        self.bits = bits

    @classmethod
    def of(cls, value) -> "IdSet":
        if isinstance(value, IdSet):
            return value
        return cls(0, value)

    @classmethod
    def from_ids(cls, ids) -> "IdSet":
        ids = list(ids)
        if not ids:
            return cls()
        low = min(ids)
        return cls(low, mask_from_ids(i - low for i in ids))

    def __or__(self, other) -> "IdSet":
        other = IdSet.of(other)
        if not other.bits:
            return self
        if not self.bits:
            return other
        low = min(self.offset, other.offset)
        return IdSet(low, (self.bits << (self.offset - low)) | (other.bits << (other.offset - low)))

    __ror__ = __or__

    def __eq__(self, other) -> bool:
        if isinstance(other, int):
            other = IdSet(0, other)
        if not isinstance(other, IdSet):
            return NotImplemented
        return self.offset == other.offset and self.bits == other.bits

    def __hash__(self) -> int:
        return hash((self.offset, self.bits))

    def __contains__(self, i: int) -> bool:
        return i >= self.offset and (self.bits >> (i - self.offset)) & 1 == 1

    def __len__(self) -> int:
        return self.bits.bit_count()

    def __bool__(self) -> bool:
        return self.bits != 0

    def __repr__(self) -> str:
        return f"IdSet({self.ids()!r})"

    def ids(self) -> list[int]:
        return [i + self.offset for i in ids_from_mask(self.bits)]

    def to_int(self) -> int:
        return self.bits << self.offset
