"""Canonical byte encoding shared by every hashed structure.

All integers are big-endian and fixed-width: client ids, sequence numbers,
amounts, balances and timestamps take 8 bytes each; digests are raw 32-byte
values. Fields are concatenated in declared order with no delimiters, so two
parties encoding the same record always produce identical bytes.
"""

import struct

U64 = struct.Struct(">Q")
I64 = struct.Struct(">q")
U32 = struct.Struct(">I")

#: Largest encodable timestamp, used as the open-interval sentinel.
FOREVER = 2**64 - 1


def u64(value: int) -> bytes:
    return U64.pack(value)


def i64(value: int) -> bytes:
    return I64.pack(value)


def u32(value: int) -> bytes:
    return U32.pack(value)


class Reader:
    """Sequential decoder for the fixed-width layouts above."""

    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.offset = offset

    def u64(self) -> int:
        return self._unpack(U64, 8)

    def i64(self) -> int:
        return self._unpack(I64, 8)

    def u32(self) -> int:
        return self._unpack(U32, 4)

    def _unpack(self, fmt: struct.Struct, width: int) -> int:
        try:
            (value,) = fmt.unpack_from(self.data, self.offset)
        except struct.error:
            raise ValueError("truncated input") from None
        self.offset += width
        return value

    def take(self, n: int) -> bytes:
        chunk = self.data[self.offset : self.offset + n]
        if len(chunk) != n:
            raise ValueError("truncated input")
        self.offset += n
        return chunk

    def done(self) -> bool:
        return self.offset == len(self.data)
