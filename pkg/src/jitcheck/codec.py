"""Big-endian primitives for the length-prefixed byte layouts."""

from __future__ import annotations

import struct

from .errors import DecodeError


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def raw(self, data: bytes) -> "Writer":
        self._parts.append(bytes(data))
        return self

    def u8(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">B", value))
        return self

    def u16(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">H", value))
        return self

    def u32(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">I", value))
        return self

    def u64(self, value: int) -> "Writer":
        self._parts.append(struct.pack(">Q", value))
        return self

    def bytes8(self, data: bytes) -> "Writer":
        if len(data) > 0xFF:
            raise ValueError(f"field too long for 8-bit length: {len(data)}")
        return self.u8(len(data)).raw(data)

    def bytes16(self, data: bytes) -> "Writer":
        if len(data) > 0xFFFF:
            raise ValueError(f"field too long for 16-bit length: {len(data)}")
        return self.u16(len(data)).raw(data)

    def text16(self, text: str) -> "Writer":
        return self.bytes16(text.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes):
        self._data = memoryview(bytes(data))
        self._pos = 0

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def raw(self, n: int, field: str) -> bytes:
        if n > self.remaining:
            raise DecodeError(field, f"truncated {field}: need {n} bytes, have {self.remaining}")
        out = self._data[self._pos:self._pos + n].tobytes()
        self._pos += n
        return out

    def _unpack(self, fmt: str, field: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.raw(size, field))[0]

    def u8(self, field: str) -> int:
        return self._unpack(">B", field)

    def u16(self, field: str) -> int:
        return self._unpack(">H", field)

    def u32(self, field: str) -> int:
        return self._unpack(">I", field)

    def u64(self, field: str) -> int:
        return self._unpack(">Q", field)

    def bytes8(self, field: str) -> bytes:
        n = self.u8(f"{field} length")
        if n > self.remaining:
            raise DecodeError(field, f"length overrun in {field}: {n} > {self.remaining}")
        return self.raw(n, field)

    def bytes16(self, field: str) -> bytes:
        n = self.u16(f"{field} length")
        if n > self.remaining:
            raise DecodeError(field, f"length overrun in {field}: {n} > {self.remaining}")
        return self.raw(n, field)

    def text16(self, field: str) -> str:
        data = self.bytes16(field)
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(field, f"invalid UTF-8 in {field}") from exc

    def finish(self, what: str) -> None:
        if self.remaining:
            raise DecodeError("trailing", f"{self.remaining} trailing bytes after {what}")
