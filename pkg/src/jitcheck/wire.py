"""Framed binary messages exchanged between node and server.

Frame: ``u32 payload length | u8 type | payload``, all integers big-endian.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .codec import Reader, Writer
from .errors import DecodeError, ProtocolError

HEADER = struct.Struct(">IB")
DEFAULT_MAX_FRAME = 16 * 1024 * 1024
DEFAULT_PORT = 7413


class MsgType(enum.IntEnum):
    AUTOCHECK_REQ = 0x01
    PROGRAM = 0x02
    REPORT = 0x03
    STATUS = 0x04
    RESOURCE_REQ = 0x05
    RESOURCE_RESP = 0x06


class Reason(enum.IntEnum):
    """One-byte reason codes carried in STATUS messages."""

    NONE = 0
    MALFORMED = 1
    UNKNOWN_CHALLENGE = 2
    REPLAY = 3
    EXPIRED = 4
    AUTH_FAIL = 5
    MALFORMED_REPORT = 6
    DIGEST_MISMATCH = 7
    NODE_MISMATCH = 8


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    return HEADER.pack(len(payload), int(msg_type)) + bytes(payload)


class FrameDecoder:
    """Incremental frame parser for one direction of a byte stream."""

    def __init__(self, max_payload: int = DEFAULT_MAX_FRAME):
        self.max_payload = max_payload
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[MsgType, bytes]]:
        self._buf += data
        frames = []
        while len(self._buf) >= HEADER.size:
            length, raw_type = HEADER.unpack_from(self._buf)
            if length > self.max_payload:
                raise ProtocolError(f"frame payload {length} exceeds maximum {self.max_payload}")
            try:
                msg_type = MsgType(raw_type)
            except ValueError:
                raise ProtocolError(f"unknown message type 0x{raw_type:02x}") from None
            end = HEADER.size + length
            if len(self._buf) < end:
                break
            frames.append((msg_type, bytes(self._buf[HEADER.size:end])))
            del self._buf[:end]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)

    def eof(self) -> None:
        if self._buf:
            raise ProtocolError(f"stream ended inside a frame ({len(self._buf)} bytes pending)")


def _parse(cls, payload: bytes, what: str):
    try:
        return cls._read(Reader(payload))
    except DecodeError as exc:
        raise ProtocolError(f"bad {what} payload: {exc}") from exc


@dataclass(frozen=True)
class AutocheckRequest:
    node_id: str
    client_version: str = "1"

    def to_payload(self) -> bytes:
        return Writer().text16(self.node_id).text16(self.client_version).getvalue()

    @classmethod
    def _read(cls, r: Reader):
        msg = cls(r.text16("node_id"), r.text16("client_version"))
        r.finish("AUTOCHECK_REQ")
        return msg

    @classmethod
    def from_payload(cls, payload: bytes) -> "AutocheckRequest":
        return _parse(cls, payload, "AUTOCHECK_REQ")


@dataclass(frozen=True)
class StatusMessage:
    program_id: bytes
    passed: bool
    reason: Reason

    def to_payload(self) -> bytes:
        return Writer().raw(self.program_id).u8(int(self.passed)).u8(self.reason).getvalue()

    @classmethod
    def _read(cls, r: Reader):
        program_id = r.raw(16, "program_id")
        passed = r.u8("status")
        code = r.u8("reason")
        r.finish("STATUS")
        if passed not in (0, 1):
            raise DecodeError("status", f"bad status byte {passed}")
        try:
            reason = Reason(code)
        except ValueError:
            raise DecodeError("reason", f"unknown reason code {code}") from None
        return cls(program_id, bool(passed), reason)

    @classmethod
    def from_payload(cls, payload: bytes) -> "StatusMessage":
        return _parse(cls, payload, "STATUS")


@dataclass(frozen=True)
class ResourceRequest:
    node_id: str
    resource_id: str

    def to_payload(self) -> bytes:
        return Writer().text16(self.node_id).text16(self.resource_id).getvalue()

    @classmethod
    def _read(cls, r: Reader):
        msg = cls(r.text16("node_id"), r.text16("resource_id"))
        r.finish("RESOURCE_REQ")
        return msg

    @classmethod
    def from_payload(cls, payload: bytes) -> "ResourceRequest":
        return _parse(cls, payload, "RESOURCE_REQ")


@dataclass(frozen=True)
class ResourceResponse:
    granted: bool
    payload: bytes = b""

    def to_payload(self) -> bytes:
        return Writer().u8(int(self.granted)).u32(len(self.payload)).raw(self.payload).getvalue()

    @classmethod
    def _read(cls, r: Reader):
        granted = r.u8("status")
        n = r.u32("payload length")
        if n > r.remaining:
            raise DecodeError("payload", f"length overrun in payload: {n} > {r.remaining}")
        data = r.raw(n, "payload")
        r.finish("RESOURCE_RESP")
        if granted not in (0, 1):
            raise DecodeError("status", f"bad status byte {granted}")
        return cls(bool(granted), data)

    @classmethod
    def from_payload(cls, payload: bytes) -> "ResourceResponse":
        return _parse(cls, payload, "RESOURCE_RESP")
