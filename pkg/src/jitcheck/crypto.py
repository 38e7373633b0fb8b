"""Report encryption bound to a single measurement program.

Everything here is built from the program's own parameterized digest:
a counter-mode keystream for confidentiality and an encrypt-then-MAC tag
for integrity. It models per-request encryption; it is not meant as
general purpose cryptography.
"""

from __future__ import annotations

import hmac
import struct
from dataclasses import dataclass

from .codec import Reader, Writer
from .digest import parameterized_digest
from .errors import AuthenticationError, BindingError, DecodeError, MalformedReportError
from .program import (
    NONCE_SIZE,
    MeasurementProgram,
    MeasurementReport,
    decode_report,
    encode_report,
)

KEY_LABEL = b"SP2P-KEY"
MAC_LABEL = b"SP2P-MAC"
BLOCK = 16


@dataclass(frozen=True)
class EncryptedReport:
    program_id: bytes
    ciphertext: bytes
    mac: bytes

    def to_bytes(self) -> bytes:
        return (
            Writer()
            .raw(self.program_id)
            .u32(len(self.ciphertext))
            .raw(self.ciphertext)
            .raw(self.mac)
            .getvalue()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedReport":
        r = Reader(data)
        program_id = r.raw(NONCE_SIZE, "program_id")
        n = r.u32("ciphertext length")
        if n > r.remaining:
            raise DecodeError("ciphertext", f"length overrun in ciphertext: {n} > {r.remaining}")
        ciphertext = r.raw(n, "ciphertext")
        mac = r.raw(16, "mac")
        r.finish("encrypted report")
        return cls(program_id, ciphertext, mac)


def derive_key(p: MeasurementProgram) -> bytes:
    return parameterized_digest(p.params, p.seed + p.node_id.encode("utf-8") + KEY_LABEL)


def keystream(p: MeasurementProgram, key: bytes, length: int) -> bytes:
    blocks = []
    for i in range((length + BLOCK - 1) // BLOCK):
        blocks.append(parameterized_digest(p.params, key + p.program_id + struct.pack(">Q", i)))
    return b"".join(blocks)[:length]


def _xor(data: bytes, stream: bytes) -> bytes:
    n = len(data)
    return (int.from_bytes(data, "big") ^ int.from_bytes(stream, "big")).to_bytes(n, "big")


def _mac(p: MeasurementProgram, key: bytes, ciphertext: bytes) -> bytes:
    return parameterized_digest(p.params, key + p.program_id + ciphertext + MAC_LABEL)


def encrypt_report(p: MeasurementProgram, r: MeasurementReport) -> EncryptedReport:
    if r.program_id != p.program_id:
        raise ValueError("report does not belong to this program")
    key = derive_key(p)
    plaintext = encode_report(r)
    ciphertext = _xor(plaintext, keystream(p, key, len(plaintext)))
    return EncryptedReport(p.program_id, ciphertext, _mac(p, key, ciphertext))


def decrypt_report(p: MeasurementProgram, e: EncryptedReport) -> MeasurementReport:
    """Verify and open ``e`` under program ``p``.

    Raises AuthenticationError on a bad tag, MalformedReportError when an
    authentic plaintext does not decode, and BindingError when the report
    names another challenge.
    """
    key = derive_key(p)
    if not hmac.compare_digest(_mac(p, key, e.ciphertext), e.mac):
        raise AuthenticationError("report MAC mismatch")
    if e.program_id != p.program_id:
        raise BindingError("encrypted report is addressed to another program")
    plaintext = _xor(e.ciphertext, keystream(p, key, len(e.ciphertext)))
    try:
        report = decode_report(plaintext)
    except DecodeError as exc:
        raise MalformedReportError(str(exc)) from exc
    if report.program_id != p.program_id:
        raise BindingError("decrypted report names another program")
    return report
