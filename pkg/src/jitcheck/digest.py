"""MD5 and the parameterized MD5 variant used for per-request measurement.

The variant keeps the RFC 1321 padding, message schedule and rotation
amounts, and changes three things:

* the chaining IV,
* each of the 64 additive step constants (XORed with a per-step mask),
* the final 16 output bytes (XORed with an output mask).

The compression loop is compiled with numba when it is importable; the
same Python source runs unmodified otherwise.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn

__all__ = [
    "DigestParams",
    "IDENTITY_PARAMS",
    "MD5_CONSTANTS",
    "MD5_IV",
    "md5_reference",
    "parameterized_digest",
    "hexdigest",
]

MD5_IV = (0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476)
MD5_CONSTANTS = tuple(int(abs(math.sin(i + 1)) * 2**32) & 0xFFFFFFFF for i in range(64))
_SHIFTS = (
    (7, 12, 17, 22) * 4
    + (5, 9, 14, 20) * 4
    + (4, 11, 16, 23) * 4
    + (6, 10, 15, 21) * 4
)

_SHIFTS_ARR = np.array(_SHIFTS, dtype=np.int64)
_MASK32 = 0xFFFFFFFF


@dataclass(frozen=True)
class DigestParams:
    iv: tuple[int, ...]
    round_masks: tuple[int, ...]
    out_mask: bytes

    def __post_init__(self):
        iv = tuple(self.iv)
        masks = tuple(self.round_masks)
        if len(iv) != 4:
            raise ValueError(f"iv must have 4 words, got {len(iv)}")
        if len(masks) != 64:
            raise ValueError(f"round_masks must have 64 words, got {len(masks)}")
        for w in iv + masks:
            if not 0 <= w <= _MASK32:
                raise ValueError(f"word out of 32-bit range: {w!r}")
        out_mask = bytes(self.out_mask)
        if len(out_mask) != 16:
            raise ValueError(f"out_mask must be 16 bytes, got {len(out_mask)}")
        object.__setattr__(self, "iv", iv)
        object.__setattr__(self, "round_masks", masks)
        object.__setattr__(self, "out_mask", out_mask)

    def with_out_mask(self, out_mask: bytes) -> "DigestParams":
        return DigestParams(self.iv, self.round_masks, out_mask)

    def is_identity(self) -> bool:
        return self == IDENTITY_PARAMS


IDENTITY_PARAMS = DigestParams(MD5_IV, (0,) * 64, bytes(16))


@njit(cache=True)
def _compress_blocks(state, words, constants, shifts):
    # state: int64[4]; words: int64[n*16] little-endian message words.
    mask = 0xFFFFFFFF
    a0 = state[0]
    b0 = state[1]
    c0 = state[2]
    d0 = state[3]
    nblocks = words.shape[0] // 16
    for blk in range(nblocks):
        base = blk * 16
        a = a0
        b = b0
        c = c0
        d = d0
        for i in range(64):
            if i < 16:
                f = (b & c) | ((~b & mask) & d)
                g = i
            elif i < 32:
                f = (d & b) | ((~d & mask) & c)
                g = (5 * i + 1) % 16
            elif i < 48:
                f = b ^ c ^ d
                g = (3 * i + 5) % 16
            else:
                f = c ^ (b | (~d & mask))
                g = (7 * i) % 16
            x = (a + f + constants[i] + words[base + g]) & mask
            s = shifts[i]
            x = ((x << s) | (x >> (32 - s))) & mask
            a = d
            d = c
            c = b
            b = (b + x) & mask
        a0 = (a0 + a) & mask
        b0 = (b0 + b) & mask
        c0 = (c0 + c) & mask
        d0 = (d0 + d) & mask
    state[0] = a0
    state[1] = b0
    state[2] = c0
    state[3] = d0


@lru_cache(maxsize=256)
def _step_constants(round_masks: tuple[int, ...]) -> np.ndarray:
    arr = np.array([k ^ m for k, m in zip(MD5_CONSTANTS, round_masks)], dtype=np.int64)
    arr.setflags(write=False)
    return arr


def _pad(message: bytes) -> bytes:
    n = len(message)
    tail = b"\x80" + b"\x00" * ((55 - n) % 64) + struct.pack("<Q", (n * 8) & 0xFFFFFFFFFFFFFFFF)
    return message + tail


def parameterized_digest(params: DigestParams, message: bytes) -> bytes:
    """Digest ``message`` with the MD5 variant described by ``params``.

    Under ``IDENTITY_PARAMS`` this is plain MD5.
    """
    padded = _pad(bytes(message))
    words = np.frombuffer(padded, dtype="<u4").astype(np.int64)
    state = np.array(params.iv, dtype=np.int64)
    _compress_blocks(state, words, _step_constants(params.round_masks), _SHIFTS_ARR)
    raw = struct.pack("<4I", *(int(w) for w in state))
    if any(params.out_mask):
        raw = bytes(x ^ y for x, y in zip(raw, params.out_mask))
    return raw


def md5_reference(message: bytes) -> bytes:
    """Standard MD5 of ``message`` as 16 raw bytes."""
    return hashlib.md5(bytes(message)).digest()


def hexdigest(digest: bytes) -> str:
    return digest.hex()
