"""Per-request measurement programs: generation, wire layout and execution.

A program is plain data. The server draws a fresh one for every check
request, the node interprets it over its local artifacts, and the server
interprets the very same program over its golden copies. Nothing about
the digest parameters, salts or key material is reusable across requests.
"""

from __future__ import annotations

import logging
import platform
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol, Sequence

from .codec import Reader, Writer
from .digest import IDENTITY_PARAMS, DigestParams, parameterized_digest
from .errors import DecodeError, InvalidRequestError, MeasurementError

log = logging.getLogger(__name__)

PROGRAM_VERSION = 0x01
NONCE_SIZE = 16
SEED_SIZE = 16
MAX_SALT = 64
SALT_MIN, SALT_MAX = 8, 32
UNAVAILABLE = "unavailable"
DEFAULT_ENV_PROPS = ("runtime.name", "runtime.version", "os.name")


class ByteSource(Protocol):
    def randbytes(self, n: int) -> bytes: ...


@dataclass(frozen=True, order=True)
class ArtifactId:
    id: str
    version: str = "1"

    def __post_init__(self):
        if not self.id:
            raise ValueError("artifact id must be non-empty")

    def __str__(self) -> str:
        return f"{self.id}@{self.version}"


@dataclass(frozen=True)
class MeasurementProgram:
    program_id: bytes
    node_id: str
    issued_at: int
    ttl_seconds: int
    params: DigestParams
    seed: bytes
    salt_prefix: bytes
    salt_suffix: bytes
    targets: tuple[ArtifactId, ...]
    env_props: tuple[str, ...] = DEFAULT_ENV_PROPS

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "env_props", tuple(self.env_props))
        if len(self.program_id) != NONCE_SIZE:
            raise ValueError("program_id must be 16 bytes")
        if len(self.seed) != SEED_SIZE:
            raise ValueError("seed must be 16 bytes")
        if len(self.salt_prefix) > MAX_SALT or len(self.salt_suffix) > MAX_SALT:
            raise ValueError("salts are limited to 64 bytes")
        if not self.targets:
            raise ValueError("program needs at least one target")
        if self.ttl_seconds <= 0:
            raise ValueError("ttl_seconds must be positive")
        if self.issued_at < 0:
            raise ValueError("issued_at must be non-negative")

    @property
    def expires_at(self) -> int:
        return self.issued_at + self.ttl_seconds


@dataclass(frozen=True)
class MeasurementReport:
    program_id: bytes
    node_id: str
    artifact_digests: tuple[tuple[ArtifactId, bytes], ...]
    env_values: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(
            self, "artifact_digests", tuple((a, bytes(d)) for a, d in self.artifact_digests)
        )
        object.__setattr__(self, "env_values", tuple(tuple(kv) for kv in self.env_values))

    def digest_list(self) -> list[bytes]:
        return [d for _, d in self.artifact_digests]


def _draw_params(rng: ByteSource) -> DigestParams:
    iv = tuple(int.from_bytes(rng.randbytes(4), "big") for _ in range(4))
    masks = tuple(int.from_bytes(rng.randbytes(4), "big") for _ in range(64))
    return DigestParams(iv, masks, rng.randbytes(16))


def _draw_salt(rng: ByteSource) -> bytes:
    n = SALT_MIN + rng.randbytes(1)[0] % (SALT_MAX - SALT_MIN + 1)
    return rng.randbytes(n)


def generate_program(
    node_id: str,
    targets: Sequence[ArtifactId],
    env_props: Iterable[str] = DEFAULT_ENV_PROPS,
    *,
    now: int,
    ttl: int,
    rng: ByteSource,
) -> MeasurementProgram:
    """Draw a fresh measurement program for ``node_id``.

    Random fields are consumed from ``rng`` in this order: program_id (16
    bytes), seed (16), iv words 0-3 (4 bytes each, big-endian), round masks
    0-63 (same), out_mask (16), prefix length byte, prefix bytes, suffix
    length byte, suffix bytes. A length byte ``b`` gives a salt of
    ``8 + b % 25`` bytes. Params equal to the identity are redrawn.
    """
    if not targets:
        raise InvalidRequestError("empty target list")
    if ttl <= 0:
        raise InvalidRequestError("ttl must be positive")
    program_id = rng.randbytes(NONCE_SIZE)
    seed = rng.randbytes(SEED_SIZE)
    params = _draw_params(rng)
    while params == IDENTITY_PARAMS:
        log.warning("drew identity digest params, redrawing")
        params = _draw_params(rng)
    prefix = _draw_salt(rng)
    suffix = _draw_salt(rng)
    return MeasurementProgram(
        program_id=program_id,
        node_id=node_id,
        issued_at=int(now),
        ttl_seconds=int(ttl),
        params=params,
        seed=seed,
        salt_prefix=prefix,
        salt_suffix=suffix,
        targets=tuple(targets),
        env_props=tuple(env_props),
    )


def encode_program(p: MeasurementProgram) -> bytes:
    w = Writer().u8(PROGRAM_VERSION).raw(p.program_id).u64(p.issued_at).u32(p.ttl_seconds)
    w.text16(p.node_id)
    for word in p.params.iv:
        w.u32(word)
    for word in p.params.round_masks:
        w.u32(word)
    w.raw(p.params.out_mask).raw(p.seed)
    w.bytes8(p.salt_prefix).bytes8(p.salt_suffix)
    w.u16(len(p.targets))
    for t in p.targets:
        w.text16(t.id).text16(t.version)
    w.u16(len(p.env_props))
    for name in p.env_props:
        w.text16(name)
    return w.getvalue()


def decode_program(data: bytes) -> MeasurementProgram:
    if not data:
        raise DecodeError("header", "truncated header")
    r = Reader(data)
    version = r.u8("version")
    if version != PROGRAM_VERSION:
        raise DecodeError("version", f"unknown version 0x{version:02x}")
    program_id = r.raw(NONCE_SIZE, "program_id")
    issued_at = r.u64("issued_at")
    ttl = r.u32("ttl")
    node_id = r.text16("node_id")
    iv = tuple(r.u32("iv") for _ in range(4))
    masks = tuple(r.u32("round_masks") for _ in range(64))
    out_mask = r.raw(16, "out_mask")
    seed = r.raw(SEED_SIZE, "seed")
    prefix = r.bytes8("salt_prefix")
    suffix = r.bytes8("salt_suffix")
    if len(prefix) > MAX_SALT or len(suffix) > MAX_SALT:
        raise DecodeError("salt", "salt longer than 64 bytes")
    targets = []
    for _ in range(r.u16("targets count")):
        tid = r.text16("target id")
        tver = r.text16("target version")
        if not tid:
            raise DecodeError("target id", "empty target id")
        targets.append(ArtifactId(tid, tver))
    props = tuple(r.text16("env_prop") for _ in range(r.u16("env_props count")))
    r.finish("program")
    if not targets:
        raise DecodeError("targets", "program has no targets")
    if ttl == 0:
        raise DecodeError("ttl", "ttl must be positive")
    return MeasurementProgram(
        program_id=program_id,
        node_id=node_id,
        issued_at=issued_at,
        ttl_seconds=ttl,
        params=DigestParams(iv, masks, out_mask),
        seed=seed,
        salt_prefix=prefix,
        salt_suffix=suffix,
        targets=tuple(targets),
        env_props=props,
    )


def measure_artifact(p: MeasurementProgram, data: bytes) -> bytes:
    return parameterized_digest(p.params, p.salt_prefix + bytes(data) + p.salt_suffix)


def execute_program(
    p: MeasurementProgram,
    artifact_resolver: Callable[[ArtifactId], bytes],
    env_resolver: Optional[Callable[[str], Optional[str]]] = None,
) -> MeasurementReport:
    """Run ``p`` over the artifacts ``artifact_resolver`` yields.

    Any resolver failure aborts the whole run with MeasurementError; a
    partial report is never produced.
    """
    digests = []
    for target in p.targets:
        try:
            data = artifact_resolver(target)
        except Exception as exc:
            raise MeasurementError(target, exc) from exc
        if data is None:
            raise MeasurementError(target, LookupError("resolver returned nothing"))
        digests.append((target, measure_artifact(p, data)))

    env_values = []
    for name in p.env_props:
        value = None
        if env_resolver is not None:
            try:
                value = env_resolver(name)
            except (KeyError, LookupError):
                value = None
        env_values.append((name, UNAVAILABLE if value is None else str(value)))

    return MeasurementReport(p.program_id, p.node_id, tuple(digests), tuple(env_values))


def encode_report(r: MeasurementReport) -> bytes:
    w = Writer().raw(r.program_id).text16(r.node_id)
    w.u16(len(r.artifact_digests))
    for artifact, digest in r.artifact_digests:
        w.text16(artifact.id).text16(artifact.version).raw(digest)
    w.u16(len(r.env_values))
    for name, value in r.env_values:
        w.text16(name).text16(value)
    return w.getvalue()


def decode_report(data: bytes) -> MeasurementReport:
    if not data:
        raise DecodeError("header", "truncated header")
    r = Reader(data)
    program_id = r.raw(NONCE_SIZE, "program_id")
    node_id = r.text16("node_id")
    digests = []
    for _ in range(r.u16("digest count")):
        aid = r.text16("artifact id")
        aver = r.text16("artifact version")
        if not aid:
            raise DecodeError("artifact id", "empty artifact id")
        digests.append((ArtifactId(aid, aver), r.raw(16, "digest")))
    env = []
    for _ in range(r.u16("env count")):
        env.append((r.text16("env name"), r.text16("env value")))
    r.finish("report")
    return MeasurementReport(program_id, node_id, tuple(digests), tuple(env))


_ENV_LOOKUP = {
    "runtime.name": platform.python_implementation,
    "runtime.version": platform.python_version,
    "os.name": platform.system,
}


def local_env_resolver(name: str) -> Optional[str]:
    fn = _ENV_LOOKUP.get(name)
    return fn() if fn else None
