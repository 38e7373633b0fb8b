"""Deterministic attacker scenarios run against the real protocol stack.

Every scenario talks to a ``ServerSession`` through an in-memory loopback
transport, so the server code paths exercised here are the production
ones. The only thing simulated is time.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Union

from .crypto import encrypt_report
from .digest import md5_reference
from .errors import CheckerError
from .program import ArtifactId, MeasurementReport, decode_program, local_env_resolver
from .protocol import (
    CheckServer,
    LoopbackTransport,
    client_run_check,
    request_resource,
)
from .store import GoldenArtifact, GoldenStore, Status
from .wire import AutocheckRequest, MsgType, StatusMessage, encode_frame

BASE_TIME = 1_700_000_000


class HarnessError(CheckerError):
    pass


class Kind(str, enum.Enum):
    HONEST = "HONEST"
    TAMPERED_ARTIFACT = "TAMPERED_ARTIFACT"
    REPLAY = "REPLAY"
    BYPASS = "BYPASS"
    PRECOMPUTE_STANDARD_MD5 = "PRECOMPUTE_STANDARD_MD5"
    FORGED_IDENTITY = "FORGED_IDENTITY"
    STRIP_CHECK = "STRIP_CHECK"


@dataclass(frozen=True)
class Attack:
    kind: Kind
    artifact_index: int = 0
    bit: int = 0
    victim: Optional[str] = None

    def validate(self, store: GoldenStore) -> None:
        if self.kind is Kind.TAMPERED_ARTIFACT:
            if not 0 <= self.artifact_index < len(store.artifacts):
                raise HarnessError(f"artifact index {self.artifact_index} out of range")
            size = store.artifacts[self.artifact_index].size
            if not 0 <= self.bit < size * 8:
                raise HarnessError(f"bit {self.bit} outside artifact of {size} bytes")


@dataclass(frozen=True)
class ScenarioResult:
    kind: Kind
    node_id: str
    status: Status
    reason: str
    resource_granted: bool
    detected: bool


class SimClock:
    def __init__(self, start: int = BASE_TIME):
        self.now = start

    def __call__(self) -> int:
        return self.now

    def advance(self, seconds: int = 1) -> None:
        self.now += seconds


class _RecordingTransport(LoopbackTransport):
    def __init__(self, session):
        super().__init__(session)
        self.sent: list[bytes] = []

    def send(self, data: bytes) -> None:
        self.sent.append(bytes(data))
        super().send(data)


def flip_bit(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def _golden_resolver(store: GoldenStore):
    return store.golden_bytes


def _tampered_resolver(store: GoldenStore, index: int, bit: int):
    target = store.artifacts[index].artifact_id
    flipped = flip_bit(store.artifacts[index].data, bit)

    def resolve(aid: ArtifactId) -> bytes:
        return flipped if aid == target else store.golden_bytes(aid)

    return resolve


def _try_resource(transport, node_id: str, resource_id: str) -> bool:
    try:
        return request_resource(transport, node_id, resource_id).granted
    except (CheckerError, ConnectionError, TimeoutError):
        return False


def _request_program(transport, node_id: str):
    req = AutocheckRequest(node_id)
    transport.send(encode_frame(MsgType.AUTOCHECK_REQ, req.to_payload()))
    msg_type, payload = transport.recv_frame()
    if msg_type is not MsgType.PROGRAM:
        raise HarnessError(f"expected PROGRAM, got {msg_type.name}")
    return decode_program(payload)


def _read_status(transport) -> Optional[StatusMessage]:
    try:
        msg_type, payload = transport.recv_frame()
    except (ConnectionError, TimeoutError):
        return None
    return StatusMessage.from_payload(payload) if msg_type is MsgType.STATUS else None


def run_scenario(
    attack: Union[Attack, Kind, str],
    store: GoldenStore,
    seed: int,
    *,
    node_id: Optional[str] = None,
    clock: Optional[SimClock] = None,
) -> ScenarioResult:
    """Play one attacker (or the honest node) against a fresh server.

    The server's rng is seeded from ``(seed, node_id)``, so the same seed
    can be replayed on one store as long as node ids differ.
    """
    if not isinstance(attack, Attack):
        attack = Attack(Kind(attack))
    attack.validate(store)
    if not store.artifacts or not store.resources:
        raise HarnessError("store needs at least one artifact and one resource")
    kind = attack.kind
    node = node_id or f"{kind.value.lower()}-{seed}"
    clock = clock or SimClock()
    server = CheckServer(store, random.Random(f"{seed}:{node}"), clock)
    vital = next(iter(store.resources))

    def connect():
        return LoopbackTransport(server.new_session())

    subject = node
    granted = False
    try:
        if kind in (Kind.HONEST, Kind.TAMPERED_ARTIFACT):
            resolver = (
                _golden_resolver(store)
                if kind is Kind.HONEST
                else _tampered_resolver(store, attack.artifact_index, attack.bit)
            )
            t = connect()
            client_run_check(t, node, resolver, local_env_resolver)
            granted = _try_resource(t, node, vital)

        elif kind is Kind.REPLAY:
            t = _RecordingTransport(server.new_session())
            client_run_check(t, node, _golden_resolver(store), local_env_resolver)
            captured = next(f for f in t.sent if f[4] == MsgType.REPORT)
            clock.advance()
            t2 = connect()
            _request_program(t2, node)
            t2.send(captured)
            _read_status(t2)
            granted = _try_resource(t2, node, vital)

        elif kind is Kind.BYPASS:
            granted = _try_resource(connect(), node, vital)

        elif kind is Kind.STRIP_CHECK:
            t = connect()
            granted = any([_try_resource(t, node, rid) for rid in store.resources])

        elif kind is Kind.PRECOMPUTE_STANDARD_MD5:
            precomputed = {a.artifact_id: md5_reference(a.data) for a in store.artifacts}
            t = connect()
            program = _request_program(t, node)
            report = MeasurementReport(
                program.program_id,
                node,
                tuple((aid, precomputed[aid]) for aid in program.targets),
                tuple((name, local_env_resolver(name) or "unavailable") for name in program.env_props),
            )
            t.send(encode_frame(MsgType.REPORT, encrypt_report(program, report).to_bytes()))
            _read_status(t)
            granted = _try_resource(t, node, vital)

        elif kind is Kind.FORGED_IDENTITY:
            subject = attack.victim or f"{node}-victim"
            t = connect()
            client_run_check(t, node, _golden_resolver(store), local_env_resolver)
            granted = _try_resource(connect(), subject, vital)

        else:  # pragma: no cover
            raise HarnessError(f"unhandled scenario {kind}")
    finally:
        clock.advance()

    record = store.get_status(subject)
    reason = record.history[-1].reason.split(":", 1)[0] if record.history else ""
    return ScenarioResult(
        kind=kind,
        node_id=subject,
        status=record.status,
        reason=reason,
        resource_granted=granted,
        detected=kind is not Kind.HONEST and not granted,
    )


@dataclass
class KindMetrics:
    trials: int = 0
    passed: int = 0
    detected: int = 0
    granted: int = 0

    def rate(self, kind: Kind) -> Optional[float]:
        if not self.trials:
            return None
        hits = self.passed if kind is Kind.HONEST else self.detected
        return hits / self.trials


@dataclass
class CampaignResult:
    seed: int
    metrics: dict[Kind, KindMetrics] = field(default_factory=dict)
    results: list[ScenarioResult] = field(default_factory=list, repr=False)

    @property
    def honest_pass_rate(self) -> Optional[float]:
        return self.metrics[Kind.HONEST].rate(Kind.HONEST)

    @property
    def ok(self) -> bool:
        return all(m.rate(k) in (None, 1.0) for k, m in self.metrics.items())

    def to_dict(self) -> dict:
        kinds = {}
        for kind, m in self.metrics.items():
            kinds[kind.value] = {**asdict(m), "rate": m.rate(kind)}
        return {
            "seed": self.seed,
            "kinds": kinds,
            "honest_pass_rate": self.honest_pass_rate,
            "ok": self.ok,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self) -> str:
        header = ("kind", "trials", "passed", "detected", "granted", "rate")
        rows = [header]
        for kind, m in self.metrics.items():
            rate = m.rate(kind)
            rows.append(
                (
                    kind.value,
                    str(m.trials),
                    str(m.passed),
                    str(m.detected),
                    str(m.granted),
                    "n/a" if rate is None else f"{rate:.4f}",
                )
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = []
        for r in rows:
            cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
            lines.append("  ".join(cells))
        hp = self.honest_pass_rate
        lines.append(f"honest pass rate: {'n/a' if hp is None else f'{hp:.4f}'}")
        lines.append(f"result: {'OK' if self.ok else 'FAILED'}")
        return "\n".join(lines)


def run_campaign(
    store: GoldenStore,
    counts: Mapping[Union[Kind, str], int],
    seed: int,
    *,
    prefix: str = "",
) -> CampaignResult:
    """Run ``counts[kind]`` scenarios of each kind, in ``Kind`` order."""
    wanted = {Kind(k): int(n) for k, n in counts.items()}
    if any(n < 0 for n in wanted.values()):
        raise HarnessError("trial counts must be non-negative")
    master = random.Random(seed)
    clock = SimClock()
    result = CampaignResult(seed, {k: KindMetrics() for k in Kind})
    for kind in Kind:
        for trial in range(wanted.get(kind, 0)):
            trial_seed = master.getrandbits(64)
            attack = Attack(kind)
            if kind is Kind.TAMPERED_ARTIFACT:
                index = master.randrange(len(store.artifacts))
                bit = master.randrange(store.artifacts[index].size * 8)
                attack = Attack(kind, artifact_index=index, bit=bit)
            node = f"{prefix}{kind.value.lower()}-{trial}"
            res = run_scenario(attack, store, trial_seed, node_id=node, clock=clock)
            result.results.append(res)
            m = result.metrics[kind]
            m.trials += 1
            m.passed += res.status is Status.PASS
            m.detected += res.detected
            m.granted += res.resource_granted
    return result


DEMO_ARTIFACTS = (
    ("sp2pen.jar", 8192),
    ("lib/virgo-core.jar", 4096),
    ("lib/knapsack-worker.jar", 2048),
)


def demo_artifacts(seed: int = 0) -> list[GoldenArtifact]:
    rng = random.Random(seed)
    return [GoldenArtifact(ArtifactId(name), rng.randbytes(size)) for name, size in DEMO_ARTIFACTS]


def demo_store(seed: int = 0, audit_log=None, **kwargs) -> GoldenStore:
    return GoldenStore(demo_artifacts(seed), audit_log, **kwargs)


ALL_KINDS: tuple[Kind, ...] = tuple(Kind)


def parse_kinds(spec: str) -> Iterable[Kind]:
    if spec.lower() == "all":
        return ALL_KINDS
    return tuple(Kind(s.strip().upper()) for s in spec.split(","))
