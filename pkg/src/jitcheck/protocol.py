"""Check protocol state machines and pass-gated resource delivery.

Message flow for one check::

    node                          server
    AUTOCHECK_REQ  ------------>  generate + register program
                   <------------  PROGRAM
    execute, encrypt
    REPORT         ------------>  consume, decrypt, re-execute on golden copies
                   <------------  STATUS (PASS/FAIL + reason)
    RESOURCE_REQ   ------------>  granted only on a fresh PASS
                   <------------  RESOURCE_RESP
"""

from __future__ import annotations

import enum
import logging
import random
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from .crypto import EncryptedReport, decrypt_report, encrypt_report
from .errors import (
    AuthenticationError,
    BindingError,
    CheckerError,
    DecodeError,
    MalformedReportError,
    MeasurementError,
    ProtocolError,
    StoreError,
)
from .program import (
    DEFAULT_ENV_PROPS,
    ArtifactId,
    ByteSource,
    MeasurementProgram,
    decode_program,
    encode_program,
    execute_program,
    generate_program,
)
from .store import ConsumeOutcome, GoldenStore, Status
from .wire import (
    DEFAULT_MAX_FRAME,
    AutocheckRequest,
    FrameDecoder,
    MsgType,
    Reason,
    ResourceRequest,
    ResourceResponse,
    StatusMessage,
    encode_frame,
)

log = logging.getLogger(__name__)

DEFAULT_TTL = 60
DEFAULT_TIMEOUT = 30.0
NO_PROGRAM = bytes(16)

_CONSUME_REASONS = {
    ConsumeOutcome.UNKNOWN_CHALLENGE: Reason.UNKNOWN_CHALLENGE,
    ConsumeOutcome.REPLAY: Reason.REPLAY,
    ConsumeOutcome.EXPIRED: Reason.EXPIRED,
    ConsumeOutcome.NODE_MISMATCH: Reason.NODE_MISMATCH,
}


def system_clock() -> int:
    return int(time.time())


class ServerState(str, enum.Enum):
    AWAIT_REQUEST = "AWAIT_REQUEST"
    ISSUED = "ISSUED"
    VERIFIED = "VERIFIED"


class ClientState(str, enum.Enum):
    INIT = "INIT"
    SENT_REQUEST = "SENT_REQUEST"
    EXECUTING = "EXECUTING"
    AWAIT_STATUS = "AWAIT_STATUS"
    RUNNING = "RUNNING"
    STOPPED = "STOPPED"


class CheckServer:
    """State shared by every session: golden store, rng, clock, limits."""

    def __init__(
        self,
        store: GoldenStore,
        rng: Optional[ByteSource] = None,
        clock: Callable[[], int] = system_clock,
        *,
        ttl: int = DEFAULT_TTL,
        max_frame: int = DEFAULT_MAX_FRAME,
        env_props=DEFAULT_ENV_PROPS,
    ):
        if ttl <= 0:
            raise ValueError("ttl must be positive")
        self.store = store
        self.rng = rng if rng is not None else random.SystemRandom()
        self.clock = clock
        self.ttl = ttl
        self.max_frame = max_frame
        self.env_props = tuple(env_props)
        self._rng_lock = threading.Lock()

    def new_session(self) -> "ServerSession":
        return ServerSession(self)

    def generate(self, node_id: str, now: int) -> MeasurementProgram:
        with self._rng_lock:
            return generate_program(
                node_id, self.store.targets, self.env_props, now=now, ttl=self.ttl, rng=self.rng
            )


def server_on_resource_request(req: ResourceRequest, store: GoldenStore, now: int) -> ResourceResponse:
    # Unknown resources and failed gating both look like a plain DENIED.
    if store.gate_status(req.node_id, now) is not Status.PASS:
        return ResourceResponse(False)
    data = store.resources.get(req.resource_id)
    if data is None:
        return ResourceResponse(False)
    return ResourceResponse(True, data)


class ServerSession:
    """Server side of one connection.

    ``receive`` takes raw bytes from the node and returns the bytes to send
    back. A protocol violation closes the session and raises ProtocolError;
    the session state itself never moves on a bad frame.
    """

    def __init__(self, server: CheckServer):
        self.server = server
        self.state = ServerState.AWAIT_REQUEST
        self.node_id: Optional[str] = None
        self.program: Optional[MeasurementProgram] = None
        self.closed = False
        self._decoder = FrameDecoder(server.max_frame)

    @property
    def program_id(self) -> Optional[bytes]:
        return self.program.program_id if self.program else None

    def receive(self, data: bytes) -> bytes:
        if self.closed:
            raise ProtocolError("session is closed")
        out = []
        try:
            for msg_type, payload in self._decoder.feed(data):
                out.append(self.handle(msg_type, payload))
                if self.closed:
                    break
        except ProtocolError:
            self.closed = True
            raise
        return b"".join(out)

    def end_of_input(self) -> None:
        self.closed = True
        self._decoder.eof()

    def handle(self, msg_type: MsgType, payload: bytes) -> bytes:
        if msg_type is MsgType.AUTOCHECK_REQ:
            return self.on_autocheck(payload)
        if msg_type is MsgType.REPORT:
            return self.on_report(payload)
        if msg_type is MsgType.RESOURCE_REQ:
            req = ResourceRequest.from_payload(payload)
            resp = server_on_resource_request(req, self.server.store, self.server.clock())
            return encode_frame(MsgType.RESOURCE_RESP, resp.to_payload())
        raise ProtocolError(f"{msg_type.name} is not a node-to-server message")

    def on_autocheck(self, payload: bytes) -> bytes:
        if self.state is not ServerState.AWAIT_REQUEST:
            raise ProtocolError(f"AUTOCHECK_REQ received in state {self.state.value}")
        try:
            req = AutocheckRequest.from_payload(payload)
        except ProtocolError:
            req = None
        if req is None or not req.node_id:
            self.closed = True
            status = StatusMessage(NO_PROGRAM, False, Reason.MALFORMED)
            return encode_frame(MsgType.STATUS, status.to_payload())
        if not self.server.store.targets:
            self.closed = True
            raise StoreError("golden store is empty; nothing to measure")

        now = self.server.clock()
        program = self.server.generate(req.node_id, now)
        self.server.store.register_issued(program)
        self.node_id = req.node_id
        self.program = program
        self.state = ServerState.ISSUED
        log.debug("issued program %s to %s", program.program_id.hex(), req.node_id)
        return encode_frame(MsgType.PROGRAM, encode_program(program))

    def on_report(self, payload: bytes) -> bytes:
        if self.state is not ServerState.ISSUED:
            raise ProtocolError(f"REPORT received in state {self.state.value}")
        try:
            sealed = EncryptedReport.from_bytes(payload)
        except DecodeError as exc:
            raise ProtocolError(f"bad REPORT payload: {exc}") from exc

        now = self.server.clock()
        reason, detail = self._verify(sealed, now)
        passed = reason is Reason.NONE
        status = Status.PASS if passed else Status.FAIL
        text = "OK" if passed else reason.name
        if detail:
            text = f"{text}: {detail}"
        try:
            self.server.store.record_status(self.node_id, sealed.program_id, status, text, now)
        except StoreError:
            self.closed = True
            raise
        self.state = ServerState.VERIFIED
        msg = StatusMessage(sealed.program_id, passed, reason)
        return encode_frame(MsgType.STATUS, msg.to_payload())

    def _verify(self, sealed: EncryptedReport, now: int) -> tuple[Reason, str]:
        store = self.server.store
        outcome = store.consume(sealed.program_id, self.node_id, now)
        if outcome is not ConsumeOutcome.OK:
            return _CONSUME_REASONS[outcome], ""
        if sealed.program_id != self.program.program_id:
            return Reason.UNKNOWN_CHALLENGE, "challenge was not issued on this session"
        program = self.program
        try:
            report = decrypt_report(program, sealed)
        except AuthenticationError as exc:
            return Reason.AUTH_FAIL, str(exc)
        except MalformedReportError as exc:
            return Reason.MALFORMED_REPORT, str(exc)
        except BindingError as exc:
            return Reason.REPLAY, str(exc)
        if report.node_id != self.node_id:
            return Reason.NODE_MISMATCH, f"report names node {report.node_id!r}"
        golden = execute_program(program, store.golden_bytes)
        if report.artifact_digests != golden.artifact_digests:
            return Reason.DIGEST_MISMATCH, _first_mismatch(report, golden)
        return Reason.NONE, ""


def _first_mismatch(report, golden) -> str:
    got = dict(report.artifact_digests)
    for artifact, digest in golden.artifact_digests:
        if got.get(artifact) != digest:
            return f"artifact {artifact}"
    return "digest list shape differs"


# transports


class Transport(Protocol):
    def send(self, data: bytes) -> None: ...

    def recv_frame(self, timeout: Optional[float] = None) -> tuple[MsgType, bytes]: ...

    def close(self) -> None: ...


class LoopbackTransport:
    """In-memory transport wired straight into a server session.

    Server replies are produced synchronously on ``send``; a ``recv_frame``
    with nothing queued raises TimeoutError at once, since nothing else
    can ever arrive.
    """

    def __init__(self, session: ServerSession):
        self.session = session
        self._inbox: deque[tuple[MsgType, bytes]] = deque()
        self._decoder = FrameDecoder(session.server.max_frame)
        self.closed = False

    def send(self, data: bytes) -> None:
        if self.closed or self.session.closed:
            raise ConnectionError("loopback connection closed")
        try:
            reply = self.session.receive(data)
        except CheckerError:
            self.closed = True
            raise ConnectionError("server closed the connection") from None
        self._inbox.extend(self._decoder.feed(reply))

    def recv_frame(self, timeout: Optional[float] = None) -> tuple[MsgType, bytes]:
        if self._inbox:
            return self._inbox.popleft()
        if self.closed or self.session.closed:
            raise ConnectionError("loopback connection closed")
        raise TimeoutError("no message from server")

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self.session.end_of_input()
            except ProtocolError:
                pass


# client


@dataclass(frozen=True)
class ClientResult:
    state: ClientState
    status: Optional[StatusMessage] = None
    reason: str = ""
    program: Optional[MeasurementProgram] = None

    @property
    def running(self) -> bool:
        return self.state is ClientState.RUNNING


class ClientSession:
    """Node side of one check; strictly sequential."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        self.state = ClientState.INIT

    def _move(self, expected: ClientState, new: ClientState) -> None:
        if self.state is not expected:
            raise ProtocolError(f"client in {self.state.value}, expected {expected.value}")
        self.state = new

    def stop(self) -> None:
        self.state = ClientState.STOPPED

    def run(
        self,
        transport: Transport,
        artifact_resolver: Callable[[ArtifactId], bytes],
        env_resolver=None,
        *,
        timeout: float = DEFAULT_TIMEOUT,
        client_version: str = "1",
    ) -> ClientResult:
        try:
            request = AutocheckRequest(self.node_id, client_version)
            transport.send(encode_frame(MsgType.AUTOCHECK_REQ, request.to_payload()))
            self._move(ClientState.INIT, ClientState.SENT_REQUEST)

            msg_type, payload = transport.recv_frame(timeout)
            if msg_type is MsgType.STATUS:
                status = StatusMessage.from_payload(payload)
                self.stop()
                return ClientResult(self.state, status, status.reason.name)
            if msg_type is not MsgType.PROGRAM:
                raise ProtocolError(f"expected PROGRAM, got {msg_type.name}")
            try:
                program = decode_program(payload)
            except DecodeError as exc:
                raise ProtocolError(f"bad PROGRAM: {exc}") from exc
            if program.node_id != self.node_id:
                self.stop()
                return ClientResult(self.state, None, "PROGRAM_NODE_MISMATCH", program)
            self._move(ClientState.SENT_REQUEST, ClientState.EXECUTING)

            try:
                report = execute_program(program, artifact_resolver, env_resolver)
            except MeasurementError as exc:
                log.warning("measurement failed: %s", exc)
                self.stop()
                return ClientResult(self.state, None, "MEASUREMENT_ERROR", program)
            sealed = encrypt_report(program, report)
            transport.send(encode_frame(MsgType.REPORT, sealed.to_bytes()))
            self._move(ClientState.EXECUTING, ClientState.AWAIT_STATUS)

            msg_type, payload = transport.recv_frame(timeout)
            if msg_type is not MsgType.STATUS:
                raise ProtocolError(f"expected STATUS, got {msg_type.name}")
            status = StatusMessage.from_payload(payload)
            if status.program_id != program.program_id:
                raise ProtocolError("STATUS refers to another program")
            if status.passed:
                self._move(ClientState.AWAIT_STATUS, ClientState.RUNNING)
                return ClientResult(self.state, status, "PASS", program)
            self.stop()
            return ClientResult(self.state, status, status.reason.name, program)
        except TimeoutError:
            self.stop()
            return ClientResult(self.state, None, "TIMEOUT")
        except (ProtocolError, ConnectionError, OSError) as exc:
            log.warning("check aborted: %s", exc)
            self.stop()
            return ClientResult(self.state, None, "PROTOCOL_ERROR")


def client_run_check(
    transport: Transport,
    node_id: str,
    artifact_resolver: Callable[[ArtifactId], bytes],
    env_resolver=None,
    *,
    timeout: float = DEFAULT_TIMEOUT,
    client_version: str = "1",
) -> ClientResult:
    """Run one integrity check; RUNNING only on a received PASS."""
    return ClientSession(node_id).run(
        transport, artifact_resolver, env_resolver, timeout=timeout, client_version=client_version
    )


def request_resource(
    transport: Transport, node_id: str, resource_id: str, *, timeout: float = DEFAULT_TIMEOUT
) -> ResourceResponse:
    req = ResourceRequest(node_id, resource_id)
    transport.send(encode_frame(MsgType.RESOURCE_REQ, req.to_payload()))
    msg_type, payload = transport.recv_frame(timeout)
    if msg_type is not MsgType.RESOURCE_RESP:
        raise ProtocolError(f"expected RESOURCE_RESP, got {msg_type.name}")
    return ResourceResponse.from_payload(payload)
