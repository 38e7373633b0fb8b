"""TCP binding for the check protocol."""

from __future__ import annotations

import logging
import socket
import socketserver
from typing import Optional

from .errors import CheckerError
from .protocol import CheckServer
from .wire import DEFAULT_MAX_FRAME, DEFAULT_PORT, FrameDecoder, MsgType

log = logging.getLogger(__name__)

IDLE_TIMEOUT = 300.0


def parse_address(addr: str, default_port: int = DEFAULT_PORT) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        return addr, default_port
    return host or "0.0.0.0", int(port)


class SocketTransport:
    def __init__(self, sock: socket.socket, max_frame: int = DEFAULT_MAX_FRAME):
        self.sock = sock
        self._decoder = FrameDecoder(max_frame)
        self._frames: list[tuple[MsgType, bytes]] = []

    @classmethod
    def connect(cls, addr: str, timeout: float = 10.0, **kwargs) -> "SocketTransport":
        return cls(socket.create_connection(parse_address(addr), timeout=timeout), **kwargs)

    def send(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv_frame(self, timeout: Optional[float] = None) -> tuple[MsgType, bytes]:
        self.sock.settimeout(timeout)
        while not self._frames:
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                raise TimeoutError("timed out waiting for server") from None
            if not chunk:
                self._decoder.eof()
                raise ConnectionError("server closed the connection")
            self._frames.extend(self._decoder.feed(chunk))
        return self._frames.pop(0)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _SessionHandler(socketserver.BaseRequestHandler):
    server: "CheckTCPServer"

    def handle(self):
        session = self.server.check_server.new_session()
        sock = self.request
        sock.settimeout(IDLE_TIMEOUT)
        peer = self.client_address
        try:
            while not session.closed:
                chunk = sock.recv(65536)
                if not chunk:
                    session.end_of_input()
                    break
                reply = session.receive(chunk)
                if reply:
                    sock.sendall(reply)
        except CheckerError as exc:
            log.warning("session from %s aborted: %s", peer, exc)
        except OSError as exc:
            log.info("connection from %s dropped: %s", peer, exc)


class CheckTCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], check_server: CheckServer):
        self.check_server = check_server
        super().__init__(address, _SessionHandler)
