import random

import pytest

from jitcheck.harness import SimClock
from jitcheck.program import ArtifactId
from jitcheck.protocol import CheckServer
from jitcheck.store import GoldenArtifact, GoldenStore


class CountingStream:
    """Byte source yielding 0, 1, 2, ... (mod 256); lets tests predict every draw."""

    def __init__(self, start=0):
        self.pos = start

    def randbytes(self, n):
        out = bytes((self.pos + i) % 256 for i in range(n))
        self.pos += n
        return out


def make_artifacts(seed=0, sizes=(("sp2pen.jar", 300), ("lib/core.jar", 120))):
    rng = random.Random(seed)
    return [GoldenArtifact(ArtifactId(name), rng.randbytes(size)) for name, size in sizes]


@pytest.fixture
def artifacts():
    return make_artifacts()


@pytest.fixture
def store(artifacts):
    return GoldenStore(artifacts)


@pytest.fixture
def clock():
    return SimClock()


@pytest.fixture
def server(store, clock):
    return CheckServer(store, random.Random(1234), clock)


_ACCEPTANCE: list[tuple[int, str, bool]] = []


def record_criterion(number, text, ok):
    _ACCEPTANCE.append((number, text, ok))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, text, ok in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {text}")
