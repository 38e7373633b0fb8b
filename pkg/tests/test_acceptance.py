"""Exit criteria, one test per criterion, each at its stated scale.

A summary line per criterion is printed at the end of the pytest run.
"""

import contextlib
import hashlib
import random
from dataclasses import replace

import pytest

from jitcheck.crypto import decrypt_report, encrypt_report
from jitcheck.digest import IDENTITY_PARAMS, parameterized_digest
from jitcheck.errors import AuthenticationError, CheckerError, ProtocolError
from jitcheck.harness import Kind, SimClock, flip_bit, run_scenario
from jitcheck.program import (
    ArtifactId,
    MeasurementReport,
    generate_program,
    local_env_resolver,
)
from jitcheck.protocol import (
    CheckServer,
    ClientState,
    LoopbackTransport,
    ServerState,
    client_run_check,
    request_resource,
)
from jitcheck.store import ConsumeOutcome, GoldenArtifact, GoldenStore, Status, read_audit_log
from jitcheck.wire import (
    AutocheckRequest,
    MsgType,
    Reason,
    ResourceRequest,
    StatusMessage,
    encode_frame,
)
from conftest import make_artifacts, record_criterion
from md5_oracle import md5_oracle
from test_digest import RFC1321_VECTORS, random_params


@contextlib.contextmanager
def criterion(number, text):
    ok = False
    try:
        yield
        ok = True
    finally:
        record_criterion(number, text, ok)


class CountingStore(GoldenStore):
    """Tallies successful consumes per program id (i.e. VERIFIED transitions)."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.verified = {}

    def consume(self, program_id, node_id, now):
        outcome = super().consume(program_id, node_id, now)
        if outcome is ConsumeOutcome.OK:
            self.verified[program_id] = self.verified.get(program_id, 0) + 1
        return outcome


def test_01_digest_conformance():
    with criterion(1, "digest conformance: 7 RFC 1321 vectors + 1000 random messages vs oracle"):
        for message, expected in RFC1321_VECTORS:
            assert parameterized_digest(IDENTITY_PARAMS, message).hex() == expected
        rng = random.Random(101)
        mismatches = 0
        for i in range(1000):
            msg = rng.randbytes(rng.choice([0, 55, 56, 63, 64, 65, rng.randrange(0, 1024)]))
            got = parameterized_digest(IDENTITY_PARAMS, msg)
            if i % 2:
                mismatches += got != md5_oracle(msg)
            else:
                mismatches += got != hashlib.md5(msg).digest()
        assert mismatches == 0


def test_02_out_mask_linearity():
    with criterion(2, "out-mask linearity over 1000 sampled triples"):
        rng = random.Random(202)
        violations = 0
        for _ in range(1000):
            params = random_params(rng)
            mask = rng.randbytes(16)
            msg = rng.randbytes(rng.randrange(0, 300))
            base = parameterized_digest(params.with_out_mask(bytes(16)), msg)
            got = parameterized_digest(params.with_out_mask(mask), msg)
            violations += got != bytes(a ^ b for a, b in zip(base, mask))
        assert violations == 0


def test_03_honest_end_to_end():
    with criterion(3, "100 honest loopback sessions: PASS, GRANTED, RUNNING"):
        store = GoldenStore(make_artifacts(3))
        passes = granted = running = 0
        for seed in range(100):
            server = CheckServer(store, random.Random(seed), SimClock())
            t = LoopbackTransport(server.new_session())
            node = f"honest-{seed}"
            result = client_run_check(t, node, store.golden_bytes, local_env_resolver)
            running += result.state is ClientState.RUNNING
            passes += store.get_status(node).status is Status.PASS
            granted += request_resource(t, node, "sp2pen.jar").granted
        assert (passes, granted, running) == (100, 100, 100)


def _tamper_trials(art, bits, seed):
    store = GoldenStore([art])
    server = CheckServer(store, random.Random(seed), SimClock())
    reasons = []
    for i, bit in enumerate(bits):
        tampered = flip_bit(art.data, bit)
        t = LoopbackTransport(server.new_session())
        result = client_run_check(t, f"tamper-{i}", lambda aid: tampered)
        reasons.append(result.status.reason if result.status else None)
        assert store.get_status(f"tamper-{i}").status is Status.FAIL
    return reasons


def test_04_tamper_soundness():
    with criterion(4, "tamper soundness: 512 exhaustive flips (64 B) + 200 sampled (1 MiB)"):
        rng = random.Random(404)
        small = GoldenArtifact(ArtifactId("sp2pen.jar"), rng.randbytes(64))
        reasons = _tamper_trials(small, range(512), 1)
        big = GoldenArtifact(ArtifactId("sp2pen.jar"), rng.randbytes(1 << 20))
        sampled = rng.sample(range(8 << 20), 200)
        reasons += _tamper_trials(big, sampled, 2)
        assert len(reasons) == 712
        assert all(r is Reason.DIGEST_MISMATCH for r in reasons)


def test_05_replay():
    with criterion(5, "100 replayed reports rejected with REPLAY; single VERIFIED per program"):
        store = CountingStore(make_artifacts(5))
        clock = SimClock()
        rng = random.Random(505)
        rejected = 0
        for i in range(100):
            server = CheckServer(store, random.Random(rng.getrandbits(64)), clock)
            node = f"victim-{i}"
            s1 = server.new_session()
            t1 = LoopbackTransport(s1)
            captured = []
            original_send = t1.send
            t1.send = lambda data: (captured.append(data), original_send(data))[1]
            assert client_run_check(t1, node, store.golden_bytes).running
            report_frame = next(f for f in captured if f[4] == MsgType.REPORT)
            clock.advance()
            s2 = server.new_session()
            t2 = LoopbackTransport(s2)
            t2.send(encode_frame(MsgType.AUTOCHECK_REQ, AutocheckRequest(node).to_payload()))
            t2.recv_frame()
            t2.send(report_frame)
            _, payload = t2.recv_frame()
            status = StatusMessage.from_payload(payload)
            rejected += (not status.passed) and status.reason is Reason.REPLAY
        assert rejected == 100
        assert len(store.verified) == 100
        assert max(store.verified.values()) == 1


def test_06_precompute_attacker():
    with criterion(6, "precompute (standard MD5) attacker fails 200/200"):
        store = GoldenStore(make_artifacts(6))
        clock = SimClock()
        rng = random.Random(606)
        results = [
            run_scenario(Kind.PRECOMPUTE_STANDARD_MD5, store, rng.getrandbits(64), node_id=f"pc-{i}", clock=clock)
            for i in range(200)
        ]
        assert all(r.status is Status.FAIL and r.reason == "DIGEST_MISMATCH" for r in results)
        assert not any(r.resource_granted for r in results)


def test_07_bypass_and_strip():
    with criterion(7, "100 resource requests without a fresh PASS all DENIED"):
        store = GoldenStore(make_artifacts(7), pass_freshness=100)
        clock = SimClock()
        server = CheckServer(store, random.Random(707), clock)
        now = clock()
        store.record_status("stale", None, Status.PASS, "OK", now - 101)
        store.record_status("failed", None, Status.FAIL, "DIGEST_MISMATCH", now)
        denied = 0
        for i in range(100):
            node = ("stale", "failed", f"never-{i}", f"strip-{i}")[i % 4]
            t = LoopbackTransport(server.new_session())
            resource = ("sp2pen.jar", "lib/core.jar")[i % 2]
            denied += not request_resource(t, node, resource).granted
        rng = random.Random(77)
        for i, kind in enumerate((Kind.BYPASS, Kind.STRIP_CHECK) * 10):
            r = run_scenario(kind, store, rng.getrandbits(32), node_id=f"s-{i}", clock=clock)
            assert r.detected
        assert denied == 100


def test_08_crypto():
    with criterion(8, "1000 report round trips; exhaustive single-bit corruption rejected"):
        rng = random.Random(808)
        for i in range(1000):
            targets = [ArtifactId(f"a{j}.jar") for j in range(rng.randint(1, 4))]
            p = generate_program(f"n{i}", targets, now=1_700_000_000, ttl=60, rng=rng)
            r = MeasurementReport(
                p.program_id,
                p.node_id,
                tuple((t, rng.randbytes(16)) for t in targets),
                tuple((f"k{j}", "v" * rng.randrange(20)) for j in range(rng.randrange(3))),
            )
            assert decrypt_report(p, encrypt_report(p, r)) == r

        p = generate_program("tiny", [ArtifactId("x")], now=0, ttl=1, rng=random.Random(1))
        e = encrypt_report(p, MeasurementReport(p.program_id, "tiny", ((ArtifactId("x"), bytes(16)),), ()))
        rejected = total = 0
        for field in ("ciphertext", "mac"):
            data = getattr(e, field)
            for bit in range(len(data) * 8):
                total += 1
                try:
                    decrypt_report(p, replace(e, **{field: flip_bit(data, bit)}))
                except AuthenticationError:
                    rejected += 1
        assert rejected == total == (len(e.ciphertext) + 16) * 8


def test_09_uniqueness():
    with criterion(9, "10000 programs: distinct ids and seeds, no identity params"):
        rng = random.Random(909)
        progs = [
            generate_program("n", [ArtifactId("sp2pen.jar")], now=0, ttl=60, rng=rng)
            for _ in range(10_000)
        ]
        assert len({p.program_id for p in progs}) == 10_000
        assert len({p.seed for p in progs}) == 10_000
        assert not any(p.params == IDENTITY_PARAMS for p in progs)


def test_10_persistence(tmp_path):
    with criterion(10, "registry rebuilt from the audit log equals the live registry"):
        log = tmp_path / "audit.jsonl"
        store = GoldenStore(make_artifacts(10), log)
        clock = SimClock()
        rng = random.Random(1010)
        nodes = [f"node-{i}" for i in range(6)]
        events = 0
        i = 0
        while events < 50:
            i += 1
            server = CheckServer(store, random.Random(rng.getrandbits(64)), clock)
            node = rng.choice(nodes)
            t = LoopbackTransport(server.new_session())
            roll = rng.random()
            if roll < 0.5:
                client_run_check(t, node, store.golden_bytes)
            elif roll < 0.8:
                bad = flip_bit(store.artifacts[0].data, rng.randrange(8 * store.artifacts[0].size))
                client_run_check(t, node, lambda a: bad if a == store.targets[0] else store.golden_bytes(a))
            else:
                clock.advance(61)
                run_scenario(Kind.REPLAY, store, i, node_id=node, clock=clock)
            clock.advance(rng.randrange(0, 5))
            events = sum(len(r.history) for r in store.registry().values())
        assert log.read_text().count("\n") == events
        rebuilt = read_audit_log(log)
        assert rebuilt == store.registry()
        assert GoldenStore(make_artifacts(10), log).registry() == store.registry()


def _fuzz_inputs(rng, count):
    valid = [
        encode_frame(MsgType.AUTOCHECK_REQ, AutocheckRequest("node-x").to_payload()),
        encode_frame(MsgType.REPORT, rng.randbytes(16) + (4).to_bytes(4, "big") + rng.randbytes(20)),
        encode_frame(MsgType.RESOURCE_REQ, ResourceRequest("node-x", "sp2pen.jar").to_payload()),
        encode_frame(MsgType.STATUS, bytes(18)),
        encode_frame(MsgType.PROGRAM, rng.randbytes(50)),
        encode_frame(MsgType.RESOURCE_RESP, b"\x01" + bytes(4)),
    ]
    for i in range(count):
        mode = i % 4
        if mode == 0:
            yield rng.randbytes(rng.randrange(0, 80))
        elif mode == 1:
            frame = rng.choice(valid)
            yield frame[: rng.randrange(0, len(frame))]
        elif mode == 2:
            frame = bytearray(rng.choice(valid))
            frame[4] = rng.choice([t for t in range(256) if t != frame[4]])
            yield bytes(frame)
        else:
            payload = rng.randbytes(rng.randrange(0, 60))
            yield encode_frame(rng.randrange(1, 7), payload)


def test_11_wire_robustness():
    with criterion(11, "10000 fuzzed frames: no crash, no transition to ISSUED/VERIFIED"):
        store = GoldenStore(make_artifacts(11))
        server = CheckServer(store, random.Random(1111), SimClock())
        rng = random.Random(1112)
        errors = 0
        n = 0
        for data in _fuzz_inputs(rng, 10_000):
            n += 1
            session = server.new_session()
            try:
                session.receive(data)
                session.end_of_input()
            except ProtocolError:
                errors += 1
            except CheckerError as exc:  # pragma: no cover
                pytest.fail(f"unexpected {type(exc).__name__}: {exc}")
            assert session.state is ServerState.AWAIT_REQUEST
        assert n == 10_000
        assert errors > 0
        assert not store.registry()
