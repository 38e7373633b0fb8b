"""Server-side golden copies, challenge issuance and the node registry.

The registry is event sourced: every status change is appended to a JSON
lines audit log before the in-memory record changes, and a restarted
server rebuilds the registry by folding that log. Issued challenges live
in memory only.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .digest import md5_reference
from .errors import ManifestError, StoreError
from .program import ArtifactId, MeasurementProgram

log = logging.getLogger(__name__)

DEFAULT_PASS_FRESHNESS = 3600


class Status(str, enum.Enum):
    UNKNOWN = "UNKNOWN"
    PASS = "PASS"
    FAIL = "FAIL"


class ChallengeState(str, enum.Enum):
    ISSUED = "ISSUED"
    CONSUMED = "CONSUMED"
    EXPIRED = "EXPIRED"


class ConsumeOutcome(str, enum.Enum):
    OK = "OK"
    UNKNOWN_CHALLENGE = "UNKNOWN_CHALLENGE"
    REPLAY = "REPLAY"
    EXPIRED = "EXPIRED"
    NODE_MISMATCH = "NODE_MISMATCH"


@dataclass(frozen=True)
class GoldenArtifact:
    artifact_id: ArtifactId
    data: bytes = field(repr=False)
    size: int = -1
    reference_digest: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "data", bytes(self.data))
        object.__setattr__(self, "size", len(self.data))
        object.__setattr__(self, "reference_digest", md5_reference(self.data))


@dataclass
class IssuedProgram:
    program: MeasurementProgram
    state: ChallengeState = ChallengeState.ISSUED


@dataclass(frozen=True)
class HistoryEntry:
    timestamp: int
    program_id: Optional[bytes]
    status: Status
    reason: str


@dataclass(frozen=True)
class NodeRecord:
    node_id: str
    status: Status = Status.UNKNOWN
    last_program_id: Optional[bytes] = None
    last_check_at: Optional[int] = None
    history: tuple[HistoryEntry, ...] = ()

    def with_event(self, entry: HistoryEntry) -> "NodeRecord":
        if self.history and entry.timestamp < self.history[-1].timestamp:
            raise StoreError(
                f"history for {self.node_id} would go backwards: "
                f"{entry.timestamp} < {self.history[-1].timestamp}"
            )
        return replace(
            self,
            status=entry.status,
            last_program_id=entry.program_id,
            last_check_at=entry.timestamp,
            history=self.history + (entry,),
        )


def load_manifest(directory, manifest_file) -> list[GoldenArtifact]:
    """Load golden artifacts listed in a JSON manifest.

    The manifest is a JSON array of ``{"id", "version", "path"}`` objects;
    paths are relative to ``directory``.
    """
    directory = Path(directory)
    manifest_file = Path(manifest_file)
    try:
        entries = json.loads(manifest_file.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {manifest_file}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {manifest_file} is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise ManifestError(f"manifest {manifest_file} must be a JSON array")

    artifacts: list[GoldenArtifact] = []
    seen: set[ArtifactId] = set()
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or not all(k in entry for k in ("id", "version", "path")):
            raise ManifestError(f"manifest entry {i} needs id, version and path")
        try:
            aid = ArtifactId(str(entry["id"]), str(entry["version"]))
        except ValueError as exc:
            raise ManifestError(f"manifest entry {i}: {exc}") from exc
        if aid in seen:
            raise ManifestError(f"duplicate manifest entry {aid}")
        seen.add(aid)
        path = directory / entry["path"]
        try:
            data = path.read_bytes()
        except FileNotFoundError as exc:
            raise ManifestError(f"manifest entry {aid}: missing file {path}") from exc
        except OSError as exc:
            raise ManifestError(f"manifest entry {aid}: unreadable file {path}: {exc}") from exc
        artifacts.append(GoldenArtifact(aid, data))
    return artifacts


def build_manifest(directory) -> list[dict]:
    """One entry per regular file under ``directory``, sorted by id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ManifestError(f"not a readable directory: {directory}")
    entries = []
    for path in directory.rglob("*"):
        if path.is_file() and not path.is_symlink():
            rel = path.relative_to(directory).as_posix()
            entries.append({"id": rel, "version": "1", "path": rel})
    entries.sort(key=lambda e: e["id"])
    return entries


def _event_line(node_id: str, entry: HistoryEntry) -> str:
    return json.dumps(
        {
            "timestamp": entry.timestamp,
            "node_id": node_id,
            "program_id": entry.program_id.hex() if entry.program_id else "",
            "status": entry.status.value,
            "reason": entry.reason,
        },
        sort_keys=True,
    )


def fold_events(lines: Iterable[str]) -> dict[str, NodeRecord]:
    """Rebuild the registry from audit log lines."""
    registry: dict[str, NodeRecord] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            ev = json.loads(line)
            entry = HistoryEntry(
                timestamp=int(ev["timestamp"]),
                program_id=bytes.fromhex(ev["program_id"]) if ev["program_id"] else None,
                status=Status(ev["status"]),
                reason=str(ev["reason"]),
            )
            node_id = str(ev["node_id"])
        except (ValueError, KeyError, TypeError) as exc:
            raise StoreError(f"corrupt audit line {lineno}: {exc}") from exc
        record = registry.get(node_id) or NodeRecord(node_id)
        registry[node_id] = record.with_event(entry)
    return registry


def read_audit_log(path) -> dict[str, NodeRecord]:
    path = Path(path)
    if not path.exists():
        return {}
    with path.open("r", encoding="utf-8") as fh:
        return fold_events(fh)


class GoldenStore:
    """Golden artifacts plus the mutable registry and issuance table.

    Registry and issuance mutations are each serialized by their own lock,
    so one store can back many concurrent server sessions.
    """

    def __init__(
        self,
        artifacts: Iterable[GoldenArtifact],
        audit_log=None,
        *,
        pass_freshness: int = DEFAULT_PASS_FRESHNESS,
        resources: Optional[dict[str, bytes]] = None,
        durable: bool = True,
    ):
        if pass_freshness <= 0:
            raise ValueError("pass_freshness must be positive")
        self.artifacts: tuple[GoldenArtifact, ...] = tuple(artifacts)
        ids = [a.artifact_id for a in self.artifacts]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate artifact ids in golden store")
        self._by_id = {a.artifact_id: a for a in self.artifacts}
        # Golden artifacts double as the gated resources unless told otherwise.
        if resources is None:
            resources = {a.artifact_id.id: a.data for a in self.artifacts}
        self.resources = dict(resources)
        self.pass_freshness = pass_freshness
        self.audit_log = Path(audit_log) if audit_log is not None else None
        self.durable = durable

        self._issued: dict[bytes, IssuedProgram] = {}
        self._issue_lock = threading.Lock()
        self._registry_lock = threading.Lock()
        self._registry: dict[str, NodeRecord] = (
            read_audit_log(self.audit_log) if self.audit_log else {}
        )

    @classmethod
    def from_manifest(cls, directory, manifest_file, audit_log=None, **kwargs) -> "GoldenStore":
        return cls(load_manifest(directory, manifest_file), audit_log, **kwargs)

    # golden copies

    @property
    def targets(self) -> tuple[ArtifactId, ...]:
        return tuple(a.artifact_id for a in self.artifacts)

    def golden_bytes(self, artifact_id: ArtifactId) -> bytes:
        return self._by_id[artifact_id].data

    # issuance

    def register_issued(self, p: MeasurementProgram) -> None:
        with self._issue_lock:
            if p.program_id in self._issued:
                raise StoreError(f"program id {p.program_id.hex()} already issued")
            self._issued[p.program_id] = IssuedProgram(p)

    def issued(self, program_id: bytes) -> Optional[IssuedProgram]:
        with self._issue_lock:
            entry = self._issued.get(program_id)
            return None if entry is None else replace(entry)

    def consume(self, program_id: bytes, node_id: str, now: int) -> ConsumeOutcome:
        with self._issue_lock:
            entry = self._issued.get(program_id)
            if entry is None:
                return ConsumeOutcome.UNKNOWN_CHALLENGE
            if entry.state is ChallengeState.CONSUMED:
                return ConsumeOutcome.REPLAY
            if entry.state is ChallengeState.EXPIRED:
                return ConsumeOutcome.EXPIRED
            if now > entry.program.expires_at:
                entry.state = ChallengeState.EXPIRED
                return ConsumeOutcome.EXPIRED
            if entry.program.node_id != node_id:
                return ConsumeOutcome.NODE_MISMATCH
            entry.state = ChallengeState.CONSUMED
            return ConsumeOutcome.OK

    # registry

    def record_status(
        self,
        node_id: str,
        program_id: Optional[bytes],
        status: Status,
        reason: str,
        now: int,
    ) -> NodeRecord:
        status = Status(status)
        entry = HistoryEntry(int(now), program_id, status, reason)
        with self._registry_lock:
            current = self._registry.get(node_id) or NodeRecord(node_id)
            updated = current.with_event(entry)
            if self.audit_log is not None:
                self._append(_event_line(node_id, entry))
            self._registry[node_id] = updated
        log.info("node %s -> %s (%s)", node_id, status.value, reason)
        return updated

    def _append(self, line: str) -> None:
        try:
            with self.audit_log.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                if self.durable:
                    os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreError(f"audit log write failed: {exc}") from exc

    def get_status(self, node_id: str) -> NodeRecord:
        with self._registry_lock:
            return self._registry.get(node_id) or NodeRecord(node_id)

    def gate_status(self, node_id: str, now: int) -> Status:
        """Status used for resource gating; a stale PASS counts as UNKNOWN."""
        record = self.get_status(node_id)
        if record.status is Status.PASS:
            if record.last_check_at is None or now - record.last_check_at > self.pass_freshness:
                return Status.UNKNOWN
        return record.status

    def registry(self) -> dict[str, NodeRecord]:
        with self._registry_lock:
            return dict(self._registry)
