"""Command line entry points: manifest, serve, node, check, simulate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

from .errors import CheckerError
from .harness import demo_store, parse_kinds, run_campaign
from .net import CheckTCPServer, SocketTransport, parse_address
from .program import ArtifactId, local_env_resolver
from .protocol import DEFAULT_TIMEOUT, CheckServer, client_run_check, request_resource
from .store import GoldenStore, build_manifest
from .wire import DEFAULT_MAX_FRAME, DEFAULT_PORT

log = logging.getLogger("jitcheck")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


@dataclass(frozen=True)
class ServerConfig:
    listen_address: str = f"0.0.0.0:{DEFAULT_PORT}"
    artifact_dir: str = "."
    manifest_path: str = "manifest.json"
    audit_log_path: str = "audit.jsonl"
    program_ttl_seconds: int = 60
    pass_freshness_seconds: int = 3600
    max_frame_bytes: int = DEFAULT_MAX_FRAME

    def validate(self) -> None:
        if self.program_ttl_seconds <= 0:
            raise CheckerError("program_ttl_seconds must be positive")
        if self.pass_freshness_seconds <= 0:
            raise CheckerError("pass_freshness_seconds must be positive")
        if self.max_frame_bytes <= 0:
            raise CheckerError("max_frame_bytes must be positive")
        if not Path(self.artifact_dir).is_dir():
            raise CheckerError(f"artifact_dir does not exist: {self.artifact_dir}")
        if not Path(self.manifest_path).is_file():
            raise CheckerError(f"manifest_path does not exist: {self.manifest_path}")
        if not Path(self.audit_log_path).parent.is_dir():
            raise CheckerError(f"audit log directory does not exist: {self.audit_log_path}")


_PATH_KEYS = ("artifact_dir", "manifest_path", "audit_log_path")


def load_config(path, **overrides) -> ServerConfig:
    """Read a JSON config; relative paths resolve against the file's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckerError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise CheckerError("config must be a JSON object")
    known = {f.name for f in fields(ServerConfig)}
    unknown = set(raw) - known
    if unknown:
        raise CheckerError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in _PATH_KEYS:
        if key in raw:
            raw[key] = str(path.parent / raw[key])
    cfg = ServerConfig(**raw)
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def build_server(cfg: ServerConfig) -> CheckTCPServer:
    store = GoldenStore.from_manifest(
        cfg.artifact_dir,
        cfg.manifest_path,
        cfg.audit_log_path,
        pass_freshness=cfg.pass_freshness_seconds,
    )
    if not store.artifacts:
        raise CheckerError("manifest lists no artifacts")
    check_server = CheckServer(store, ttl=cfg.program_ttl_seconds, max_frame=cfg.max_frame_bytes)
    return CheckTCPServer(parse_address(cfg.listen_address), check_server)


def dir_resolver(root):
    root = Path(root).resolve()

    def resolve(aid: ArtifactId) -> bytes:
        path = (root / aid.id).resolve()
        if root not in path.parents:
            raise PermissionError(f"artifact {aid.id} escapes {root}")
        return path.read_bytes()

    return resolve


def cmd_manifest(args) -> int:
    try:
        entries = build_manifest(args.dir)
    except CheckerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    text = json.dumps(entries, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = load_config(
        args.config,
        listen_address=args.listen,
        program_ttl_seconds=args.ttl,
        pass_freshness_seconds=args.freshness,
    )
    server = build_server(cfg)
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_check(args) -> int:
    with SocketTransport.connect(args.server, timeout=args.timeout) as transport:
        result = client_run_check(
            transport, args.id, dir_resolver(args.dir), local_env_resolver, timeout=args.timeout
        )
    if result.running:
        print("PASS")
        return EXIT_OK
    print(f"FAIL {result.reason}")
    return EXIT_FAIL


def cmd_node(args) -> int:
    with SocketTransport.connect(args.server, timeout=args.timeout) as transport:
        result = client_run_check(
            transport, args.id, dir_resolver(args.dir), local_env_resolver, timeout=args.timeout
        )
        if not result.running:
            print(f"FAIL {result.reason}")
            return EXIT_FAIL
        print("PASS")
        out = Path(args.out) if args.out else None
        for rid in args.fetch:
            resp = request_resource(transport, args.id, rid, timeout=args.timeout)
            if not resp.granted:
                print(f"DENIED {rid}")
                return EXIT_FAIL
            print(f"GRANTED {rid} ({len(resp.payload)} bytes)")
            if out is not None:
                dest = out / rid
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_bytes(resp.payload)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.dir or args.manifest:
        if not (args.dir and args.manifest):
            raise CheckerError("--dir and --manifest go together")
        store = GoldenStore.from_manifest(args.dir, args.manifest, args.audit_log)
    else:
        store = demo_store(audit_log=args.audit_log)
    counts = {kind: args.trials for kind in parse_kinds(args.scenario)}
    result = run_campaign(store, counts, args.seed)
    if args.json:
        print(result.to_json())
    else:
        print(result.format_table())
    return EXIT_OK if result.ok else EXIT_FAIL


def _node_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--server", required=True, help="host:port of the check server")
    p.add_argument("--id", required=True, help="node id")
    p.add_argument("--dir", required=True, help="local artifact directory")
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jitcheck", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("manifest", help="write a manifest for a directory")
    p.add_argument("dir")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_manifest)

    p = sub.add_parser("serve", help="run the check server")
    p.add_argument("--config", required=True)
    p.add_argument("--listen")
    p.add_argument("--ttl", type=int)
    p.add_argument("--freshness", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("node", help="check in, then fetch gated resources")
    _node_args(p)
    p.add_argument("--fetch", action="append", default=[], metavar="RESOURCE")
    p.add_argument("--out", help="directory for fetched resources")
    p.set_defaults(func=cmd_node)

    p = sub.add_parser("check", help="one-shot integrity check")
    _node_args(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("simulate", help="run an adversary campaign")
    p.add_argument("--scenario", default="all")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.add_argument("--dir")
    p.add_argument("--manifest")
    p.add_argument("--audit-log")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "trials", 0) < 0:
        parser.error("--trials must be non-negative")
    try:
        return args.func(args)
    except (CheckerError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
