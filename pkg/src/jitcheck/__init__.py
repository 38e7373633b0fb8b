"""Just-in-time integrity checking for peer-to-peer nodes.

A server issues each node a freshly generated measurement program (random
MD5 variant, salts and report key), the node runs it over its artifacts,
and the server re-runs it over golden copies. Nodes that do not pass are
refused the resources they need to keep working.
"""

from .crypto import EncryptedReport, decrypt_report, derive_key, encrypt_report
from .digest import IDENTITY_PARAMS, DigestParams, md5_reference, parameterized_digest
from .program import (
    ArtifactId,
    MeasurementProgram,
    MeasurementReport,
    decode_program,
    encode_program,
    execute_program,
    generate_program,
)
from .protocol import CheckServer, LoopbackTransport, client_run_check, request_resource
from .store import GoldenArtifact, GoldenStore, NodeRecord, Status, load_manifest

__version__ = "0.1.0"

__all__ = [
    "ArtifactId",
    "CheckServer",
    "DigestParams",
    "EncryptedReport",
    "GoldenArtifact",
    "GoldenStore",
    "IDENTITY_PARAMS",
    "LoopbackTransport",
    "MeasurementProgram",
    "MeasurementReport",
    "NodeRecord",
    "Status",
    "client_run_check",
    "decode_program",
    "decrypt_report",
    "derive_key",
    "encode_program",
    "encrypt_report",
    "execute_program",
    "generate_program",
    "load_manifest",
    "md5_reference",
    "parameterized_digest",
    "request_resource",
]
