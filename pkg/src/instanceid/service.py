"""Wire surface of the registry: endpoint dispatch, TCP transport, config.

One route per verb, canonical JSON bodies, newline-delimited over the byte
stream. The in-process client and the TCP client run requests through the
same handler, so a simulation produces identical traces on either transport.
"""

from __future__ import annotations

import json
import os
import socket
import socketserver
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from . import errors
from .canonical import b64u, b64u_decode, canonical_json_line, load_canonical
from .disclosure import PartyClass
from .errors import MalformedRecord, ProtocolError, RegistryUnavailable
from .identity import Attribute, InstanceIdentifier, parse_identifier
from .lineage import event_from_jsonable, event_to_jsonable, LineageEvent
from .registry import (
    IncidentReport,
    IncidentScope,
    Registry,
    RetentionConfig,
    TimeWindow,
)
from .verifiability import PublicKey, SignedId

ENDPOINTS = (
    "issue",
    "report-incident",
    "query-incidents",
    "get-id",
    "get-lineage",
    "keys",
    "notify",
)

_ERROR_TYPES = {
    name: obj
    for name, obj in vars(errors).items()
    if isinstance(obj, type) and issubclass(obj, ProtocolError)
}


class RegistryServer:
    """Transport-agnostic endpoint dispatch over one registry."""

    def __init__(self, registry: Registry):
        self.registry = registry

    def handle(self, request: dict) -> dict:
        try:
            endpoint = request.get("endpoint")
            body = request.get("body", {})
            if endpoint not in ENDPOINTS:
                raise MalformedRecord(f"unknown endpoint {endpoint!r}")
            handler = getattr(self, "_do_" + endpoint.replace("-", "_"))
            return {"body": handler(body), "ok": True}
        except ProtocolError as exc:
            reply = {"detail": str(exc), "error": type(exc).__name__, "ok": False}
            if isinstance(exc, errors.NotFound):
                reply["detail"] = exc.detail
            return reply

    def _do_issue(self, body: dict) -> dict:
        from .identity import _attr_from_jsonable

        event = event_from_jsonable(body["event"])
        attributes = tuple(_attr_from_jsonable(a) for a in body.get("attributes", []))
        upstream = (
            parse_identifier(body["upstream"]) if body.get("upstream") else None
        )
        signed = self.registry.issue(
            event, attributes, nonce=body.get("nonce"), upstream=upstream
        )
        return {"signed": signed.to_jsonable()}

    def _do_report_incident(self, body: dict) -> dict:
        self.registry.report_incident(IncidentReport.from_jsonable(body["report"]))
        return {}

    def _do_query_incidents(self, body: dict) -> dict:
        scope = IncidentScope.from_jsonable(body["scope"])
        window = TimeWindow.from_jsonable(body.get("window"))
        reports = self.registry.query_incidents(scope, window)
        return {"reports": [report.to_jsonable() for report in reports]}

    def _do_get_id(self, body: dict) -> dict:
        identifier = parse_identifier(body["identifier"])
        if body.get("party"):
            view = self.registry.get_view(identifier, PartyClass(body["party"]))
            return {"view": view.to_jsonable()}
        return {"signed": self.registry.get_id(identifier).to_jsonable()}

    def _do_get_lineage(self, body: dict) -> dict:
        identifier = parse_identifier(body["identifier"])
        related = self.registry.get_lineage(identifier, body["direction"])
        return {
            "items": [
                {"external": external, "identifier": str(ident)}
                for ident, external in related
            ]
        }

    def _do_keys(self, body: dict) -> dict:
        op = body.get("op", "list")
        if op == "list":
            return self.registry.trust.to_jsonable()
        if op == "register":
            key = PublicKey(
                suite=body["key"]["suite"],
                key_id=body["key"]["key_id"],
                public=b64u_decode(body["key"]["public"]),
            )
            self.registry.register_foreign_key(body["author_id"], key)
            return {}
        if op == "revoke":
            self.registry.revoke_key(body["author_id"], body["key_id"], body.get("at"))
            return {}
        raise MalformedRecord(f"unknown keys op {op!r}")

    def _do_notify(self, body: dict) -> dict:
        self.registry.notify(body["payload"])
        return {}


class BaseClient:
    """Convenience verbs shared by both transports."""

    def request(self, endpoint: str, body: dict) -> dict:
        raise NotImplementedError

    def _roundtrip(self, endpoint: str, body: dict) -> dict:
        reply = self.request(endpoint, body)
        if reply.get("ok"):
            return reply["body"]
        error_cls = _ERROR_TYPES.get(reply.get("error", ""), ProtocolError)
        detail = reply.get("detail", "")
        if error_cls is errors.NotFound:
            raise errors.NotFound("not found", detail=detail)
        raise error_cls(detail)

    def issue(self, event: LineageEvent, attributes=(), nonce=None, upstream=None) -> SignedId:
        body: dict[str, Any] = {"event": event_to_jsonable(event)}
        if attributes:
            attrs = []
            for attr in attributes:
                item = attr.payload_jsonable()
                item["salt"] = b64u(attr.salt) if attr.salt is not None else None
                attrs.append(item)
            body["attributes"] = attrs
        if nonce is not None:
            body["nonce"] = nonce
        if upstream is not None:
            body["upstream"] = str(upstream)
        reply = self._roundtrip("issue", body)
        return SignedId.from_jsonable(reply["signed"])

    def report_incident(self, report: IncidentReport) -> None:
        self._roundtrip("report-incident", {"report": report.to_jsonable()})

    def query_incidents(self, scope: IncidentScope, window: TimeWindow = TimeWindow()):
        reply = self._roundtrip(
            "query-incidents",
            {"scope": scope.to_jsonable(), "window": window.to_jsonable()},
        )
        return [IncidentReport.from_jsonable(item) for item in reply["reports"]]

    def get_id(self, identifier: InstanceIdentifier) -> SignedId:
        reply = self._roundtrip("get-id", {"identifier": str(identifier)})
        return SignedId.from_jsonable(reply["signed"])

    def get_view(self, identifier: InstanceIdentifier, party: PartyClass):
        from .disclosure import DisclosedView

        reply = self._roundtrip(
            "get-id", {"identifier": str(identifier), "party": party.value}
        )
        return DisclosedView.from_jsonable(reply["view"])

    def get_lineage(self, identifier: InstanceIdentifier, direction: str):
        reply = self._roundtrip(
            "get-lineage", {"direction": direction, "identifier": str(identifier)}
        )
        return [
            (parse_identifier(item["identifier"]), item["external"])
            for item in reply["items"]
        ]

    def list_keys(self) -> dict:
        return self._roundtrip("keys", {"op": "list"})

    def notify(self, payload: dict) -> None:
        self._roundtrip("notify", {"payload": payload})


class InProcessClient(BaseClient):
    def __init__(self, server: RegistryServer):
        self._server = server

    def request(self, endpoint: str, body: dict) -> dict:
        # serialize through canonical bytes so both transports see identical shapes
        raw = canonical_json_line({"body": body, "endpoint": endpoint})
        reply = self._server.handle(load_canonical(raw))
        return load_canonical(canonical_json_line(reply))


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            line = self.rfile.readline()
            if not line:
                return
            if not line.strip():
                continue
            try:
                request = load_canonical(line)
            except MalformedRecord as exc:
                reply = {"detail": str(exc), "error": "MalformedRecord", "ok": False}
            else:
                reply = self.server.registry_server.handle(request)
            self.wfile.write(canonical_json_line(reply))
            self.wfile.flush()


class TcpRegistryServer(socketserver.ThreadingTCPServer):
    """Newline-delimited canonical JSON over TCP; one request per line."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, registry_server: RegistryServer, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _TcpHandler)
        self.registry_server = registry_server
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def start(self) -> "TcpRegistryServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


class TcpClient(BaseClient):
    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host = host
        self.port = port
        self.timeout = timeout

    def request(self, endpoint: str, body: dict) -> dict:
        payload = canonical_json_line({"body": body, "endpoint": endpoint})
        try:
            with socket.create_connection((self.host, self.port), self.timeout) as conn:
                conn.sendall(payload)
                reader = conn.makefile("rb")
                line = reader.readline()
            if not line:
                raise RegistryUnavailable(f"{self.host}:{self.port} closed the stream")
            return load_canonical(line)
        except OSError as exc:
            raise RegistryUnavailable(f"{self.host}:{self.port}: {exc}") from exc


class UnavailableClient(BaseClient):
    """Stands in for a registry that cannot be reached (fail-mode testing)."""

    def request(self, endpoint: str, body: dict) -> dict:
        raise RegistryUnavailable("registry configured as unavailable")


@dataclass
class ServiceConfig:
    """Registry service configuration; env vars override file values."""

    author_id: str
    host: str = "127.0.0.1"
    port: int = 7710
    retention_documents: int = RetentionConfig.documents
    retention_incidents: int = RetentionConfig.incidents
    key_file: Optional[str] = None
    log_file: Optional[str] = None

    ENV_PREFIX = "INSTANCEID_"

    @classmethod
    def from_file(cls, path: str | Path, env: Optional[dict] = None) -> "ServiceConfig":
        env = os.environ if env is None else env
        body = load_canonical(Path(path).read_bytes())
        listen = env.get(cls.ENV_PREFIX + "LISTEN", body.get("listen", "127.0.0.1:7710"))
        host, _, port = listen.rpartition(":")
        retention = body.get("retention", {})
        return cls(
            author_id=env.get(cls.ENV_PREFIX + "AUTHOR_ID", body["author_id"]),
            host=host or "127.0.0.1",
            port=int(port),
            retention_documents=int(
                env.get(
                    cls.ENV_PREFIX + "RETENTION_DOCUMENTS",
                    retention.get("documents", RetentionConfig.documents),
                )
            ),
            retention_incidents=int(
                env.get(
                    cls.ENV_PREFIX + "RETENTION_INCIDENTS",
                    retention.get("incidents", RetentionConfig.incidents),
                )
            ),
            key_file=env.get(cls.ENV_PREFIX + "KEY_FILE", body.get("key_file")),
            log_file=env.get(cls.ENV_PREFIX + "LOG_FILE", body.get("log_file")),
        )

    def retention(self) -> RetentionConfig:
        return RetentionConfig(self.retention_documents, self.retention_incidents)


def load_keypair_file(path: str | Path):
    """Key file: canonical JSON {author_id, key_id, suite, private(b64u)}."""
    from .verifiability import KeyPair

    body = load_canonical(Path(path).read_bytes())
    try:
        return KeyPair.generate(
            body["author_id"], body["key_id"], seed=b64u_decode(body["private"])
        )
    except KeyError as exc:
        raise MalformedRecord(f"key file missing field {exc}") from exc


def save_keypair_file(path: str | Path, keypair) -> None:
    from cryptography.hazmat.primitives.serialization import (
        Encoding,
        NoEncryption,
        PrivateFormat,
    )

    raw = keypair.private.private_bytes(
        Encoding.Raw, PrivateFormat.Raw, NoEncryption()
    )
    Path(path).write_bytes(
        canonical_json_line(
            {
                "author_id": keypair.author_id,
                "key_id": keypair.key_id,
                "private": b64u(raw),
                "suite": keypair.suite,
            }
        )
    )
