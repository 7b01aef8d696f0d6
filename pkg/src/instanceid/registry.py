"""Deployer registry: signed ID issuance, lineage serving, incident database.

Every state mutation appends one canonical record to an append-only log;
replaying the log reproduces a byte-identical registry state. Reads operate
on in-memory state and never observe a partially applied mutation (all
writes serialize through one lock).
"""

from __future__ import annotations

import enum
import random
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional

from .canonical import (
    b64u,
    b64u_decode,
    canonical_json_bytes,
    canonical_json_line,
    load_canonical,
)
from .clock import SystemClock
from .disclosure import DisclosedView, DisclosurePolicy, AttributeMatcher, PartyClass, redact
from .errors import (
    DuplicateReportId,
    MalformedRecord,
    NoActiveKey,
    NotFound,
    UnknownIdentifier,
    UnknownInstanceClass,
)
from .identity import (
    Attribute,
    AttributeCategory,
    AttributeSpecificity,
    AuthorRef,
    IdDocument,
    InstanceIdentifier,
    add_attribute,
    add_link,
    new_id_document,
    parse_identifier,
)
from .lineage import (
    Created,
    FineTuned,
    LineageEvent,
    LineageStore,
    Merged,
    Regenerated,
    Reloaded,
)
from .verifiability import (
    KEY_REVOKED,
    KeyPair,
    PublicKey,
    SignedId,
    TrustStore,
    sign_id,
)

INCIDENT_DB_ATTRIBUTE = "incident-db"
USER_REF_ATTRIBUTE = "user-ref"


class Severity(enum.Enum):
    INFO = "info"
    MINOR = "minor"
    MAJOR = "major"
    CRITICAL = "critical"


@dataclass(frozen=True)
class IncidentReport:
    report_id: str
    identifier: InstanceIdentifier
    reporter: str
    severity: Severity
    description: str
    occurred_at: int
    user_ref: Optional[str] = None

    def to_jsonable(self) -> dict:
        return {
            "description": self.description,
            "identifier": str(self.identifier),
            "occurred_at": self.occurred_at,
            "report_id": self.report_id,
            "reporter": self.reporter,
            "severity": self.severity.value,
            "user_ref": self.user_ref,
        }

    @classmethod
    def from_jsonable(cls, body: Any) -> "IncidentReport":
        try:
            return cls(
                report_id=body["report_id"],
                identifier=parse_identifier(body["identifier"]),
                reporter=body["reporter"],
                severity=Severity(body["severity"]),
                description=body["description"],
                occurred_at=body["occurred_at"],
                user_ref=body.get("user_ref"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(f"bad incident report: {exc}") from exc


SCOPE_KINDS = (
    "instance",
    "user",
    "system",
    "systems",
    "party-class",
    "instance-class",
)


@dataclass(frozen=True)
class IncidentScope:
    """One of six specificity levels an incident query can target."""

    kind: str
    value: str

    def __post_init__(self):
        if self.kind not in SCOPE_KINDS:
            raise MalformedRecord(f"unknown scope kind {self.kind!r}")

    @classmethod
    def instance(cls, identifier: InstanceIdentifier) -> "IncidentScope":
        return cls("instance", str(identifier))

    @classmethod
    def user(cls, user_ref: str) -> "IncidentScope":
        return cls("user", user_ref)

    @classmethod
    def system(cls, system_id: str) -> "IncidentScope":
        return cls("system", system_id)

    @classmethod
    def systems(cls, system_id_prefix: str) -> "IncidentScope":
        return cls("systems", system_id_prefix)

    @classmethod
    def party_class(cls, reporter_class: str) -> "IncidentScope":
        return cls("party-class", reporter_class)

    @classmethod
    def instance_class(cls, predicate_token: str) -> "IncidentScope":
        return cls("instance-class", predicate_token)

    def to_jsonable(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_jsonable(cls, body: Any) -> "IncidentScope":
        try:
            return cls(body["kind"], body["value"])
        except (KeyError, TypeError) as exc:
            raise MalformedRecord(f"bad scope: {exc}") from exc


@dataclass(frozen=True)
class TimeWindow:
    """Inclusive bounds; ``None`` leaves a side open."""

    start: Optional[int] = None
    end: Optional[int] = None

    def contains(self, at: int) -> bool:
        if self.start is not None and at < self.start:
            return False
        if self.end is not None and at > self.end:
            return False
        return True

    def to_jsonable(self) -> dict:
        return {"end": self.end, "start": self.start}

    @classmethod
    def from_jsonable(cls, body: Any) -> "TimeWindow":
        if body is None:
            return cls()
        return cls(body.get("start"), body.get("end"))


OPEN_WINDOW = TimeWindow()


@dataclass(frozen=True)
class RetentionConfig:
    """Seconds each record class stays servable; defaults 365d / 730d."""

    documents: int = 365 * 86400
    incidents: int = 730 * 86400

    def to_jsonable(self) -> dict:
        return {"documents": self.documents, "incidents": self.incidents}

    @classmethod
    def from_jsonable(cls, body: Any) -> "RetentionConfig":
        if body is None:
            return cls()
        return cls(body["documents"], body["incidents"])


def default_disclosure_policy() -> DisclosurePolicy:
    """Auditors and regulators see everything; operational parties see
    certifications and the standing system links but not user context."""
    operational = (
        AttributeMatcher(name="cert:*"),
        AttributeMatcher(name=INCIDENT_DB_ATTRIBUTE),
        AttributeMatcher(name="system-card"),
    )
    return DisclosurePolicy(
        rules={
            PartyClass.AUDITOR: (AttributeMatcher(),),
            PartyClass.REGULATOR: (AttributeMatcher(),),
            PartyClass.SERVICE_PROVIDER: operational,
            PartyClass.USER: operational,
            PartyClass.INSTANCE: operational,
            # PUBLIC intentionally unlisted: default deny hides everything
        }
    )


class Registry:
    """One deployer's registry of record.

    The append-only log is the durability source of truth; the notification
    inbox is transient operational state and deliberately not part of it.
    """

    def __init__(
        self,
        author_id: str,
        clock=None,
        rng: Optional[random.Random] = None,
        retention: Optional[RetentionConfig] = None,
        disclosure_policy: Optional[DisclosurePolicy] = None,
    ):
        self.author_id = author_id
        self.clock = clock or SystemClock()
        self._rng = rng
        self.retention = retention or RetentionConfig()
        self.disclosure_policy = disclosure_policy or default_disclosure_policy()
        self.lineage = LineageStore(rng=rng)
        self.documents: dict[str, SignedId] = {}
        self.incidents: list[IncidentReport] = []
        self.trust = TrustStore()
        self.shutdowns: dict[str, dict] = {}
        self.inbox: list[dict] = []
        self._signing: Optional[KeyPair] = None
        self._nonces: dict[str, str] = {}
        self._instance_classes: dict[str, Callable[[IdDocument], bool]] = {}
        self._log: list[dict] = []
        self._lock = threading.Lock()

    # -- keys ------------------------------------------------------------------

    def install_key(self, keypair: KeyPair) -> None:
        """Register the public half (if new) and sign with this key from now on."""
        if keypair.author_id != self.author_id:
            raise MalformedRecord(
                f"key author {keypair.author_id!r} is not this registry's {self.author_id!r}"
            )
        with self._lock:
            existing = self.trust.lookup(keypair.author_id, keypair.key_id)
            public = keypair.public_key()
            if existing is None:
                self.trust.register_key(keypair.author_id, public)
                self._log.append(
                    {
                        "at": self.clock.now(),
                        "author_id": keypair.author_id,
                        "key": {
                            "key_id": public.key_id,
                            "public": b64u(public.public),
                            "suite": public.suite,
                        },
                        "kind": "register-key",
                    }
                )
            elif existing.key.public != public.public:
                raise MalformedRecord(
                    f"key_id {keypair.key_id!r} already bound to a different key"
                )
            self._signing = keypair

    def register_foreign_key(self, author_id: str, key: PublicKey) -> None:
        with self._lock:
            self.trust.register_key(author_id, key)
            self._log.append(
                {
                    "at": self.clock.now(),
                    "author_id": author_id,
                    "key": {
                        "key_id": key.key_id,
                        "public": b64u(key.public),
                        "suite": key.suite,
                    },
                    "kind": "register-key",
                }
            )

    def revoke_key(self, author_id: str, key_id: str, at: Optional[int] = None) -> None:
        with self._lock:
            stamp = self.clock.now() if at is None else at
            self.trust.revoke_key(author_id, key_id, stamp)
            self._log.append(
                {"at": stamp, "author_id": author_id, "key_id": key_id, "kind": "revoke-key"}
            )

    def active_keypair(self) -> KeyPair:
        if self._signing is None:
            raise NoActiveKey(self.author_id)
        record = self.trust.lookup(self._signing.author_id, self._signing.key_id)
        if record is None or record.status == KEY_REVOKED:
            raise NoActiveKey(f"{self.author_id}: signing key revoked")
        return self._signing

    # -- issuance ----------------------------------------------------------------

    def issue(
        self,
        event: LineageEvent,
        attributes: Iterable[Attribute] = (),
        nonce: Optional[str] = None,
        upstream: Optional[InstanceIdentifier] = None,
    ) -> SignedId:
        """Register the lifecycle event and return a signed ID document.

        Auto-attaches the links the event prescribes plus a standing link to
        the incident database scoped to the system. ``upstream`` records a
        cross-deployer parent (stub lineage node, ancestor and
        upstream-deployer links). Idempotent per client-supplied nonce.
        """
        with self._lock:
            if nonce is not None and nonce in self._nonces:
                return self.documents[self._nonces[nonce]]
            keypair = self.active_keypair()
            at = self.clock.now()

            if isinstance(event, Reloaded):
                key = str(event.original)
                stored = self.documents.get(key)
                if stored is None:
                    raise NotFound(f"no document for reloaded instance {key}")
                lineage_record = self.lineage._build_record(event, at, None)
                self.lineage._apply(lineage_record)
                self._log.append(
                    {
                        "at": at,
                        "kind": "issue",
                        "lineage": lineage_record,
                        "nonce": nonce,
                        "signed": None,
                        "upstream": None,
                    }
                )
                if nonce is not None:
                    self._nonces[nonce] = key
                return stored

            lineage_record = self.lineage._build_record(event, at, None)
            identifier = self.lineage._apply(lineage_record)
            external_record = None
            if upstream is not None:
                external_record = {
                    "at": at,
                    "child": str(identifier),
                    "kind": "external-link",
                    "parent": str(upstream),
                }
                self.lineage._apply(external_record)

            doc = new_id_document(identifier, AuthorRef(self.author_id, keypair.key_id), at)
            doc = self._attach_auto_links(doc, event, upstream)
            doc = self._attach_auto_attributes(doc, event)
            for attr in attributes:
                doc = add_attribute(doc, attr, rng=self._rng)
            signed = sign_id(doc, keypair, trust_store=self.trust)

            key = str(identifier)
            self.documents[key] = signed
            if nonce is not None:
                self._nonces[nonce] = key
            self._log.append(
                {
                    "at": at,
                    "external": external_record,
                    "kind": "issue",
                    "lineage": lineage_record,
                    "nonce": nonce,
                    "signed": signed.to_jsonable(),
                    "upstream": str(upstream) if upstream else None,
                }
            )
            return signed

    def _attach_auto_links(
        self,
        doc: IdDocument,
        event: LineageEvent,
        upstream: Optional[InstanceIdentifier],
    ) -> IdDocument:
        if isinstance(event, Regenerated):
            doc = add_link(doc, "ancestor", event.parent)
        elif isinstance(event, Merged):
            for constituent in event.constituents:
                doc = add_link(doc, "constituent", constituent)
        elif isinstance(event, FineTuned):
            doc = add_link(
                doc, "base-system", InstanceIdentifier(event.base_system_id, "_system")
            )
        if upstream is not None:
            doc = add_link(doc, "ancestor", upstream)
            doc = add_link(doc, "upstream-deployer", upstream)
        return doc

    def _attach_auto_attributes(self, doc: IdDocument, event: LineageEvent) -> IdDocument:
        system_id = doc.identifier.system_id
        doc = add_attribute(
            doc,
            Attribute.linked(
                INCIDENT_DB_ATTRIBUTE,
                f"registry://{self.author_id}/incidents?scope=system&system={system_id}",
                AttributeCategory.BEHAVIOUR,
                AttributeSpecificity.SYSTEM,
            ),
            rng=self._rng,
        )
        if isinstance(event, Created) and event.user_ref:
            doc = add_attribute(
                doc,
                Attribute.inline_bytes(
                    USER_REF_ATTRIBUTE,
                    event.user_ref.encode("utf-8"),
                    AttributeCategory.CONTEXT,
                    AttributeSpecificity.USER,
                    media_type="text/plain",
                ),
                rng=self._rng,
            )
        return doc

    # -- incidents ----------------------------------------------------------------

    def report_incident(self, report: IncidentReport) -> None:
        with self._lock:
            if any(r.report_id == report.report_id for r in self.incidents):
                raise DuplicateReportId(report.report_id)
            if str(report.identifier) not in self.lineage.nodes():
                raise UnknownIdentifier(str(report.identifier))
            self.incidents.append(report)
            self._log.append(
                {"at": self.clock.now(), "kind": "incident", "report": report.to_jsonable()}
            )

    def register_instance_class(
        self, token: str, predicate: Callable[[IdDocument], bool]
    ) -> None:
        self._instance_classes[token] = predicate

    def _matches_scope(self, report: IncidentReport, scope: IncidentScope) -> bool:
        if scope.kind == "instance":
            return str(report.identifier) == scope.value
        if scope.kind == "user":
            return report.user_ref is not None and report.user_ref == scope.value
        if scope.kind == "system":
            return report.identifier.system_id == scope.value
        if scope.kind == "systems":
            return report.identifier.system_id.startswith(scope.value)
        if scope.kind == "party-class":
            # reporter tokens follow the "<class>.<name>" convention
            return report.reporter.split(".", 1)[0] == scope.value
        if scope.kind == "instance-class":
            predicate = self._instance_classes.get(scope.value)
            if predicate is None:
                raise UnknownInstanceClass(scope.value)
            signed = self.documents.get(str(report.identifier))
            return signed is not None and predicate(signed.doc)
        raise MalformedRecord(f"unknown scope kind {scope.kind!r}")

    def query_incidents(
        self, scope: IncidentScope, window: TimeWindow = OPEN_WINDOW
    ) -> list[IncidentReport]:
        """Reports matching the scope, retention-filtered, ordered by
        (occurred_at, report_id)."""
        horizon = self.clock.now() - self.retention.incidents
        hits = [
            report
            for report in self.incidents
            if report.occurred_at >= horizon
            and window.contains(report.occurred_at)
            and self._matches_scope(report, scope)
        ]
        return sorted(hits, key=lambda r: (r.occurred_at, r.report_id))

    # -- documents and lineage ------------------------------------------------------

    def get_id(self, identifier: InstanceIdentifier) -> SignedId:
        signed = self.documents.get(str(identifier))
        if signed is None:
            raise NotFound(str(identifier), detail="unknown")
        if signed.doc.created_at < self.clock.now() - self.retention.documents:
            raise NotFound(str(identifier), detail="expired")
        return signed

    def get_view(self, identifier: InstanceIdentifier, party: PartyClass) -> DisclosedView:
        signed = self.get_id(identifier)
        return redact(signed, self.disclosure_policy, party)

    def get_lineage(
        self, identifier: InstanceIdentifier, direction: str
    ) -> list[tuple[InstanceIdentifier, bool]]:
        """Related identifiers with their cross-deployer (external) marker."""
        if direction not in ("ancestors", "descendants"):
            raise MalformedRecord(f"bad direction {direction!r}")
        related = (
            self.lineage.ancestors(identifier)
            if direction == "ancestors"
            else self.lineage.descendants(identifier)
        )
        return sorted(
            ((ident, self.lineage.is_external(ident)) for ident in related),
            key=lambda pair: str(pair[0]),
        )

    # -- shutdown marker --------------------------------------------------------------

    def mark_shutdown(self, identifier: InstanceIdentifier, reason: str) -> None:
        with self._lock:
            if str(identifier) not in self.lineage.nodes():
                raise UnknownIdentifier(str(identifier))
            at = self.clock.now()
            self.shutdowns[str(identifier)] = {"at": at, "reason": reason}
            self._log.append(
                {
                    "at": at,
                    "identifier": str(identifier),
                    "kind": "shutdown",
                    "reason": reason,
                }
            )

    def is_shut_down(self, identifier: InstanceIdentifier) -> bool:
        return str(identifier) in self.shutdowns

    # -- notifications (transient) ------------------------------------------------------

    def notify(self, payload: dict) -> None:
        self.inbox.append(payload)

    # -- persistence ---------------------------------------------------------------------

    def log_lines(self) -> bytes:
        return b"".join(canonical_json_line(record) for record in self._log)

    def canonical_state_bytes(self) -> bytes:
        body = {
            "documents": {
                key: self.documents[key].to_jsonable() for key in sorted(self.documents)
            },
            "incidents": [report.to_jsonable() for report in self.incidents],
            "lineage": self.lineage.state_jsonable(),
            "nonces": dict(sorted(self._nonces.items())),
            "retention": self.retention.to_jsonable(),
            "shutdowns": {
                key: self.shutdowns[key] for key in sorted(self.shutdowns)
            },
            "trust": self.trust.to_jsonable(),
        }
        return canonical_json_bytes(body)

    @classmethod
    def replay(
        cls,
        log_data: bytes,
        author_id: str,
        clock=None,
        rng: Optional[random.Random] = None,
        retention: Optional[RetentionConfig] = None,
        disclosure_policy: Optional[DisclosurePolicy] = None,
    ) -> "Registry":
        """Reconstruct a registry from its newline-delimited event log."""
        registry = cls(
            author_id,
            clock=clock,
            rng=rng,
            retention=retention,
            disclosure_policy=disclosure_policy,
        )
        for line in log_data.splitlines():
            if not line.strip():
                continue
            record = load_canonical(line)
            registry._apply_log_record(record)
        return registry

    def _apply_log_record(self, record: dict) -> None:
        kind = record.get("kind")
        if kind == "register-key":
            key = PublicKey(
                suite=record["key"]["suite"],
                key_id=record["key"]["key_id"],
                public=b64u_decode(record["key"]["public"]),
            )
            self.trust.register_key(record["author_id"], key)
        elif kind == "revoke-key":
            self.trust.revoke_key(record["author_id"], record["key_id"], record["at"])
        elif kind == "issue":
            self.lineage.apply_record(record["lineage"])
            if record.get("external"):
                self.lineage.apply_record(record["external"])
            if record["signed"] is not None:
                signed = SignedId.from_jsonable(record["signed"])
                self.documents[str(signed.doc.identifier)] = signed
                if record.get("nonce"):
                    self._nonces[record["nonce"]] = str(signed.doc.identifier)
            elif record.get("nonce"):
                self._nonces[record["nonce"]] = record["lineage"]["identifier"]
        elif kind == "incident":
            self.incidents.append(IncidentReport.from_jsonable(record["report"]))
        elif kind == "shutdown":
            self.shutdowns[record["identifier"]] = {
                "at": record["at"],
                "reason": record["reason"],
            }
        else:
            raise MalformedRecord(f"unknown log record kind {kind!r}")
        self._log.append(record)
