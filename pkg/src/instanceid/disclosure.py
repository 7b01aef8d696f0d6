"""Verifiable redacted views: different party classes see different subsets.

Hidden attributes appear only as (name, salted digest) commitments; the
original signature still verifies because it covers the digest form, which
is reconstructible from any honest redaction. Policies are declarative
matcher lists so they can ship as fixture files; unlisted party classes get
nothing (default deny).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fnmatch import fnmatchcase
from typing import Any, Optional, Union

from .canonical import b64u, b64u_decode, canonical_json_bytes, load_canonical
from .errors import InvalidDocument, MalformedRecord, UnverifiedInput
from .identity import (
    Attribute,
    AttributeCategory,
    AttributeSpecificity,
    AuthorRef,
    IdDocument,
    InstanceIdentifier,
    Link,
    attribute_digest,
    parse_identifier,
)
from .verifiability import (
    Signature,
    SignedId,
    TrustStore,
    VerificationReport,
    Verdict,
    _verify_signature,
    verify_id,
)


class PartyClass(enum.Enum):
    USER = "user"
    SERVICE_PROVIDER = "service-provider"
    INSTANCE = "instance"
    AUDITOR = "auditor"
    REGULATOR = "regulator"
    PUBLIC = "public"


@dataclass(frozen=True)
class AttributeMatcher:
    """All present constraints must hold; an empty matcher matches everything."""

    name: Optional[str] = None  # fnmatch pattern over the attribute name
    category: Optional[AttributeCategory] = None
    specificity: Optional[AttributeSpecificity] = None

    def matches(self, attr: Attribute) -> bool:
        if self.name is not None and not fnmatchcase(attr.name, self.name):
            return False
        if self.category is not None and attr.category is not self.category:
            return False
        if self.specificity is not None and attr.specificity is not self.specificity:
            return False
        return True

    def to_jsonable(self) -> dict:
        return {
            "category": self.category.value if self.category else None,
            "name": self.name,
            "specificity": self.specificity.value if self.specificity else None,
        }

    @classmethod
    def from_jsonable(cls, body: Any) -> "AttributeMatcher":
        return cls(
            name=body.get("name"),
            category=AttributeCategory(body["category"]) if body.get("category") else None,
            specificity=(
                AttributeSpecificity(body["specificity"])
                if body.get("specificity")
                else None
            ),
        )


@dataclass(frozen=True)
class DisclosurePolicy:
    """party class -> matchers revealing an attribute; default-deny otherwise."""

    rules: dict[PartyClass, tuple[AttributeMatcher, ...]]

    def allows(self, party: PartyClass, attr: Attribute) -> bool:
        matchers = self.rules.get(party)
        if not matchers:
            return False
        return any(matcher.matches(attr) for matcher in matchers)

    @classmethod
    def reveal_all(cls, *parties: PartyClass) -> "DisclosurePolicy":
        return cls(rules={party: (AttributeMatcher(),) for party in parties})

    def to_jsonable(self) -> dict:
        return {
            party.value: [m.to_jsonable() for m in matchers]
            for party, matchers in sorted(self.rules.items(), key=lambda kv: kv[0].value)
        }

    @classmethod
    def from_jsonable(cls, body: Any) -> "DisclosurePolicy":
        try:
            return cls(
                rules={
                    PartyClass(party): tuple(
                        AttributeMatcher.from_jsonable(m) for m in matchers
                    )
                    for party, matchers in body.items()
                }
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(f"bad disclosure policy: {exc}") from exc


@dataclass(frozen=True)
class RevealedEntry:
    attribute: Attribute  # salt included; needed to recompute the commitment
    digest: bytes


@dataclass(frozen=True)
class HiddenEntry:
    name: str
    digest: bytes


ViewEntry = Union[RevealedEntry, HiddenEntry]


@dataclass(frozen=True)
class DisclosedView:
    """A redaction of a signed ID; entries keep document order so the
    signing bytes can be reconstructed."""

    identifier: InstanceIdentifier
    author: Optional[AuthorRef]
    created_at: int
    entries: tuple[ViewEntry, ...]
    links: tuple[Link, ...]
    signature: Signature
    hash_suite: str = "sha-256"

    @property
    def revealed(self) -> tuple[RevealedEntry, ...]:
        return tuple(e for e in self.entries if isinstance(e, RevealedEntry))

    @property
    def hidden(self) -> tuple[HiddenEntry, ...]:
        return tuple(e for e in self.entries if isinstance(e, HiddenEntry))

    def revealed_attribute(self, name: str) -> Attribute:
        for entry in self.revealed:
            if entry.attribute.name == name:
                return entry.attribute
        raise KeyError(name)

    def to_jsonable(self) -> dict:
        entries = []
        for entry in self.entries:
            if isinstance(entry, RevealedEntry):
                attr_body = entry.attribute.payload_jsonable()
                attr_body["salt"] = b64u(entry.attribute.salt)
                entries.append(
                    {
                        "attribute": attr_body,
                        "digest": b64u(entry.digest),
                        "kind": "revealed",
                    }
                )
            else:
                # structurally nothing but the commitment leaves the redactor
                entries.append(
                    {
                        "digest": b64u(entry.digest),
                        "kind": "hidden",
                        "name": entry.name,
                    }
                )
        return {
            "author": (
                {"author_id": self.author.author_id, "key_id": self.author.key_id}
                if self.author
                else None
            ),
            "created_at": self.created_at,
            "entries": entries,
            "hash_suite": self.hash_suite,
            "identifier": str(self.identifier),
            "links": [
                {"relation": link.relation, "target": str(link.target)}
                for link in self.links
            ],
            "signature": self.signature.to_jsonable(),
        }

    @classmethod
    def from_jsonable(cls, body: Any) -> "DisclosedView":
        try:
            entries: list[ViewEntry] = []
            for item in body["entries"]:
                if item["kind"] == "revealed":
                    attr_body = dict(item["attribute"])
                    attr = _attr_from_view(attr_body)
                    entries.append(RevealedEntry(attr, b64u_decode(item["digest"])))
                elif item["kind"] == "hidden":
                    entries.append(
                        HiddenEntry(item["name"], b64u_decode(item["digest"]))
                    )
                else:
                    raise MalformedRecord(f"unknown entry kind {item['kind']!r}")
            author = None
            if body["author"] is not None:
                author = AuthorRef(body["author"]["author_id"], body["author"]["key_id"])
            return cls(
                identifier=parse_identifier(body["identifier"]),
                author=author,
                created_at=body["created_at"],
                entries=tuple(entries),
                links=tuple(
                    Link(l["relation"], parse_identifier(l["target"]))
                    for l in body["links"]
                ),
                signature=Signature.from_jsonable(body["signature"]),
                hash_suite=body["hash_suite"],
            )
        except MalformedRecord:
            raise
        except (KeyError, TypeError, ValueError, InvalidDocument) as exc:
            raise MalformedRecord(f"bad disclosed view: {exc}") from exc

    def to_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_jsonable())

    @classmethod
    def from_bytes(cls, data: bytes) -> "DisclosedView":
        return cls.from_jsonable(load_canonical(data))


def _attr_from_view(body: dict) -> Attribute:
    from .identity import _attr_from_jsonable

    return _attr_from_jsonable(body)


def redact(
    signed: SignedId,
    policy: DisclosurePolicy,
    party: PartyClass,
    trust_store: Optional[TrustStore] = None,
    at: Optional[int] = None,
) -> DisclosedView:
    """Produce the view ``party`` is entitled to under ``policy``.

    Pass a trust store to enforce the verified-input precondition; the
    signature is carried unchanged either way.
    """
    if trust_store is not None:
        reference = signed.doc.created_at if at is None else at
        report = verify_id(signed, trust_store, reference)
        if not report.ok:
            raise UnverifiedInput(report.verdict.value)
    entries: list[ViewEntry] = []
    for attr in signed.doc.attributes:
        digest = attribute_digest(attr)
        if policy.allows(party, attr):
            entries.append(RevealedEntry(attr, digest))
        else:
            entries.append(HiddenEntry(attr.name, digest))
    return DisclosedView(
        identifier=signed.doc.identifier,
        author=signed.doc.author,
        created_at=signed.doc.created_at,
        entries=tuple(entries),
        links=signed.doc.links,
        signature=signed.signature,
        hash_suite=signed.doc.hash_suite,
    )


def view_signing_bytes(view: DisclosedView) -> bytes:
    """Rebuild the digest-form canonical bytes the original signature covers.

    Revealed entries contribute a freshly recomputed commitment, hidden
    entries the carried one, in entry (= document) order.
    """
    if view.author is None:
        raise InvalidDocument("view does not disclose the author")
    attrs = []
    for entry in view.entries:
        if isinstance(entry, RevealedEntry):
            attrs.append(
                {
                    "digest": b64u(attribute_digest(entry.attribute)),
                    "name": entry.attribute.name,
                }
            )
        else:
            attrs.append({"digest": b64u(entry.digest), "name": entry.name})
    body = {
        "attributes": attrs,
        "author": {"author_id": view.author.author_id, "key_id": view.author.key_id},
        "created_at": view.created_at,
        "hash_suite": view.hash_suite,
        "identifier": str(view.identifier),
        "links": [
            {"relation": link.relation, "target": str(link.target)}
            for link in view.links
        ],
    }
    return canonical_json_bytes(body)


def verify_view(
    view: DisclosedView, trust_store: TrustStore, at: int
) -> VerificationReport:
    """Recompute revealed commitments, rebuild the signing bytes, check the
    signature. Altered revealed content surfaces as a digest mismatch before
    the signature is even consulted."""
    if view.author is None:
        return VerificationReport(Verdict.MALFORMED, "author not disclosed")
    names = [
        e.attribute.name if isinstance(e, RevealedEntry) else e.name
        for e in view.entries
    ]
    if len(set(names)) != len(names):
        return VerificationReport(Verdict.MALFORMED, "duplicate attribute names")
    for entry in view.revealed:
        attr = entry.attribute
        if attr.salt is None:
            return VerificationReport(Verdict.MALFORMED, f"{attr.name}: no salt")
        if attribute_digest(attr) != entry.digest:
            return VerificationReport(
                Verdict.DIGEST_MISMATCH, f"attribute {attr.name!r}"
            )
    try:
        message = view_signing_bytes(view)
    except InvalidDocument as exc:
        return VerificationReport(Verdict.MALFORMED, str(exc))
    return _verify_signature(view.author, view.signature, message, trust_store, at)
